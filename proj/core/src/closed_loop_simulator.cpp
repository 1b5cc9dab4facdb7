#include "pmsg/closed_loop_simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "pmsg/error.hpp"
#include "pmsg/steady_state_optimizer.hpp"

namespace pmsg {

StepProfile::StepProfile(std::vector<Breakpoint> points) : points_(std::move(points)) {
  std::stable_sort(points_.begin(), points_.end(),
                   [](const Breakpoint& a, const Breakpoint& b) { return a.start < b.start; });
}

double StepProfile::at(double t) const {
  if (points_.empty()) throw Error(ErrorCode::kInvalidArgument, "empty profile");
  double v = points_.front().value;
  for (const Breakpoint& p : points_) {
    if (p.start <= t) v = p.value;
    else break;
  }
  return v;
}

namespace {

// Integer number of `step`s in `period`, or 0 when not an integer multiple.
long ratio_of(double period, double step) {
  const double r = period / step;
  const double n = std::round(r);
  return std::abs(r - n) < 1e-6 * std::max(1.0, n) && n >= 1.0 ? static_cast<long>(n) : 0;
}

// Piecewise-constant profile resolved on the integrator grid: a breakpoint
// takes effect on the tick nearest to its start time.
class TickProfile {
 public:
  TickProfile(const StepProfile& p, double h) {
    for (const Breakpoint& b : p.points()) points_.emplace_back(std::llround(b.start / h), b.value);
  }
  double at(long n) const {
    double v = points_.front().second;
    for (const auto& [tick, value] : points_) {
      if (tick <= n) v = value;
      else break;
    }
    return v;
  }

 private:
  std::vector<std::pair<long, double>> points_;
};

}  // namespace

void Scenario::validate() const {
  machine.validate();
  dc_link.validate();
  nmpc.validate();
  if (speed_rpm.empty() || load_power.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "speed and load profiles must be given");
  }
  if (speed_rpm.points().front().start > 0.0 || load_power.points().front().start > 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "profiles must start at t = 0");
  }
  for (const Breakpoint& p : speed_rpm.points()) {
    if (!(p.value >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "speed must be >= 0 rpm");
  }
  if (!(duration > 0.0)) throw Error(ErrorCode::kInvalidArgument, "duration must be positive");
  if (!(integrator_step > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "integrator step must be positive");
  }
  if (fidelity == Fidelity::kAveraged && integrator_step > inner.sample_time / 5.0 * (1.0 + 1e-9)) {
    throw Error(ErrorCode::kInvalidArgument, "averaged mode needs integrator step <= T_s-i / 5");
  }
  if (fidelity == Fidelity::kSwitched) {
    if (!(f_sw > 0.0)) throw Error(ErrorCode::kInvalidArgument, "f_sw must be positive");
    if (integrator_step > 1.0 / (25.0 * f_sw) * (1.0 + 1e-9)) {
      throw Error(ErrorCode::kInvalidArgument, "switched mode needs integrator step <= 1/(25 f_sw)");
    }
  }
  if (ratio_of(inner.sample_time, integrator_step) == 0) {
    throw Error(ErrorCode::kInvalidArgument, "T_s-i must be an integer multiple of the integrator step");
  }
  if (ratio_of(nmpc.t_s, inner.sample_time) == 0) {
    throw Error(ErrorCode::kInvalidArgument, "T_s-o must be an integer multiple of T_s-i");
  }
}

Vec3 sine_pwm(const Vec3& duty_abc, double carrier_phase) {
  const double phase = carrier_phase - std::floor(carrier_phase);
  const double carrier = std::abs(4.0 * phase - 2.0) - 1.0;
  Vec3 s{};
  for (int i = 0; i < 3; ++i) s[i] = duty_abc[i] >= carrier ? 1.0 : -1.0;
  return s;
}

double pwm_on_fraction(double duty, double phase_begin, double phase_end) {
  const double span = phase_end - phase_begin;
  if (!(span > 0.0)) return duty >= 1.0 ? 1.0 : 0.0;
  const double d = std::clamp(duty, -1.0, 1.0);
  // Within one period the leg is high on (0.5 - w, 0.5 + w).
  const double w = 0.25 * (d + 1.0);
  auto on_time_until = [w](double phase) {
    // Cumulative on-time from phase 0 to `phase` (phase may exceed 1).
    const double whole = std::floor(phase);
    const double frac = phase - whole;
    const double within = std::clamp(frac - (0.5 - w), 0.0, 2.0 * w);
    return whole * 2.0 * w + within;
  };
  return (on_time_until(phase_end) - on_time_until(phase_begin)) / span;
}

EquilibriumInput find_equilibrium_integrator(const MachineParams& mp, const DcLinkParams& dp,
                                             const NmpcConfig& cfg, double i_load,
                                             double omega_r) {
  EquilibriumInput out;
  std::optional<OcpSolution> memory;
  const double v = cfg.v_dc_ref;
  auto residual = [&](double e) {
    const ReducedState x0{v, e};
    OcpSolution sol = build_and_solve_ocp(x0, i_load, omega_r, cfg, mp, dp,
                                          memory ? &*memory : nullptr);
    ++out.solves;
    memory = sol;
    out.u = sol.u_sequence.front();
    return reduced_dynamics(x0, out.u, i_load, omega_r, mp, dp).dv_dc;
  };
  const double tol = 1e-6 * (std::abs(i_load) / dp.c + v / (dp.r * dp.c)) + 1e-6;

  double a = 0.0;
  double fa = residual(a);
  if (std::abs(fa) <= tol) {
    out.e_int = a;
    return out;
  }
  // Larger integrator values push the controller to inject more power.
  double step = fa < 0.0 ? 0.05 : -0.05;
  double b = a + step;
  double fb = residual(b);
  for (int i = 0; i < 40 && fa * fb > 0.0; ++i) {
    a = b;
    fa = fb;
    step *= 2.0;
    b = a + step;
    fb = residual(b);
  }
  if (fa * fb > 0.0) {
    throw Error(ErrorCode::kInfeasible, "no integrator value balances the requested load");
  }
  // Illinois variant of regula falsi.
  int side = 0;
  double c = b, fc = fb;
  for (int i = 0; i < 100; ++i) {
    c = (a * fb - b * fa) / (fb - fa);
    fc = residual(c);
    if (std::abs(fc) <= tol) break;
    if (fc * fb > 0.0) {
      b = c;
      fb = fc;
      if (side == -1) fa *= 0.5;
      side = -1;
    } else {
      a = c;
      fa = fc;
      if (side == 1) fb *= 0.5;
      side = 1;
    }
  }
  // Final solve at c so that out.u matches out.e_int.
  residual(c);
  out.e_int = c;
  return out;
}

namespace {

struct PlantInput {
  Fidelity fidelity;
  DutyCycles duty;     // held dq duty
  double carrier_begin;  // carrier phase at start of the step
  double carrier_end;
  double load_power;
  double omega_r;
};

PlantDerivative evaluate(const PlantState& s, const PlantInput& in, const MachineParams& mp,
                         const DcLinkParams& dp) {
  const OperatingPoint op{in.omega_r, in.omega_r * 2.0 / mp.poles, in.load_power / s.v_dc};
  if (in.fidelity == Fidelity::kAveraged) return plant_derivatives(s, in.duty, op, mp, dp);
  // Switched: step-averaged leg voltages from the carrier comparison, with the abc
  // references synthesized from the live rotor angle.
  const Vec3 d_abc = inverse_park({in.duty.d_d, in.duty.d_q, 0.0}, s.theta_r);
  Vec3 leg{};
  for (int i = 0; i < 3; ++i) {
    const double on = pwm_on_fraction(std::clamp(d_abc[i], -1.0, 1.0), in.carrier_begin, in.carrier_end);
    leg[i] = (2.0 * on - 1.0) * 0.5 * s.v_dc;
  }
  const Vec3 v_dq0 = park_transform(leg, s.theta_r);
  return plant_derivatives_from_voltage(s, {v_dq0[0], v_dq0[1]}, op, mp, dp);
}

PlantState advance(const PlantState& s, const PlantDerivative& d, double h) {
  return {s.v_dc + h * d.dv_dc, s.i_d + h * d.di_d, s.i_q + h * d.di_q, s.theta_r + h * d.dtheta_r};
}

PlantState rk4(const PlantState& s, const PlantInput& in, double h, const MachineParams& mp,
               const DcLinkParams& dp) {
  const PlantDerivative k1 = evaluate(s, in, mp, dp);
  const PlantDerivative k2 = evaluate(advance(s, k1, 0.5 * h), in, mp, dp);
  const PlantDerivative k3 = evaluate(advance(s, k2, 0.5 * h), in, mp, dp);
  const PlantDerivative k4 = evaluate(advance(s, k3, h), in, mp, dp);
  PlantState n;
  n.v_dc = s.v_dc + h / 6.0 * (k1.dv_dc + 2.0 * k2.dv_dc + 2.0 * k3.dv_dc + k4.dv_dc);
  n.i_d = s.i_d + h / 6.0 * (k1.di_d + 2.0 * k2.di_d + 2.0 * k3.di_d + k4.di_d);
  n.i_q = s.i_q + h / 6.0 * (k1.di_q + 2.0 * k2.di_q + 2.0 * k3.di_q + k4.di_q);
  n.theta_r = wrap_angle(s.theta_r + h * in.omega_r);
  return n;
}

}  // namespace

Trace run_closed_loop(const Scenario& sc) {
  sc.validate();
  const MachineParams& mp = sc.machine;
  const DcLinkParams& dp = sc.dc_link;
  const double h = sc.integrator_step;
  const long per_inner = ratio_of(sc.inner.sample_time, h);
  const long per_outer = per_inner * ratio_of(sc.nmpc.t_s, sc.inner.sample_time);
  const long total = static_cast<long>(std::llround(sc.duration / h));

  CurrentController inner(mp, sc.inner);
  NmpcController outer(mp, dp, sc.nmpc);

  PlantState x = sc.initial;
  if (sc.settled_start) {
    const double w0 = rpm_to_electrical(sc.speed_rpm.at(0.0), mp.poles).omega_r;
    const double v0 = sc.nmpc.v_dc_ref;
    const double i_load0 = sc.load_power.at(0.0) / v0;
    x = PlantState{v0, 0.0, 0.0, 0.0};
    if (w0 > 0.0) {
      const EquilibriumInput eq = find_equilibrium_integrator(mp, dp, sc.nmpc, i_load0, w0);
      x.i_d = eq.u.i_d;
      x.i_q = eq.u.i_q;
      outer.reset(eq.u, eq.e_int);
    } else {
      outer.reset({}, 0.0);
    }
  } else {
    outer.reset({x.i_d, x.i_q}, 0.0);
  }
  inner.set_reference(x.i_d, x.i_q);

  Trace trace;
  trace.sample_period = sc.inner.sample_time;
  trace.rows.reserve(static_cast<std::size_t>(total / per_inner + 1));

  NmpcStepResult last_outer;
  InnerControlOutput last_inner;
  const double v_hi = 2.0 * dp.v_dc_max;
  const double carrier_per_step = h * sc.f_sw;

  const TickProfile speed(sc.speed_rpm, h);
  const TickProfile load(sc.load_power, h);
  for (long n = 0; n <= total; ++n) {
    const double t = static_cast<double>(n) * h;
    if (!(x.v_dc > kDefaultVoltageFloor && x.v_dc < v_hi) || !std::isfinite(x.i_d) ||
        !std::isfinite(x.i_q)) {
      throw Error(ErrorCode::kSimulationDiverged,
                  "v_dc = " + std::to_string(x.v_dc) + " V at t = " + std::to_string(t) + " s");
    }
    const double omega_r = rpm_to_electrical(speed.at(n), mp.poles).omega_r;
    const double p_load = load.at(n);

    if (n % per_outer == 0) {
      last_outer = outer.step(x.v_dc, p_load / x.v_dc, omega_r);
      inner.set_reference(last_outer.reference.i_d, last_outer.reference.i_q);
    }
    if (n % per_inner == 0) {
      last_inner = inner.step({x.i_d, x.i_q}, omega_r, x.v_dc);
      TraceRow row;
      row.time = t;
      row.v_dc = x.v_dc;
      row.i_d = x.i_d;
      row.i_q = x.i_q;
      row.i_d_ref = inner.state().i_d_ref;
      row.i_q_ref = inner.state().i_q_ref;
      row.d_d = last_inner.duty.d_d;
      row.d_q = last_inner.duty.d_q;
      row.i_abc = inverse_park({x.i_d, x.i_q, 0.0}, x.theta_r);
      row.d_abc = inverse_park({row.d_d, row.d_q, 0.0}, x.theta_r);
      row.i_load = p_load / x.v_dc;
      row.p_e = electrical_power(x.i_d, x.i_q, omega_r, mp);
      row.omega_r = omega_r;
      row.e_int = outer.e_int();
      row.nmpc_iterations = last_outer.iterations;
      row.nmpc_kkt = last_outer.kkt_residual;
      row.nmpc_converged = last_outer.converged;
      row.nmpc_relaxed = last_outer.relaxed;
      row.nmpc_held = last_outer.held_previous;
      row.ellipse_active = last_outer.ellipse_active;
      row.max_slack = last_outer.max_slack;
      row.inner_saturated = last_inner.saturated;
      trace.rows.push_back(row);
    }
    if (n == total) break;

    PlantInput in;
    in.fidelity = sc.fidelity;
    in.duty = last_inner.duty;
    in.carrier_begin = static_cast<double>(n) * carrier_per_step;
    in.carrier_end = static_cast<double>(n + 1) * carrier_per_step;
    in.load_power = p_load;
    in.omega_r = omega_r;
    try {
      x = rk4(x, in, h, mp, dp);
    } catch (const Error& e) {
      throw Error(ErrorCode::kSimulationDiverged, e.what());
    }
  }
  return trace;
}

Metrics compute_metrics(const Trace& trace, const Scenario& sc) {
  if (trace.rows.empty()) throw Error(ErrorCode::kSegmentTooShort, "empty trace");
  Metrics m;
  m.scenario = sc.name;
  const double v_ref = sc.nmpc.v_dc_ref;
  const double band = 0.01 * v_ref;

  std::set<double> cuts{0.0, sc.duration};
  for (const Breakpoint& p : sc.load_power.points())
    if (p.start > 0.0 && p.start < sc.duration) cuts.insert(p.start);
  for (const Breakpoint& p : sc.speed_rpm.points())
    if (p.start > 0.0 && p.start < sc.duration) cuts.insert(p.start);
  const std::vector<double> edges(cuts.begin(), cuts.end());

  m.v_dc_min = m.v_dc_max = trace.rows.front().v_dc;
  for (const TraceRow& r : trace.rows) {
    m.v_dc_min = std::min(m.v_dc_min, r.v_dc);
    m.v_dc_max = std::max(m.v_dc_max, r.v_dc);
    m.saturated_samples += r.inner_saturated ? 1 : 0;
  }
  // NMPC diagnostics repeat on every inner sample of an outer period; count once per period.
  const long per_outer = std::max(1L, std::lround(sc.nmpc.t_s / trace.sample_period));
  for (std::size_t i = 0; i < trace.rows.size(); i += static_cast<std::size_t>(per_outer)) {
    const TraceRow& r = trace.rows[i];
    m.nmpc_unconverged += r.nmpc_converged ? 0 : 1;
    m.nmpc_relaxed += r.nmpc_relaxed ? 1 : 0;
    m.nmpc_held += r.nmpc_held ? 1 : 0;
  }

  for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
    SegmentMetrics seg;
    seg.start = edges[s];
    seg.end = edges[s + 1];
    seg.load_power = sc.load_power.at(seg.start);
    seg.speed_rpm = sc.speed_rpm.at(seg.start);
    const double settle_from = seg.end - 0.2 * (seg.end - seg.start);

    // Row times are multiples of the sample period; compare with half a period of slack.
    const double eps = 0.5 * trace.sample_period;
    const bool last = s + 2 == edges.size();
    std::vector<const TraceRow*> rows;
    for (const TraceRow& r : trace.rows) {
      if (r.time > seg.start - eps && (r.time < seg.end - eps || (last && r.time < seg.end + eps))) {
        rows.push_back(&r);
      }
    }
    std::vector<const TraceRow*> settled;
    for (const TraceRow* r : rows)
      if (r->time > settle_from - eps) settled.push_back(r);
    if (settled.size() < 2) {
      throw Error(ErrorCode::kSegmentTooShort,
                  "segment starting at " + std::to_string(seg.start) + " s has no settled window");
    }

    seg.v_dc_min = seg.v_dc_max = rows.front()->v_dc;
    double last_outside = -1.0;
    for (const TraceRow* r : rows) {
      seg.v_dc_min = std::min(seg.v_dc_min, r->v_dc);
      seg.v_dc_max = std::max(seg.v_dc_max, r->v_dc);
      if (std::abs(r->v_dc - v_ref) > band) last_outside = r->time;
    }
    seg.settled = last_outside < settle_from;
    seg.settling_time =
        last_outside < 0.0 ? 0.0 : last_outside + trace.sample_period - seg.start;

    double sum_id = 0.0, sum_iq = 0.0, sum_v = 0.0, sum_i2 = 0.0, sum_ell = 0.0;
    for (const TraceRow* r : settled) {
      sum_id += r->i_d;
      sum_iq += r->i_q;
      sum_v += r->v_dc;
      sum_i2 += r->i_abc[0] * r->i_abc[0];
      seg.v_dc_settled_error = std::max(seg.v_dc_settled_error, std::abs(r->v_dc - v_ref));
      for (double d : r->d_abc) seg.peak_duty_abc = std::max(seg.peak_duty_abc, std::abs(d));
      sum_ell += voltage_ellipse_lhs(r->i_d, r->i_q, r->omega_r, sc.machine) /
                 (0.25 * r->v_dc * r->v_dc);
    }
    const double cnt = static_cast<double>(settled.size());
    seg.i_d = sum_id / cnt;
    seg.i_q = sum_iq / cnt;
    seg.v_dc_mean = sum_v / cnt;
    seg.rms_phase_current = std::sqrt(sum_i2 / cnt);
    seg.ellipse_ratio = sum_ell / cnt;
    seg.ellipse_binding = std::abs(seg.ellipse_ratio - 1.0) < 0.01;

    const double omega_r = rpm_to_electrical(seg.speed_rpm, sc.machine.poles).omega_r;
    if (omega_r > 0.0) {
      StaticProblem prob;
      prob.mp = sc.machine;
      prob.omega_r = omega_r;
      prob.v_dc = seg.v_dc_mean;
      prob.p_e = -(seg.v_dc_mean * seg.v_dc_mean / sc.dc_link.r + seg.load_power);
      const StaticSolution opt = solve_static(prob);
      seg.optimum_i_d = opt.i_d;
      seg.optimum_i_q = opt.i_q;
      const double n_opt = std::sqrt(opt.norm_sq);
      seg.optimality_ratio = n_opt > 0.0 ? std::hypot(seg.i_d, seg.i_q) / n_opt : 1.0;
    }
    m.segments.push_back(seg);
  }
  return m;
}

}  // namespace pmsg
