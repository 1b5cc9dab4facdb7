#include "acceptance_suite.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "pmsg/closed_loop_simulator.hpp"
#include "pmsg/error.hpp"
#include "pmsg/inner_current_regulator.hpp"
#include "pmsg/machine_model.hpp"
#include "pmsg/nmpc_voltage_controller.hpp"
#include "pmsg/scenario_config.hpp"
#include "pmsg/steady_state_optimizer.hpp"

namespace pmsg::acceptance {

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

double omega_at(double rpm, const MachineParams& mp) { return rpm_to_electrical(rpm, mp.poles).omega_r; }

Outcome static_point(double p_e, double rpm, double want_id, double want_iq, bool timed) {
  const MachineParams mp = MachineParams::bmw_i3();
  const StaticProblem prob{p_e, omega_at(rpm, mp), 540.0, mp};
  const auto t0 = Clock::now();
  const StaticSolution s = solve_static(prob);
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  const double err = std::max(std::abs(s.i_d - want_id), std::abs(s.i_q - want_iq));
  Outcome o;
  o.passed = s.feasible && err <= 1.0 && (!timed || ms < 10.0);
  o.detail = "(i_d, i_q) = (" + fmt(s.i_d) + ", " + fmt(s.i_q) + ") A, max error " + fmt(err, 3) +
             " A, " + fmt(ms, 3) + " ms";
  return o;
}

Outcome criterion_oracle() {
  const MachineParams mp = MachineParams::bmw_i3();
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> power(-mp.p_max, mp.p_max);
  std::uniform_real_distribution<double> speed(500.0, mp.n_max);
  std::uniform_real_distribution<double> vdc(420.0, 670.0);
  double worst = 0.0;
  int mismatched_flags = 0, feasible = 0;
  for (int i = 0; i < 100; ++i) {
    const StaticProblem prob{power(rng), omega_at(speed(rng), mp), vdc(rng), mp};
    const StaticSolution a = solve_static(prob);
    const StaticSolution b = brute_force_oracle(prob, 0.25);
    if (a.feasible != b.feasible) ++mismatched_flags;
    feasible += a.feasible ? 1 : 0;
    worst = std::max({worst, std::abs(a.i_d - b.i_d), std::abs(a.i_q - b.i_q)});
  }
  return {worst <= 1.0 && mismatched_flags == 0,
          "100 triples (" + std::to_string(feasible) + " feasible), max deviation " + fmt(worst, 3) +
              " A, feasibility mismatches " + std::to_string(mismatched_flags)};
}

Metrics run_case(const ConfigDocument& doc) {
  return compute_metrics(run_closed_loop(doc.scenario), doc.scenario);
}

Outcome criterion_optimality() {
  const Metrics m = run_case(builtin_case1());
  double worst = 0.0;
  std::string parts;
  for (const SegmentMetrics& s : m.segments) {
    const double e = std::max(std::abs(s.i_d - s.optimum_i_d), std::abs(s.i_q - s.optimum_i_q));
    worst = std::max(worst, e);
    parts += " [" + fmt(s.load_power / 1e3) + " kW: (" + fmt(s.i_d) + ", " + fmt(s.i_q) + ") vs (" +
             fmt(s.optimum_i_d) + ", " + fmt(s.optimum_i_q) + ")]";
  }
  return {worst <= 2.0 && m.segments.size() == 2, "max deviation " + fmt(worst, 3) + " A" + parts};
}

Outcome criterion_settling() {
  const Metrics m = run_case(builtin_case1());
  const SegmentMetrics& s = m.segments.at(1);
  return {s.settled && s.settling_time <= 0.015,
          "settling " + fmt(s.settling_time * 1e3, 3) + " ms after the step, min v_dc " +
              fmt(s.v_dc_min, 5) + " V"};
}

Outcome criterion_bounds() {
  const Metrics m = run_case(builtin_case2());
  double worst_return = 0.0;
  for (const SegmentMetrics& s : m.segments) worst_return = std::max(worst_return, s.v_dc_settled_error);
  return {m.v_dc_min >= 420.0 && m.v_dc_max <= 670.0 && worst_return <= 1.0,
          "v_dc in [" + fmt(m.v_dc_min, 5) + ", " + fmt(m.v_dc_max, 5) +
              "] V, worst settled |v_dc - 540| = " + fmt(worst_return, 3) + " V"};
}

const SegmentMetrics& heavy_segment(const Metrics& m) {
  return *std::max_element(m.segments.begin(), m.segments.end(),
                           [](const SegmentMetrics& a, const SegmentMetrics& b) {
                             return a.load_power < b.load_power;
                           });
}

Outcome criterion_binding() {
  ConfigDocument sw = builtin_case2();
  sw.scenario.fidelity = Fidelity::kSwitched;
  sw.scenario.integrator_step = 1e-6;
  bool ok = true;
  std::string detail;
  for (const ConfigDocument& doc : {builtin_case2(), sw}) {
    const Metrics m = run_case(doc);
    const SegmentMetrics& s = heavy_segment(m);
    const double residual = std::abs(s.ellipse_ratio - 1.0);
    ok = ok && residual < 0.01 && std::abs(s.peak_duty_abc - 1.0) <= 0.01;
    const bool switched = doc.scenario.fidelity == Fidelity::kSwitched;
    detail += std::string(switched ? " switched:" : "averaged:") + " ellipse residual " +
              fmt(residual * 100.0, 3) + " %, peak |d_abc| " + fmt(s.peak_duty_abc, 4) + ";";
  }
  return {ok, detail};
}

// Unconstrained minimum-norm i_d for the power equality alone (no circle, no ellipse),
// by dense scan plus golden refinement on the flux-positive branch.
double mtpa_i_d(double p_e, double omega_r, const MachineParams& mp) {
  auto norm = [&](double id) {
    const double flux = mp.lambda_m + (mp.l_d - mp.l_q) * id;
    const double iq = p_e / (1.5 * omega_r * flux);
    return id * id + iq * iq;
  };
  const double id_zero_flux = -mp.lambda_m / (mp.l_d - mp.l_q);  // positive for L_d < L_q
  double best = 0.0, best_val = norm(0.0);
  for (double id = -mp.i_peak * 2.0; id < std::min(0.0, id_zero_flux - 1e-3); id += 0.01) {
    const double v = norm(id);
    if (v < best_val) {
      best_val = v;
      best = id;
    }
  }
  double lo = best - 0.01, hi = best + 0.01;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int i = 0; i < 80; ++i) {
    const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (norm(a) < norm(b)) hi = b;
    else lo = a;
  }
  return 0.5 * (lo + hi);
}

Outcome criterion_flux_weakening() {
  const ConfigDocument doc = builtin_case2();
  const Metrics m = run_case(doc);
  const SegmentMetrics& s = heavy_segment(m);
  const MachineParams& mp = doc.scenario.machine;
  const double p_e = -(s.v_dc_mean * s.v_dc_mean / doc.scenario.dc_link.r + s.load_power);
  const double mtpa = mtpa_i_d(p_e, omega_at(s.speed_rpm, mp), mp);
  return {s.i_d < mtpa, "steady i_d " + fmt(s.i_d) + " A vs unconstrained MTPA i_d " + fmt(mtpa) + " A"};
}

struct StepResponse {
  double error_at_window = 0.0;   // |i - i*| / step at the first sample past 5 tau
  double cross_at_samples = 0.0;  // max |other - other*| / step over controller samples
  double cross_intra = 0.0;       // same, over every integrator step
  bool saturated = false;
};

// Regulator at T_s-i on the averaged current dynamics with v_dc and w_r held.
StepResponse inner_step(int axis, double step) {
  const MachineParams mp = MachineParams::bmw_i3();
  const DcLinkParams dp;
  const InnerLoopConfig cfg;
  const double w = omega_at(7000.0, mp);
  const double v_dc = 540.0;
  CurrentController cc(mp, cfg);
  PlantState x{v_dc, -62.0, -135.3, 0.0};
  cc.reset({x.i_d, x.i_q});
  const double ref_d = x.i_d + (axis == 0 ? step : 0.0);
  const double ref_q = x.i_q + (axis == 1 ? step : 0.0);
  cc.set_reference(ref_d, ref_q);

  const double tau = 1.0 / std::abs(cfg.d_pole);
  const double h = 1e-6;
  const int per_sample = static_cast<int>(std::lround(cfg.sample_time / h));
  const int window = static_cast<int>(std::ceil(5.0 * tau / cfg.sample_time)) * per_sample;
  StepResponse r;
  InnerControlOutput out;
  auto current_dynamics = [&](const PlantState& s) {
    PlantDerivative d = plant_derivatives(s, out.duty, {w, 0.0, 0.0}, mp, dp);
    d.dv_dc = 0.0;
    return d;
  };
  auto shifted = [](PlantState s, const PlantDerivative& d, double k) {
    s.i_d += k * d.di_d;
    s.i_q += k * d.di_q;
    return s;
  };
  for (int n = 0; n <= window; ++n) {
    const double own = std::abs(axis == 0 ? x.i_d - ref_d : x.i_q - ref_q) / std::abs(step);
    const double other = std::abs(axis == 0 ? x.i_q - ref_q : x.i_d - ref_d) / std::abs(step);
    r.cross_intra = std::max(r.cross_intra, other);
    if (n % per_sample == 0) {
      r.cross_at_samples = std::max(r.cross_at_samples, other);
      if (n == window) {
        r.error_at_window = own;
        break;
      }
      out = cc.step({x.i_d, x.i_q}, w, v_dc);
      r.saturated = r.saturated || out.saturated;
    }
    const PlantDerivative k1 = current_dynamics(x);
    const PlantDerivative k2 = current_dynamics(shifted(x, k1, 0.5 * h));
    const PlantDerivative k3 = current_dynamics(shifted(x, k2, 0.5 * h));
    const PlantDerivative k4 = current_dynamics(shifted(x, k3, h));
    x.i_d += h / 6.0 * (k1.di_d + 2.0 * k2.di_d + 2.0 * k3.di_d + k4.di_d);
    x.i_q += h / 6.0 * (k1.di_q + 2.0 * k2.di_q + 2.0 * k3.di_q + k4.di_q);
  }
  return r;
}

Outcome criterion_inner_loop() {
  bool ok = true;
  std::string detail;
  for (int axis = 0; axis < 2; ++axis) {
    for (double step : {10.0, -10.0}) {
      const StepResponse r = inner_step(axis, step);
      ok = ok && !r.saturated && r.error_at_window < 1e-3 && r.cross_at_samples < 1e-2;
      detail += std::string(axis == 0 ? " d" : " q") + (step > 0 ? "+" : "-") + ": error " +
                fmt(r.error_at_window * 100.0, 3) + " %, cross " +
                fmt(r.cross_at_samples * 100.0, 3) + " % (intra-sample " +
                fmt(r.cross_intra * 100.0, 3) + " %);";
    }
  }
  return {ok, "at 5 tau, sampled at T_s-i:" + detail};
}

Outcome criterion_invariants() {
  const MachineParams mp = MachineParams::bmw_i3();
  const DcLinkParams dp;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::vector<std::string> failures;

  double park = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 abc{400.0 * unit(rng), 400.0 * unit(rng), 400.0 * unit(rng)};
    const double th = angle(rng);
    const Vec3 again = inverse_park(park_transform(abc, th), th);
    for (int k = 0; k < 3; ++k) park = std::max(park, std::abs(again[k] - abc[k]) / 400.0);
  }
  if (park > 1e-12) failures.push_back("park");

  double regulator = 0.0, pole = 0.0;
  for (int i = 0; i < 200; ++i) {
    const AxisModel m = i % 2 ? AxisModel::q_axis(mp) : AxisModel::d_axis(mp);
    const double p = -std::exp(4.0 + 8.0 * std::abs(unit(rng)));
    const RegulatorDesign d = synthesize_axis(m, p);
    const RegulatorResiduals res = regulator_residuals(m, d);
    regulator = std::max({regulator, std::abs(res.dynamics), std::abs(res.output)});
    pole = std::max(pole, std::abs(d.closed_loop_pole(m) - p) / std::abs(p));
  }
  if (regulator > 1e-10 || pole > 1e-9) failures.push_back("regulator");

  // C v dv/dt + v^2/R + v i_L must equal the power fed from the ac side.
  double energy = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const PlantState s{450.0 + 200.0 * std::abs(unit(rng)), 300.0 * unit(rng), 300.0 * unit(rng), angle(rng)};
    const DutyCycles duty{unit(rng), unit(rng)};
    const OperatingPoint op{1000.0 * std::abs(unit(rng)), 0.0, 150.0 * unit(rng)};
    const PlantDerivative d = plant_derivatives(s, duty, op, mp, dp);
    const double v_d = duty.d_d * s.v_dc / 2.0, v_q = duty.d_q * s.v_dc / 2.0;
    const double fed = -1.5 * (v_d * s.i_d + v_q * s.i_q);
    const double absorbed = dp.c * s.v_dc * d.dv_dc + s.v_dc * s.v_dc / dp.r + s.v_dc * op.i_load;
    const double scale = std::abs(fed) + s.v_dc * s.v_dc / dp.r + std::abs(s.v_dc * op.i_load);
    energy = std::max(energy, std::abs(fed - absorbed) / scale);
  }
  if (energy > 1e-9) failures.push_back("energy");

  // Forward-Euler global error halves with the step.
  const double w = omega_at(7000.0, mp);
  const CurrentPair u{-62.0, -135.3};
  const double i_load = 43.5e3 / 540.0;
  auto rk4_reference = [&](double t_end) {
    ReducedState x{500.0, 0.0};
    const int n = 20000;
    const double h = t_end / n;
    for (int k = 0; k < n; ++k) {
      auto f = [&](const ReducedState& s) { return reduced_dynamics(s, u, i_load, w, mp, dp); };
      const ReducedDerivative a = f(x);
      const ReducedDerivative b = f({x.v_dc + 0.5 * h * a.dv_dc, x.e_int + 0.5 * h * a.de_int});
      const ReducedDerivative c = f({x.v_dc + 0.5 * h * b.dv_dc, x.e_int + 0.5 * h * b.de_int});
      const ReducedDerivative e = f({x.v_dc + h * c.dv_dc, x.e_int + h * c.de_int});
      x.v_dc += h / 6.0 * (a.dv_dc + 2.0 * b.dv_dc + 2.0 * c.dv_dc + e.dv_dc);
      x.e_int += h / 6.0 * (a.de_int + 2.0 * b.de_int + 2.0 * c.de_int + e.de_int);
    }
    return x;
  };
  const double t_end = 4e-3;
  const ReducedState ref = rk4_reference(t_end);
  std::vector<double> errors;
  for (int n : {40, 80, 160, 320}) {
    ReducedState x{500.0, 0.0};
    for (int k = 0; k < n; ++k) x = discretize_fe(x, u, i_load, w, t_end / n, mp, dp);
    errors.push_back(std::abs(x.v_dc - ref.v_dc));
  }
  double order_min = 10.0, order_max = 0.0;
  for (std::size_t k = 1; k < errors.size(); ++k) {
    const double order = std::log2(errors[k - 1] / errors[k]);
    order_min = std::min(order_min, order);
    order_max = std::max(order_max, order);
  }
  if (order_min < 0.9 || order_max > 1.1) failures.push_back("fe-order");

  // Carrier-period average of the switched leg equals the duty.
  double pwm = 0.0;
  for (double duty = -1.0; duty <= 1.0 + 1e-12; duty += 0.05) {
    const int samples = 20000;
    double sum = 0.0;
    for (int k = 0; k < samples; ++k) {
      sum += sine_pwm({duty, duty, duty}, (k + 0.5) / samples)[0];
    }
    pwm = std::max(pwm, std::abs(sum / samples - duty));
  }
  if (pwm > 0.01) failures.push_back("pwm");

  std::string detail = "park " + fmt(park, 2) + ", regulator " + fmt(regulator, 2) + ", pole " +
                       fmt(pole, 2) + ", energy " + fmt(energy, 2) + ", FE order " +
                       fmt(order_min, 3) + ".." + fmt(order_max, 3) + ", pwm " + fmt(pwm, 2);
  if (!failures.empty()) {
    detail += "; failed:";
    for (const std::string& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

std::vector<Criterion> criteria() {
  return {
      {1, "static optimum, case 1 low load",
       [] { return static_point(-43.5e3, 7000.0, -62.0, -135.3, true); }},
      {2, "static optimum, case 1 high load",
       [] { return static_point(-62.25e3, 7000.0, -93.5, -174.9, false); }},
      {3, "oracle equivalence on 100 random triples", criterion_oracle},
      {4, "closed-loop steady currents match the static optimum", criterion_optimality},
      {5, "voltage regulation after the case 1 step", criterion_settling},
      {6, "voltage bounds through the case 2 pulse", criterion_bounds},
      {7, "voltage-ellipse binding in the case 2 heavy segment", criterion_binding},
      {8, "flux weakening beyond MTPA in the case 2 heavy segment", criterion_flux_weakening},
      {9, "inner-loop step tracking and decoupling", criterion_inner_loop},
      {10, "numerical invariants", criterion_invariants},
  };
}

}  // namespace

std::vector<CriterionResult> run_all(int jobs) {
  const std::vector<Criterion> list = criteria();
  std::vector<CriterionResult> results(list.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < list.size(); i = next++) {
      CriterionResult& r = results[i];
      r.id = list[i].id;
      r.title = list[i].title;
      const auto t0 = Clock::now();
      try {
        const Outcome o = list[i].run();
        r.passed = o.passed;
        r.detail = o.detail;
      } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
      }
      r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    }
  };
  const int n = std::clamp(jobs, 1, static_cast<int>(list.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  return results;
}

bool report(std::ostream& out, const std::vector<CriterionResult>& results) {
  bool all = true;
  for (const CriterionResult& r : results) {
    all = all && r.passed;
    out << (r.passed ? "PASS" : "FAIL") << " criterion " << r.id << ": " << r.title << " -- "
        << r.detail << " (" << fmt(r.seconds, 3) << " s)\n";
  }
  out << (all ? "ALL PASS" : "SOME FAILED") << " (" << results.size() << " criteria)\n";
  return all;
}

}  // namespace pmsg::acceptance
