#include "pmsg/steady_state_optimizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pmsg/error.hpp"

namespace pmsg {

namespace {

constexpr double kInvGolden = 0.6180339887498949;
constexpr int kScanPoints = 4001;
constexpr int kBisectIters = 80;

void check_problem(const StaticProblem& prob) {
  prob.mp.validate();
  if (!(prob.omega_r > 0.0) || !std::isfinite(prob.omega_r)) {
    throw Error(ErrorCode::kInvalidArgument, "static problem needs omega_r > 0");
  }
  if (!(prob.v_dc > 0.0) || !std::isfinite(prob.p_e)) {
    throw Error(ErrorCode::kInvalidArgument, "static problem needs v_dc > 0 and finite power");
  }
}

// The power equality is affine in i_q for fixed i_d, so every quantity of the
// problem reduces to a function of i_d alone.
class ReducedProblem {
 public:
  explicit ReducedProblem(const StaticProblem& p)
      : p_(p),
        dl_(p.mp.l_d - p.mp.l_q),
        gain_(1.5 * p.omega_r),
        v_half_sq_(0.25 * p.v_dc * p.v_dc) {}

  double flux(double i_d) const { return p_.mp.lambda_m + dl_ * i_d; }

  // Largest |i_q| inside both constraints at this i_d; negative when none is.
  double iq_limit(double i_d) const {
    const double circle = p_.mp.i_peak * p_.mp.i_peak - i_d * i_d;
    const double back_emf = p_.omega_r * (p_.mp.l_d * i_d + p_.mp.lambda_m);
    const double ellipse = v_half_sq_ - back_emf * back_emf;
    if (circle < 0.0 || ellipse < 0.0) return -1.0;
    return std::min(std::sqrt(circle), std::sqrt(ellipse) / (p_.omega_r * p_.mp.l_q));
  }

  double deliverable(double i_d) const {
    const double lim = iq_limit(i_d);
    if (lim < 0.0 || std::abs(flux(i_d)) < kFluxGuard) return -1.0;
    return gain_ * std::abs(flux(i_d)) * lim;
  }

  bool feasible(double i_d) const { return deliverable(i_d) >= std::abs(p_.p_e); }

  double iq_for_power(double i_d) const { return p_.p_e / (gain_ * flux(i_d)); }

  double objective(double i_d) const {
    const double iq = iq_for_power(i_d);
    return i_d * i_d + iq * iq;
  }

  double lo() const { return -p_.mp.i_peak; }
  double hi() const { return p_.mp.i_peak; }
  double dl() const { return dl_; }
  double gain() const { return gain_; }

 private:
  const StaticProblem& p_;
  double dl_;
  double gain_;
  double v_half_sq_;
};

template <class F>
double golden_minimize(F&& f, double a, double b) {
  double c = b - kInvGolden * (b - a);
  double d = a + kInvGolden * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && (b - a) > 1e-13 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvGolden * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvGolden * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

// Minimizes f on [a, b] by a coarse scan followed by golden-section refinement
// of the best bracket. Endpoints are kept as candidates.
template <class F>
double scan_then_golden(F&& f, double a, double b, int samples) {
  if (b <= a) return a;
  const double h = (b - a) / (samples - 1);
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  for (int i = 0; i < samples; ++i) {
    const double v = f(a + i * h);
    if (v < best_val) {
      best_val = v;
      best = i;
    }
  }
  const double lo = a + std::max(best - 1, 0) * h;
  const double hi = std::min(a + (best + 1) * h, b);
  const double x = golden_minimize(f, lo, hi);
  return f(x) <= best_val ? x : a + best * h;
}

// Transition point between a feasible and an infeasible i_d; returns the feasible side.
double bisect_boundary(const ReducedProblem& rp, double inside, double outside) {
  for (int it = 0; it < kBisectIters; ++it) {
    const double mid = 0.5 * (inside + outside);
    if (mid == inside || mid == outside) break;
    (rp.feasible(mid) ? inside : outside) = mid;
  }
  return inside;
}

double argmax_deliverable(const ReducedProblem& rp) {
  auto neg = [&](double i_d) { return -rp.deliverable(i_d); };
  return scan_then_golden(neg, rp.lo(), rp.hi(), kScanPoints);
}

bool prefer(double f_new, double iq_new, double f_old, double iq_old, double p_e) {
  const double scale = std::max({std::abs(f_new), std::abs(f_old), 1e-300});
  if (std::abs(f_new - f_old) <= 1e-9 * scale) {
    // Tie: keep the candidate whose i_q shares the sign of the requested power.
    const bool new_ok = iq_new * p_e >= 0.0;
    const bool old_ok = iq_old * p_e >= 0.0;
    return new_ok && !old_ok;
  }
  return f_new < f_old;
}

StaticSolution finish(const StaticProblem& prob, double i_d, double i_q, bool feasible) {
  StaticSolution s;
  s.i_d = i_d;
  s.i_q = i_q;
  s.norm_sq = i_d * i_d + i_q * i_q;
  s.power = electrical_power(i_d, i_q, prob.omega_r, prob.mp);
  s.feasible = feasible;
  const ConstraintMembership m = constraint_set_membership(i_d, i_q, prob);
  s.active.current_circle = m.current_circle != Membership::kInterior;
  s.active.voltage_ellipse = m.voltage_ellipse != Membership::kInterior;
  return s;
}

StaticSolution best_effort(const StaticProblem& prob, const ReducedProblem& rp) {
  const double i_d = argmax_deliverable(rp);
  const double lim = std::max(rp.iq_limit(i_d), 0.0);
  const double dir = (prob.p_e >= 0.0 ? 1.0 : -1.0) * (rp.flux(i_d) >= 0.0 ? 1.0 : -1.0);
  return finish(prob, i_d, dir * lim, false);
}

// Newton iterations on the stationarity conditions of the equality-constrained
// problem, started from the golden-section answer.
double polish_interior(const ReducedProblem& rp, const StaticProblem& prob, double i_d0) {
  if (prob.p_e == 0.0) return i_d0;
  const double lam = prob.mp.lambda_m;
  const double k = rp.gain();
  const double dl = rp.dl();
  Eigen::Vector3d x(i_d0, rp.iq_for_power(i_d0), 0.0);
  x(2) = 2.0 * x(1) / (k * rp.flux(i_d0));
  for (int it = 0; it < 20; ++it) {
    const double id = x(0), iq = x(1), mu = x(2);
    Eigen::Vector3d r(2.0 * id - mu * k * dl * iq, 2.0 * iq - mu * k * (lam + dl * id),
                      k * iq * (lam + dl * id) - prob.p_e);
    Eigen::Matrix3d j;
    j << 2.0, -mu * k * dl, -k * dl * iq,  //
        -mu * k * dl, 2.0, -k * (lam + dl * id),  //
        k * dl * iq, k * (lam + dl * id), 0.0;
    const Eigen::Vector3d step = j.fullPivLu().solve(-r);
    if (!step.allFinite()) break;
    x += step;
    if (step.head<2>().norm() < 1e-13 * (1.0 + x.head<2>().norm())) break;
  }
  const double id = x(0);
  if (!std::isfinite(id) || std::abs(id - i_d0) > 1e-2 || !rp.feasible(id)) return i_d0;
  return rp.objective(id) <= rp.objective(i_d0) * (1.0 + 1e-12) ? id : i_d0;
}

}  // namespace

double voltage_ellipse_lhs(double i_d, double i_q, double omega_r, const MachineParams& mp,
                           bool include_rs) {
  if (include_rs) {
    const DqVoltage v = steady_stator_voltage(i_d, i_q, omega_r, mp);
    return v.v_d * v.v_d + v.v_q * v.v_q;
  }
  const double vd = omega_r * mp.l_q * i_q;
  const double vq = omega_r * (mp.l_d * i_d + mp.lambda_m);
  return vd * vd + vq * vq;
}

ConstraintMembership constraint_set_membership(double i_d, double i_q, const StaticProblem& prob) {
  auto classify = [](double lhs, double rhs) {
    if (std::abs(lhs - rhs) <= kBoundaryTolerance * rhs) return Membership::kBoundary;
    return lhs < rhs ? Membership::kInterior : Membership::kExterior;
  };
  ConstraintMembership m;
  m.current_circle = classify(i_d * i_d + i_q * i_q, prob.mp.i_peak * prob.mp.i_peak);
  m.voltage_ellipse = classify(voltage_ellipse_lhs(i_d, i_q, prob.omega_r, prob.mp),
                               0.25 * prob.v_dc * prob.v_dc);
  return m;
}

double max_deliverable_power(const StaticProblem& prob) {
  check_problem(prob);
  const ReducedProblem rp(prob);
  return std::max(rp.deliverable(argmax_deliverable(rp)), 0.0);
}

StaticSolution solve_static(const StaticProblem& prob) {
  check_problem(prob);
  const ReducedProblem rp(prob);

  // Feasible i_d intervals, bracketed on a uniform scan and refined by bisection.
  std::vector<std::pair<double, double>> intervals;
  const double h = (rp.hi() - rp.lo()) / (kScanPoints - 1);
  bool in_interval = false;
  double start = 0.0;
  double prev_x = rp.lo();
  for (int i = 0; i < kScanPoints; ++i) {
    const double x = i == kScanPoints - 1 ? rp.hi() : rp.lo() + i * h;
    const bool ok = rp.feasible(x);
    if (ok && !in_interval) {
      start = i == 0 ? x : bisect_boundary(rp, x, prev_x);
      in_interval = true;
    } else if (!ok && in_interval) {
      intervals.emplace_back(start, bisect_boundary(rp, prev_x, x));
      in_interval = false;
    }
    prev_x = x;
  }
  if (in_interval) intervals.emplace_back(start, rp.hi());

  if (intervals.empty()) {
    // A sliver narrower than the scan spacing can only sit around the power maximum.
    const double peak = argmax_deliverable(rp);
    if (!rp.feasible(peak)) return best_effort(prob, rp);
    intervals.emplace_back(bisect_boundary(rp, peak, std::max(peak - h, rp.lo())),
                           bisect_boundary(rp, peak, std::min(peak + h, rp.hi())));
  }

  auto objective = [&](double i_d) { return rp.objective(i_d); };
  bool have = false;
  double best_id = 0.0, best_f = 0.0;
  for (const auto& [a, b] : intervals) {
    const double id = scan_then_golden(objective, a, b, 65);
    const double f = rp.objective(id);
    if (!have || prefer(f, rp.iq_for_power(id), best_f, rp.iq_for_power(best_id), prob.p_e)) {
      best_id = id;
      best_f = f;
      have = true;
    }
  }

  StaticSolution sol = finish(prob, best_id, rp.iq_for_power(best_id), true);
  if (!sol.active.current_circle && !sol.active.voltage_ellipse) {
    const double id = polish_interior(rp, prob, best_id);
    sol = finish(prob, id, rp.iq_for_power(id), true);
  }
  return sol;
}

StaticSolution brute_force_oracle(const StaticProblem& prob, double grid_step) {
  check_problem(prob);
  if (!(grid_step > 0.0)) throw Error(ErrorCode::kInvalidArgument, "grid_step must be positive");
  const MachineParams& mp = prob.mp;
  const double w = prob.omega_r;
  const double i_max = mp.i_peak;
  const double rhs_v = 0.25 * prob.v_dc * prob.v_dc * (1.0 + 1e-12);
  const double rhs_i = i_max * i_max * (1.0 + 1e-12);
  const long n = static_cast<long>(std::floor(2.0 * i_max / grid_step));

  bool found = false;
  double best_id = 0.0, best_iq = 0.0, best_norm = 0.0;
  // Fallback: the grid point delivering the most power in the requested direction.
  double fb_id = 0.0, fb_iq = 0.0, fb_power = -1.0;
  const double sign_p = prob.p_e >= 0.0 ? 1.0 : -1.0;

  for (long i = 0; i <= n; ++i) {
    const double id = -i_max + static_cast<double>(i) * grid_step;
    const double flux = mp.lambda_m + (mp.l_d - mp.l_q) * id;
    if (std::abs(flux) < kFluxGuard) continue;
    const double e = w * (mp.l_d * id + mp.lambda_m);

    const double iq = prob.p_e / (1.5 * w * flux);
    const double norm = id * id + iq * iq;
    const double vd = w * mp.l_q * iq;
    if (norm <= rhs_i && vd * vd + e * e <= rhs_v) {
      const bool better = !found || norm < best_norm ||
                          (norm == best_norm && iq * prob.p_e > 0.0 && best_iq * prob.p_e <= 0.0);
      if (better) {
        best_id = id;
        best_iq = iq;
        best_norm = norm;
        found = true;
      }
    }

    const double room_i = i_max * i_max - id * id;
    const double room_v = 0.25 * prob.v_dc * prob.v_dc - e * e;
    if (room_i >= 0.0 && room_v >= 0.0) {
      const double lim = std::min(std::sqrt(room_i), std::sqrt(room_v) / (w * mp.l_q));
      const double p = 1.5 * w * std::abs(flux) * lim;
      if (p > fb_power) {
        fb_power = p;
        fb_id = id;
        fb_iq = sign_p * (flux >= 0.0 ? 1.0 : -1.0) * lim;
      }
    }
  }
  if (found) return finish(prob, best_id, best_iq, true);
  return finish(prob, fb_id, fb_iq, false);
}

}  // namespace pmsg
