#include "pmsg/nmpc_voltage_controller.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "pmsg/error.hpp"
#include "pmsg/qp_solver.hpp"
#include "pmsg/steady_state_optimizer.hpp"

namespace pmsg {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void NmpcConfig::validate() const {
  if (horizon_n < 1) throw Error(ErrorCode::kInvalidArgument, "horizon_n must be >= 1");
  if (!(t_s > 0.0)) throw Error(ErrorCode::kInvalidArgument, "t_s must be positive");
  if (!(q_v >= 0.0 && q_e >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "Q must be PSD");
  if (!(r_d > 0.0 && r_q > 0.0)) throw Error(ErrorCode::kInvalidArgument, "R must be PD");
  if (!(v_dc_min > 0.0 && v_dc_min < v_dc_ref && v_dc_ref < v_dc_max)) {
    throw Error(ErrorCode::kInvalidArgument, "expected 0 < v_dc_min < v_dc_ref < v_dc_max");
  }
  if (!(i_peak > 0.0)) throw Error(ErrorCode::kInvalidArgument, "i_peak must be positive");
  if (max_sqp_iters < 1) throw Error(ErrorCode::kInvalidArgument, "max_sqp_iters must be >= 1");
  if (!(kkt_tol > 0.0)) throw Error(ErrorCode::kInvalidArgument, "kkt_tol must be positive");
  if (!(slack_quadratic > 0.0 && slack_linear >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "slack weights must be positive");
  }
}

NmpcConfig NmpcConfig::defaults_for(const MachineParams& mp, const DcLinkParams& dp) {
  NmpcConfig cfg;
  cfg.v_dc_min = dp.v_dc_min;
  cfg.v_dc_max = dp.v_dc_max;
  cfg.v_dc_ref = dp.v_dc_ref;
  cfg.i_peak = mp.i_peak;
  return cfg;
}

namespace {

// Stator-power term of the reduced dc equation and its derivatives in (i_d, i_q).
struct PowerTerm {
  double p = 0.0;
  Eigen::Vector2d grad;
  Eigen::Matrix2d hess;
};

PowerTerm power_term(const CurrentPair& u, double omega_r, const MachineParams& mp) {
  const double sal = omega_r * (mp.l_q - mp.l_d);
  PowerTerm t;
  t.p = -mp.r_s * (u.i_d * u.i_d + u.i_q * u.i_q) + sal * u.i_q * u.i_d -
        omega_r * mp.lambda_m * u.i_q;
  t.grad << -2.0 * mp.r_s * u.i_d + sal * u.i_q, -2.0 * mp.r_s * u.i_q + sal * u.i_d - omega_r * mp.lambda_m;
  t.hess << -2.0 * mp.r_s, sal, sal, -2.0 * mp.r_s;
  return t;
}

}  // namespace

ReducedDerivative reduced_dynamics(const ReducedState& x, const CurrentPair& u, double i_load,
                                   double omega_r, const MachineParams& mp,
                                   const DcLinkParams& dp, double v_floor) {
  if (!(x.v_dc > v_floor)) {
    throw Error(ErrorCode::kNonPositiveVoltage,
                "v_dc = " + std::to_string(x.v_dc) + " V is at or below the model floor");
  }
  const PowerTerm t = power_term(u, omega_r, mp);
  ReducedDerivative d;
  d.dv_dc = -x.v_dc / (dp.r * dp.c) - i_load / dp.c + 1.5 / dp.c * t.p / x.v_dc;
  d.de_int = dp.v_dc_ref - x.v_dc;
  return d;
}

ReducedState discretize_fe(const ReducedState& x, const CurrentPair& u, double i_load,
                           double omega_r, double t_s, const MachineParams& mp,
                           const DcLinkParams& dp, double v_floor) {
  if (!(t_s >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "t_s must be non-negative");
  const ReducedDerivative d = reduced_dynamics(x, u, i_load, omega_r, mp, dp, v_floor);
  return {x.v_dc + t_s * d.dv_dc, x.e_int + t_s * d.de_int};
}

OcpSolution shift_solution(const OcpSolution& sol) {
  OcpSolution s = sol;
  const std::size_t n = s.u_sequence.size();
  if (n == 0) return s;
  std::rotate(s.u_sequence.begin(), s.u_sequence.begin() + 1, s.u_sequence.end());
  s.u_sequence[n - 1] = s.u_sequence[n - 2 < n ? n - 2 : 0];
  std::rotate(s.x_sequence.begin(), s.x_sequence.begin() + 1, s.x_sequence.end());
  s.x_sequence[n] = s.x_sequence[n - 1];
  if (!s.slack.empty()) {
    std::rotate(s.slack.begin(), s.slack.begin() + 1, s.slack.end());
    s.slack.back() = s.slack[n >= 2 ? n - 2 : 0];
  }
  auto shift_blocks = [n](std::vector<double>& v) {
    if (v.empty() || v.size() % n != 0) return;
    const std::size_t block = v.size() / n;
    std::rotate(v.begin(), v.begin() + static_cast<long>(block), v.end());
    if (n >= 2) {
      std::copy(v.end() - 2 * static_cast<long>(block), v.end() - static_cast<long>(block),
                v.end() - static_cast<long>(block));
    }
  };
  shift_blocks(s.eq_multipliers);
  shift_blocks(s.ineq_multipliers);
  return s;
}

namespace {

constexpr int kEqPerStage = 2;
constexpr int kIneqPerStage = 5;

// Dense transcription of the horizon problem. Decision vector per stage k:
// (i_d_k, i_q_k, v_{k+1}, e_{k+1}), followed by one voltage-box slack per stage.
class Transcription {
 public:
  Transcription(const ReducedState& x0, double i_load, double omega_r, const NmpcConfig& cfg,
                const MachineParams& mp, const DcLinkParams& dp)
      : x0_(x0),
        i_load_(i_load),
        w_(omega_r),
        cfg_(cfg),
        mp_(mp),
        dp_(dp),
        n_stage_(cfg.horizon_n),
        nz_(5 * cfg.horizon_n),
        v_scale_(cfg.v_dc_ref),
        ellipse_scale_(0.25 * cfg.v_dc_ref * cfg.v_dc_ref),
        v_guard_(0.05 * cfg.v_dc_ref) {}

  int nz() const { return nz_; }
  int neq() const { return kEqPerStage * n_stage_; }
  int nin() const { return kIneqPerStage * n_stage_; }

  static int iu(int k) { return 4 * k; }
  static int iv(int k) { return 4 * (k - 1) + 2; }  // k >= 1
  static int ie(int k) { return 4 * (k - 1) + 3; }  // k >= 1
  int is(int k) const { return 4 * n_stage_ + (k - 1); }  // k >= 1

  double v(const VectorXd& z, int k) const { return k == 0 ? x0_.v_dc : z(iv(k)); }
  double e(const VectorXd& z, int k) const { return k == 0 ? x0_.e_int : z(ie(k)); }
  CurrentPair u(const VectorXd& z, int k) const { return {z(iu(k)), z(iu(k) + 1)}; }

  VectorXd cost_hessian_diag() const {
    VectorXd h = VectorXd::Zero(nz_);
    for (int k = 0; k < n_stage_; ++k) {
      h(iu(k)) = 2.0 * cfg_.r_d;
      h(iu(k) + 1) = 2.0 * cfg_.r_q;
      h(iv(k + 1)) = 2.0 * cfg_.q_v;
      h(ie(k + 1)) = 2.0 * cfg_.q_e;
      h(is(k + 1)) = 2.0 * cfg_.slack_quadratic;
    }
    return h;
  }

  double objective(const VectorXd& z) const {
    double j = 0.0;
    for (int k = 0; k <= n_stage_; ++k) {
      const double dv = v(z, k) - cfg_.v_dc_ref;
      const double de = e(z, k);
      j += cfg_.q_v * dv * dv + cfg_.q_e * de * de;
      if (k < n_stage_) {
        const CurrentPair uk = u(z, k);
        j += cfg_.r_d * uk.i_d * uk.i_d + cfg_.r_q * uk.i_q * uk.i_q;
      }
    }
    return j;
  }

  double total_objective(const VectorXd& z) const {
    double j = objective(z);
    for (int k = 1; k <= n_stage_; ++k) {
      const double s = z(is(k));
      j += cfg_.slack_quadratic * s * s + cfg_.slack_linear * s;
    }
    return j;
  }

  VectorXd gradient(const VectorXd& z) const {
    VectorXd g = VectorXd::Zero(nz_);
    for (int k = 0; k < n_stage_; ++k) {
      g(iu(k)) = 2.0 * cfg_.r_d * z(iu(k));
      g(iu(k) + 1) = 2.0 * cfg_.r_q * z(iu(k) + 1);
      g(iv(k + 1)) = 2.0 * cfg_.q_v * (z(iv(k + 1)) - cfg_.v_dc_ref);
      g(ie(k + 1)) = 2.0 * cfg_.q_e * z(ie(k + 1));
      g(is(k + 1)) = 2.0 * cfg_.slack_quadratic * z(is(k + 1)) + cfg_.slack_linear;
    }
    return g;
  }

  // v-equation right-hand side with the 1/v singularity guarded.
  double fv(double vk, const PowerTerm& t) const {
    const double ve = std::max(vk, v_guard_);
    return -vk / (dp_.r * dp_.c) - i_load_ / dp_.c + 1.5 / dp_.c * t.p / ve;
  }

  void constraints(const VectorXd& z, VectorXd& ceq, VectorXd& cin) const {
    ceq.resize(neq());
    cin.resize(nin());
    const double i2 = cfg_.i_peak * cfg_.i_peak;
    for (int k = 0; k < n_stage_; ++k) {
      const CurrentPair uk = u(z, k);
      const double vk = v(z, k);
      const PowerTerm t = power_term(uk, w_, mp_);
      ceq(2 * k) = (v(z, k + 1) - vk - cfg_.t_s * fv(vk, t)) / v_scale_;
      ceq(2 * k + 1) =
          ((e(z, k + 1) - e(z, k)) / cfg_.t_s - (cfg_.v_dc_ref - vk)) / v_scale_;

      const double bd = w_ * (mp_.l_d * uk.i_d + mp_.lambda_m);
      const double bq = w_ * mp_.l_q * uk.i_q;
      const double s = z(is(k + 1));
      const double vn = v(z, k + 1);
      cin(5 * k) = 1.0 - (uk.i_d * uk.i_d + uk.i_q * uk.i_q) / i2;
      cin(5 * k + 1) = (0.25 * vk * vk - bq * bq - bd * bd) / ellipse_scale_;
      cin(5 * k + 2) = (vn + s - cfg_.v_dc_min) / v_scale_;
      cin(5 * k + 3) = (cfg_.v_dc_max - vn + s) / v_scale_;
      cin(5 * k + 4) = s;
    }
  }

  void jacobians(const VectorXd& z, MatrixXd& aeq, MatrixXd& ain) const {
    aeq.setZero(neq(), nz_);
    ain.setZero(nin(), nz_);
    const double i2 = cfg_.i_peak * cfg_.i_peak;
    for (int k = 0; k < n_stage_; ++k) {
      const CurrentPair uk = u(z, k);
      const double vk = v(z, k);
      const PowerTerm t = power_term(uk, w_, mp_);
      const double ve = std::max(vk, v_guard_);
      const double a = 1.5 / dp_.c;
      const double dfv_dv = -1.0 / (dp_.r * dp_.c) - (vk > v_guard_ ? a * t.p / (vk * vk) : 0.0);

      // v row
      aeq(2 * k, iv(k + 1)) = 1.0 / v_scale_;
      if (k > 0) aeq(2 * k, iv(k)) = (-1.0 - cfg_.t_s * dfv_dv) / v_scale_;
      aeq(2 * k, iu(k)) = -cfg_.t_s * a * t.grad(0) / ve / v_scale_;
      aeq(2 * k, iu(k) + 1) = -cfg_.t_s * a * t.grad(1) / ve / v_scale_;
      // e row
      aeq(2 * k + 1, ie(k + 1)) = 1.0 / (cfg_.t_s * v_scale_);
      if (k > 0) {
        aeq(2 * k + 1, ie(k)) = -1.0 / (cfg_.t_s * v_scale_);
        aeq(2 * k + 1, iv(k)) = 1.0 / v_scale_;
      }

      ain(5 * k, iu(k)) = -2.0 * uk.i_d / i2;
      ain(5 * k, iu(k) + 1) = -2.0 * uk.i_q / i2;
      const double bd = w_ * (mp_.l_d * uk.i_d + mp_.lambda_m);
      const double bq = w_ * mp_.l_q * uk.i_q;
      ain(5 * k + 1, iu(k)) = -2.0 * bd * w_ * mp_.l_d / ellipse_scale_;
      ain(5 * k + 1, iu(k) + 1) = -2.0 * bq * w_ * mp_.l_q / ellipse_scale_;
      if (k > 0) ain(5 * k + 1, iv(k)) = 0.5 * vk / ellipse_scale_;
      ain(5 * k + 2, iv(k + 1)) = 1.0 / v_scale_;
      ain(5 * k + 2, is(k + 1)) = 1.0 / v_scale_;
      ain(5 * k + 3, iv(k + 1)) = -1.0 / v_scale_;
      ain(5 * k + 3, is(k + 1)) = 1.0 / v_scale_;
      ain(5 * k + 4, is(k + 1)) = 1.0;
    }
  }

  // Hessian of the Lagrangian J - y_eq' c_eq - y_in' c_in, convexified per stage block.
  MatrixXd exact_hessian(const VectorXd& z, const VectorXd& y_eq, const VectorXd& y_in) const {
    const VectorXd diag = cost_hessian_diag();
    MatrixXd h = diag.asDiagonal();
    const double floor = 1e-3 * std::min(2.0 * cfg_.r_d, 2.0 * cfg_.r_q);
    const double i2 = cfg_.i_peak * cfg_.i_peak;
    const double a = 1.5 / dp_.c;
    for (int k = 0; k < n_stage_; ++k) {
      const CurrentPair uk = u(z, k);
      const double vk = v(z, k);
      const PowerTerm t = power_term(uk, w_, mp_);
      // block order: v_k (k >= 1), i_d_k, i_q_k
      Eigen::Matrix3d b = Eigen::Matrix3d::Zero();
      b(0, 0) = k > 0 ? diag(iv(k)) : 0.0;
      b(1, 1) = diag(iu(k));
      b(2, 2) = diag(iu(k) + 1);

      const double lam = y_eq(2 * k);
      const double coef = lam * cfg_.t_s / v_scale_;  // -lam * d2c = +lam * t_s/scale * d2f
      if (vk > v_guard_) {
        b(0, 0) += coef * 2.0 * a * t.p / (vk * vk * vk);
        b(0, 1) += -coef * a * t.grad(0) / (vk * vk);
        b(0, 2) += -coef * a * t.grad(1) / (vk * vk);
      }
      const double ve = std::max(vk, v_guard_);
      b.block<2, 2>(1, 1) += coef * a * t.hess / ve;

      const double mu_c = y_in(5 * k);
      b(1, 1) += 2.0 * mu_c / i2;
      b(2, 2) += 2.0 * mu_c / i2;
      const double mu_e = y_in(5 * k + 1);
      b(0, 0) += -mu_e * 0.5 / ellipse_scale_;
      b(1, 1) += 2.0 * mu_e * w_ * w_ * mp_.l_d * mp_.l_d / ellipse_scale_;
      b(2, 2) += 2.0 * mu_e * w_ * w_ * mp_.l_q * mp_.l_q / ellipse_scale_;
      b(1, 0) = b(0, 1);
      b(2, 0) = b(0, 2);

      if (k == 0) {
        Eigen::Matrix2d b2 = b.block<2, 2>(1, 1);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(b2);
        const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(floor);
        b2 = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        h.block<2, 2>(iu(0), iu(0)) = b2;
        continue;
      }
      const double vfloor = std::max(floor, 1e-6 * std::max(diag(iv(k)), 1e-6));
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(b);
      Eigen::Vector3d ev = es.eigenvalues();
      for (int i = 0; i < 3; ++i) ev(i) = std::max(ev(i), std::min(floor, vfloor));
      b = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
      const int idx[3] = {iv(k), iu(k), iu(k) + 1};
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) h(idx[r], idx[c]) = b(r, c);
    }
    // v_N only carries its cost term; keep it strictly positive when q_v = 0.
    h(iv(n_stage_), iv(n_stage_)) = std::max(h(iv(n_stage_), iv(n_stage_)), floor);
    for (int k = 1; k <= n_stage_; ++k) h(ie(k), ie(k)) = std::max(h(ie(k), ie(k)), floor);
    return h;
  }

  MatrixXd initial_bfgs() const {
    const double floor = 1e-3 * std::min(2.0 * cfg_.r_d, 2.0 * cfg_.r_q);
    return cost_hessian_diag().cwiseMax(floor).asDiagonal();
  }

  VectorXd initial_guess(const OcpSolution* warm) const {
    VectorXd z = VectorXd::Zero(nz_);
    if (warm != nullptr && static_cast<int>(warm->u_sequence.size()) == n_stage_ &&
        static_cast<int>(warm->x_sequence.size()) == n_stage_ + 1) {
      for (int k = 0; k < n_stage_; ++k) {
        z(iu(k)) = warm->u_sequence[k].i_d;
        z(iu(k) + 1) = warm->u_sequence[k].i_q;
        z(iv(k + 1)) = warm->x_sequence[k + 1].v_dc;
        z(ie(k + 1)) = warm->x_sequence[k + 1].e_int;
        z(is(k + 1)) = static_cast<int>(warm->slack.size()) == n_stage_ ? warm->slack[k] : 0.0;
      }
      return z;
    }
    // Cold start: input balancing the forecast load at the present voltage,
    // propagated through the prediction model.
    CurrentPair guess;
    try {
      StaticProblem prob;
      prob.mp = mp_;
      prob.omega_r = w_;
      prob.v_dc = std::max(x0_.v_dc, cfg_.v_dc_min);
      prob.p_e = -(x0_.v_dc * x0_.v_dc / dp_.r + x0_.v_dc * i_load_);
      if (w_ > 0.0) {
        const StaticSolution s = solve_static(prob);
        guess = {s.i_d, s.i_q};
      }
    } catch (const Error&) {
      guess = {};
    }
    double vk = x0_.v_dc, ek = x0_.e_int;
    const PowerTerm t = power_term(guess, w_, mp_);
    for (int k = 0; k < n_stage_; ++k) {
      z(iu(k)) = guess.i_d;
      z(iu(k) + 1) = guess.i_q;
      const double vn = vk + cfg_.t_s * fv(vk, t);
      const double en = ek + cfg_.t_s * (cfg_.v_dc_ref - vk);
      vk = vn;
      ek = en;
      z(iv(k + 1)) = vk;
      z(ie(k + 1)) = ek;
      z(is(k + 1)) = std::max({0.0, cfg_.v_dc_min - vk, vk - cfg_.v_dc_max});
    }
    return z;
  }

  OcpSolution pack(const VectorXd& z) const {
    OcpSolution s;
    s.u_sequence.resize(n_stage_);
    s.x_sequence.resize(n_stage_ + 1);
    s.slack.resize(n_stage_);
    s.x_sequence[0] = x0_;
    for (int k = 0; k < n_stage_; ++k) {
      s.u_sequence[k] = u(z, k);
      s.x_sequence[k + 1] = {z(iv(k + 1)), z(ie(k + 1))};
      s.slack[k] = z(is(k + 1));
    }
    s.cost = objective(z);
    return s;
  }

 private:
  ReducedState x0_;
  double i_load_;
  double w_;
  const NmpcConfig& cfg_;
  const MachineParams& mp_;
  const DcLinkParams& dp_;
  int n_stage_;
  int nz_;
  double v_scale_;
  double ellipse_scale_;
  double v_guard_;
};

double l1_infeasibility(const VectorXd& ceq, const VectorXd& cin) {
  return ceq.lpNorm<1>() + (-cin).cwiseMax(0.0).sum();
}

double max_infeasibility(const VectorXd& ceq, const VectorXd& cin) {
  const double e = ceq.size() ? ceq.lpNorm<Eigen::Infinity>() : 0.0;
  const double i = cin.size() ? (-cin).cwiseMax(0.0).maxCoeff() : 0.0;
  return std::max(e, i);
}

struct Kkt {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  double value() const { return std::max({stationarity, feasibility, complementarity}); }
};

Kkt kkt_measure(const VectorXd& grad, const MatrixXd& aeq, const MatrixXd& ain, const VectorXd& ceq,
                const VectorXd& cin, const VectorXd& y_eq, const VectorXd& y_in) {
  const double scale = std::max(1.0, grad.lpNorm<Eigen::Infinity>());
  const VectorXd r = grad - aeq.transpose() * y_eq - ain.transpose() * y_in;
  Kkt k;
  k.stationarity = r.lpNorm<Eigen::Infinity>() / scale;
  k.feasibility = max_infeasibility(ceq, cin);
  k.complementarity =
      std::max(cin.cwiseProduct(y_in).cwiseAbs().maxCoeff() / scale, (-y_in).cwiseMax(0.0).maxCoeff());
  return k;
}

// Elastic variant of the QP: one nonnegative relaxation per inequality row.
QpResult solve_elastic(const QpProblem& qp) {
  const int n = static_cast<int>(qp.hessian.rows());
  const int mi = static_cast<int>(qp.ineq_matrix.rows());
  const int me = static_cast<int>(qp.eq_matrix.rows());
  QpProblem e;
  e.hessian = MatrixXd::Zero(n + mi, n + mi);
  e.hessian.topLeftCorner(n, n) = qp.hessian;
  e.hessian.bottomRightCorner(mi, mi) = 1e6 * MatrixXd::Identity(mi, mi);
  e.gradient = VectorXd::Zero(n + mi);
  e.gradient.head(n) = qp.gradient;
  e.gradient.tail(mi).setConstant(1e4);
  e.eq_matrix = MatrixXd::Zero(me, n + mi);
  e.eq_matrix.leftCols(n) = qp.eq_matrix;
  e.eq_rhs = qp.eq_rhs;
  e.ineq_matrix = MatrixXd::Zero(2 * mi, n + mi);
  e.ineq_matrix.topLeftCorner(mi, n) = qp.ineq_matrix;
  e.ineq_matrix.topRightCorner(mi, mi) = MatrixXd::Identity(mi, mi);
  e.ineq_matrix.bottomRightCorner(mi, mi) = MatrixXd::Identity(mi, mi);
  e.ineq_rhs = VectorXd::Zero(2 * mi);
  e.ineq_rhs.head(mi) = qp.ineq_rhs;
  QpResult r = solve_qp(e);
  QpResult out = r;
  out.x = r.x.head(n);
  out.ineq_multipliers = r.ineq_multipliers.head(mi);
  return out;
}

}  // namespace

OcpSolution build_and_solve_ocp(const ReducedState& x0, double i_load_forecast, double omega_r,
                                const NmpcConfig& cfg, const MachineParams& mp,
                                const DcLinkParams& dp, const OcpSolution* warm_start) {
  cfg.validate();
  if (!std::isfinite(i_load_forecast) || !std::isfinite(omega_r)) {
    throw Error(ErrorCode::kInvalidArgument, "load forecast and speed must be finite");
  }
  if (!(x0.v_dc > kDefaultVoltageFloor)) {
    throw Error(ErrorCode::kNonPositiveVoltage, "initial v_dc at or below the model floor");
  }
  const Transcription tr(x0, i_load_forecast, omega_r, cfg, mp, dp);

  VectorXd z = tr.initial_guess(warm_start);
  VectorXd y_eq = VectorXd::Zero(tr.neq());
  VectorXd y_in = VectorXd::Zero(tr.nin());
  if (warm_start != nullptr && static_cast<int>(warm_start->eq_multipliers.size()) == tr.neq() &&
      static_cast<int>(warm_start->ineq_multipliers.size()) == tr.nin()) {
    y_eq = Eigen::Map<const VectorXd>(warm_start->eq_multipliers.data(), tr.neq());
    y_in = Eigen::Map<const VectorXd>(warm_start->ineq_multipliers.data(), tr.nin());
  }

  VectorXd ceq, cin;
  MatrixXd aeq, ain;
  MatrixXd bfgs = tr.initial_bfgs();
  double penalty = 1.0;
  bool relaxed = false;
  bool converged = false;
  int iter = 0;
  Kkt kkt;

  auto merit = [&](const VectorXd& zz, double nu) {
    VectorXd ce, ci;
    tr.constraints(zz, ce, ci);
    return tr.total_objective(zz) + nu * l1_infeasibility(ce, ci);
  };

  for (;; ++iter) {
    tr.constraints(z, ceq, cin);
    tr.jacobians(z, aeq, ain);
    const VectorXd grad = tr.gradient(z);
    kkt = kkt_measure(grad, aeq, ain, ceq, cin, y_eq, y_in);
    if (kkt.value() <= cfg.kkt_tol) {
      converged = true;
      break;
    }
    if (iter >= cfg.max_sqp_iters) break;

    QpProblem qp;
    qp.hessian = cfg.hessian == HessianMode::kExact ? tr.exact_hessian(z, y_eq, y_in) : bfgs;
    qp.gradient = grad;
    qp.eq_matrix = aeq;
    qp.eq_rhs = -ceq;
    qp.ineq_matrix = ain;
    qp.ineq_rhs = -cin;
    QpResult sub = solve_qp(qp);
    if (sub.status != QpStatus::kOptimal) {
      sub = solve_elastic(qp);
      relaxed = true;
      if (sub.status != QpStatus::kOptimal) break;
    }
    const VectorXd& p = sub.x;

    const double ymax = std::max(sub.eq_multipliers.lpNorm<Eigen::Infinity>(),
                                 sub.ineq_multipliers.size()
                                     ? sub.ineq_multipliers.lpNorm<Eigen::Infinity>()
                                     : 0.0);
    penalty = std::max(penalty, 1.5 * ymax + 1.0);

    const double phi0 = tr.total_objective(z) + penalty * l1_infeasibility(ceq, cin);
    const double dir = grad.dot(p) - penalty * l1_infeasibility(ceq, cin);
    const double slope = std::min(dir, -1e-12 * std::abs(phi0));

    double alpha = 1.0;
    VectorXd z_new = z + p;
    bool accepted = merit(z_new, penalty) <= phi0 + 1e-4 * slope;
    if (!accepted) {
      // Second-order correction against the Maratos effect.
      VectorXd ce2, ci2;
      tr.constraints(z_new, ce2, ci2);
      QpProblem soc = qp;
      soc.eq_rhs = -ce2 + aeq * p;
      soc.ineq_rhs = -ci2 + ain * p;
      const QpResult corr = solve_qp(soc);
      if (corr.status == QpStatus::kOptimal) {
        const VectorXd z_soc = z + corr.x;
        if (merit(z_soc, penalty) <= phi0 + 1e-4 * slope) {
          z_new = z_soc;
          accepted = true;
        }
      }
    }
    while (!accepted && alpha > 1e-8) {
      alpha *= 0.5;
      z_new = z + alpha * p;
      accepted = merit(z_new, penalty) <= phi0 + 1e-4 * alpha * slope;
    }
    if (!accepted) break;

    const VectorXd y_eq_new = y_eq + alpha * (sub.eq_multipliers - y_eq);
    const VectorXd y_in_new = y_in + alpha * (sub.ineq_multipliers - y_in);

    if (cfg.hessian == HessianMode::kDampedBfgs) {
      MatrixXd aeq2, ain2;
      tr.jacobians(z_new, aeq2, ain2);
      const VectorXd s = z_new - z;
      const VectorXd y = (tr.gradient(z_new) - aeq2.transpose() * y_eq_new - ain2.transpose() * y_in_new) -
                         (grad - aeq.transpose() * y_eq_new - ain.transpose() * y_in_new);
      const VectorXd bs = bfgs * s;
      const double sbs = s.dot(bs);
      const double sy = s.dot(y);
      if (sbs > 1e-300) {
        const double theta = sy >= 0.2 * sbs ? 1.0 : 0.8 * sbs / (sbs - sy);
        const VectorXd r = theta * y + (1.0 - theta) * bs;
        const double sr = s.dot(r);
        if (sr > 1e-300) bfgs += r * r.transpose() / sr - bs * bs.transpose() / sbs;
      }
    }
    z = z_new;
    y_eq = y_eq_new;
    y_in = y_in_new;
  }

  tr.constraints(z, ceq, cin);
  OcpSolution sol = tr.pack(z);
  sol.kkt_residual = kkt.value();
  sol.max_violation = max_infeasibility(ceq, cin);
  sol.iterations = iter;
  sol.converged = converged;
  sol.relaxed = relaxed;
  sol.eq_multipliers.assign(y_eq.data(), y_eq.data() + y_eq.size());
  sol.ineq_multipliers.assign(y_in.data(), y_in.data() + y_in.size());
  return sol;
}

NmpcController::NmpcController(const MachineParams& mp, const DcLinkParams& dp,
                               const NmpcConfig& cfg)
    : mp_(mp), dp_(dp), cfg_(cfg) {
  mp_.validate();
  dp_.validate();
  cfg_.validate();
}

void NmpcController::reset(const CurrentPair& reference, double e_int) {
  previous_ = reference;
  e_int_ = e_int;
  memory_.reset();
}

NmpcStepResult NmpcController::step(double v_dc_measured, double i_load_estimate,
                                    double omega_r) {
  NmpcStepResult out;
  const ReducedState x0{v_dc_measured, e_int_};
  std::optional<OcpSolution> warm;
  if (warm_start_enabled_ && memory_) warm = shift_solution(*memory_);

  bool usable = false;
  OcpSolution sol;
  try {
    sol = build_and_solve_ocp(x0, i_load_estimate, omega_r, cfg_, mp_, dp_,
                              warm ? &*warm : nullptr);
    const CurrentPair u0 = sol.u_sequence.front();
    usable = std::isfinite(u0.i_d) && std::isfinite(u0.i_q) &&
             (sol.converged || sol.max_violation < 1e-3);
  } catch (const Error&) {
    usable = false;
  }

  if (usable) {
    CurrentPair u0 = sol.u_sequence.front();
    const double norm = std::hypot(u0.i_d, u0.i_q);
    if (norm > cfg_.i_peak) {
      u0.i_d *= cfg_.i_peak / norm;
      u0.i_q *= cfg_.i_peak / norm;
    }
    previous_ = u0;
    memory_ = sol;
    out.iterations = sol.iterations;
    out.kkt_residual = sol.kkt_residual;
    out.cost = sol.cost;
    out.converged = sol.converged;
    out.relaxed = sol.relaxed;
    for (double s : sol.slack) out.max_slack = std::max(out.max_slack, s);
    const double circle = (u0.i_d * u0.i_d + u0.i_q * u0.i_q) / (cfg_.i_peak * cfg_.i_peak);
    const double ellipse = voltage_ellipse_lhs(u0.i_d, u0.i_q, omega_r, mp_) /
                           (0.25 * v_dc_measured * v_dc_measured);
    out.circle_active = circle > 1.0 - 1e-4;
    out.ellipse_active = ellipse > 1.0 - 1e-4;
  } else {
    out.held_previous = true;
    memory_.reset();
  }
  out.reference = previous_;
  e_int_ += cfg_.t_s * (cfg_.v_dc_ref - v_dc_measured);
  return out;
}

}  // namespace pmsg
