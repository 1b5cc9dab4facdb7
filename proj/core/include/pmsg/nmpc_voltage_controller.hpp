#pragma once

#include <optional>
#include <vector>

#include "pmsg/machine_model.hpp"

namespace pmsg {

/// Slow state of the voltage loop: dc-link voltage and its tracking integral.
struct ReducedState {
  double v_dc = 0.0;   // V
  double e_int = 0.0;  // V*s
};

struct ReducedDerivative {
  double dv_dc = 0.0;
  double de_int = 0.0;
};

/// Current references, the decision variable of the voltage loop.
struct CurrentPair {
  double i_d = 0.0;
  double i_q = 0.0;
};

enum class HessianMode { kExact, kDampedBfgs };

struct NmpcConfig {
  int horizon_n = 10;
  double t_s = 0.5e-3;  // s
  // Q = diag(q_v, q_e), R = diag(r_d, r_q)
  double q_v = 0.1;
  double q_e = 9000.0;
  double r_d = 0.1;
  double r_q = 0.1;
  double v_dc_min = 420.0;
  double v_dc_max = 670.0;
  double i_peak = 400.0;
  double v_dc_ref = 540.0;
  int max_sqp_iters = 50;
  double kkt_tol = 1e-6;
  HessianMode hessian = HessianMode::kExact;
  // quadratic and linear weights on the voltage-box slacks
  double slack_quadratic = 1e5;
  double slack_linear = 1e2;

  void validate() const;

  /// Nominal weights with limits taken from the machine and dc link.
  static NmpcConfig defaults_for(const MachineParams& mp, const DcLinkParams& dp);
};

struct OcpSolution {
  std::vector<CurrentPair> u_sequence;   // N entries
  std::vector<ReducedState> x_sequence;  // N + 1 entries, x_sequence[0] = x0
  std::vector<double> slack;             // N voltage-box slacks
  double cost = 0.0;
  double kkt_residual = 0.0;
  double max_violation = 0.0;
  int iterations = 0;
  bool converged = false;
  bool relaxed = false;  // an elastic QP fallback was used
  // multipliers kept for warm starts
  std::vector<double> eq_multipliers;
  std::vector<double> ineq_multipliers;
};

/// Quasi-steady-state dc-link dynamics with the integral channel. Throws
/// kNonPositiveVoltage when v_dc <= v_floor.
ReducedDerivative reduced_dynamics(const ReducedState& x, const CurrentPair& u, double i_load,
                                   double omega_r, const MachineParams& mp,
                                   const DcLinkParams& dp,
                                   double v_floor = kDefaultVoltageFloor);

/// Forward-Euler step x + t_s * f(x, u).
ReducedState discretize_fe(const ReducedState& x, const CurrentPair& u, double i_load,
                           double omega_r, double t_s, const MachineParams& mp,
                           const DcLinkParams& dp, double v_floor = kDefaultVoltageFloor);

/// Direct transcription of the receding-horizon problem, solved by SQP with an
/// active-set QP subsolver. The load current is held at `i_load_forecast` over the
/// horizon. Never throws on solver trouble: inspect `converged`/`relaxed`.
OcpSolution build_and_solve_ocp(const ReducedState& x0, double i_load_forecast, double omega_r,
                                const NmpcConfig& cfg, const MachineParams& mp,
                                const DcLinkParams& dp,
                                const OcpSolution* warm_start = nullptr);

/// Shifts a solution one step forward in time, repeating the last stage.
OcpSolution shift_solution(const OcpSolution& sol);

struct NmpcStepResult {
  CurrentPair reference;
  int iterations = 0;
  double kkt_residual = 0.0;
  double cost = 0.0;
  bool converged = false;
  bool relaxed = false;
  bool held_previous = false;  // solver failed; previous reference reused
  bool ellipse_active = false;
  bool circle_active = false;
  double max_slack = 0.0;
};

/// Receding-horizon voltage controller. Owns the integrator state and the
/// warm-start memory; calls must be sequential at period t_s.
class NmpcController {
 public:
  NmpcController(const MachineParams& mp, const DcLinkParams& dp, const NmpcConfig& cfg);

  NmpcStepResult step(double v_dc_measured, double i_load_estimate, double omega_r);

  /// Seeds the previous reference and integrator.
  void reset(const CurrentPair& reference, double e_int = 0.0);

  void set_warm_start(bool enabled) { warm_start_enabled_ = enabled; }

  double e_int() const { return e_int_; }
  const NmpcConfig& config() const { return cfg_; }
  const std::optional<OcpSolution>& last_solution() const { return memory_; }

 private:
  MachineParams mp_;
  DcLinkParams dp_;
  NmpcConfig cfg_;
  double e_int_ = 0.0;
  CurrentPair previous_;
  std::optional<OcpSolution> memory_;
  bool warm_start_enabled_ = true;
};

}  // namespace pmsg
