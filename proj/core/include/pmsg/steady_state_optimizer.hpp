#pragma once

#include "pmsg/machine_model.hpp"

namespace pmsg {

/// Minimum-current operating point for a prescribed electromagnetic power.
///
/// Minimizes i_d^2 + i_q^2 subject to
///   (3/2) w_r i_q (lambda_m + (L_d - L_q) i_d) = p_e,
///   i_d^2 + i_q^2 <= I_peak^2,
///   (w_r L_q i_q)^2 + (w_r (L_d i_d + lambda_m))^2 <= (v_dc / 2)^2.
/// The voltage ellipse neglects stator resistance.
struct StaticProblem {
  double p_e = 0.0;      // W, negative when generating
  double omega_r = 0.0;  // electrical rad/s, > 0
  double v_dc = 0.0;     // V
  MachineParams mp;
};

struct ActiveConstraints {
  bool current_circle = false;
  bool voltage_ellipse = false;
};

struct StaticSolution {
  double i_d = 0.0;
  double i_q = 0.0;
  double norm_sq = 0.0;
  double power = 0.0;  // achieved p_e at (i_d, i_q)
  ActiveConstraints active;
  bool feasible = false;
};

enum class Membership { kInterior, kBoundary, kExterior };

struct ConstraintMembership {
  Membership current_circle = Membership::kInterior;
  Membership voltage_ellipse = Membership::kInterior;
};

/// Relative width of the band classified as a constraint boundary.
inline constexpr double kBoundaryTolerance = 1e-6;

/// Half-width of the excluded band around lambda_m + (L_d - L_q) i_d = 0, in V*s.
inline constexpr double kFluxGuard = 1e-3;

/// Left-hand side of the voltage ellipse. With include_rs the full steady-state
/// stator voltage magnitude squared is returned instead.
double voltage_ellipse_lhs(double i_d, double i_q, double omega_r, const MachineParams& mp,
                           bool include_rs = false);

ConstraintMembership constraint_set_membership(double i_d, double i_q, const StaticProblem& prob);

/// Global minimizer by a 1-D reduction in i_d with golden-section refinement and a
/// Newton polish on the KKT system. Requests outside the feasible set return the
/// boundary point of maximum deliverable power with feasible = false.
StaticSolution solve_static(const StaticProblem& prob);

/// Exhaustive i_d grid with the power equality solved exactly for i_q.
StaticSolution brute_force_oracle(const StaticProblem& prob, double grid_step);

/// Largest |p_e| deliverable inside the constraint set, in the direction of sign(p_e).
double max_deliverable_power(const StaticProblem& prob);

}  // namespace pmsg
