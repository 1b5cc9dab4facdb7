#pragma once

#include <Eigen/Dense>

#include <vector>

namespace pmsg {

/// Strictly convex QP
///   min  1/2 x' H x + g' x
///   s.t. A_eq x  = b_eq
///        A_in x >= b_in
/// Multipliers follow H x + g = A_eq' y_eq + A_in' y_in with y_in >= 0.
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_matrix;
  Eigen::VectorXd ineq_rhs;
};

enum class QpStatus { kOptimal, kInfeasible, kNotConvex, kDependentEqualities, kMaxIterations };

struct QpResult {
  QpStatus status = QpStatus::kOptimal;
  Eigen::VectorXd x;
  Eigen::VectorXd eq_multipliers;
  Eigen::VectorXd ineq_multipliers;
  std::vector<int> active_set;  // indices into the inequality rows
  double objective = 0.0;
  int iterations = 0;
};

struct QpOptions {
  int max_iterations = 500;
};

/// Dual active-set method of Goldfarb and Idnani. Needs H positive definite;
/// no feasible starting point is required.
QpResult solve_qp(const QpProblem& qp, const QpOptions& options = {});

}  // namespace pmsg
