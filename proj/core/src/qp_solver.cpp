#include "pmsg/qp_solver.hpp"

#include <cmath>
#include <limits>

#include "pmsg/error.hpp"

namespace pmsg {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Factorization state of the dual method: J = L^-T Q and the upper-triangular R
// of the active constraint normals, both updated by Givens rotations.
class ActiveSetFactor {
 public:
  ActiveSetFactor(const MatrixXd& j0, int n) : j_(j0), r_(MatrixXd::Zero(n, n)), n_(n) {}

  int size() const { return iq_; }

  void compute_d(const VectorXd& normal, VectorXd& d) const { d.noalias() = j_.transpose() * normal; }

  void primal_direction(const VectorXd& d, VectorXd& z) const {
    z.setZero();
    for (int c = iq_; c < n_; ++c) z.noalias() += j_.col(c) * d(c);
  }

  void dual_direction(const VectorXd& d, VectorXd& r) const {
    for (int i = iq_ - 1; i >= 0; --i) {
      double sum = d(i);
      for (int k = i + 1; k < iq_; ++k) sum -= r_(i, k) * r(k);
      r(i) = sum / r_(i, i);
    }
  }

  bool add(VectorXd& d) {
    for (int j = n_ - 1; j >= iq_ + 1; --j) {
      double cc = d(j - 1);
      double ss = d(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      d(j) = 0.0;
      ss /= h;
      cc /= h;
      if (cc < 0.0) {
        cc = -cc;
        ss = -ss;
        d(j - 1) = -h;
      } else {
        d(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = 0; k < n_; ++k) {
        const double t1 = j_(k, j - 1);
        const double t2 = j_(k, j);
        j_(k, j - 1) = t1 * cc + t2 * ss;
        j_(k, j) = xny * (t1 + j_(k, j - 1)) - t2;
      }
    }
    ++iq_;
    for (int i = 0; i < iq_; ++i) r_(i, iq_ - 1) = d(i);
    if (std::abs(d(iq_ - 1)) <= kEps * r_norm_) return false;
    r_norm_ = std::max(r_norm_, std::abs(d(iq_ - 1)));
    return true;
  }

  // Removes active position qq; caller shifts its own bookkeeping.
  void remove(int qq) {
    for (int i = qq; i < iq_ - 1; ++i) r_.col(i) = r_.col(i + 1);
    r_.col(iq_ - 1).setZero();
    --iq_;
    for (int j = qq; j < iq_; ++j) {
      double cc = r_(j, j);
      double ss = r_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) continue;
      cc /= h;
      ss /= h;
      r_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        r_(j, j) = -h;
        cc = -cc;
        ss = -ss;
      } else {
        r_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (int k = j + 1; k < iq_; ++k) {
        const double t1 = r_(j, k);
        const double t2 = r_(j + 1, k);
        r_(j, k) = t1 * cc + t2 * ss;
        r_(j + 1, k) = xny * (t1 + r_(j, k)) - t2;
      }
      for (int k = 0; k < n_; ++k) {
        const double t1 = j_(k, j);
        const double t2 = j_(k, j + 1);
        j_(k, j) = t1 * cc + t2 * ss;
        j_(k, j + 1) = xny * (j_(k, j) + t1) - t2;
      }
    }
  }

 private:
  MatrixXd j_;
  MatrixXd r_;
  int n_;
  int iq_ = 0;
  double r_norm_ = 1.0;
};

}  // namespace

QpResult solve_qp(const QpProblem& qp, const QpOptions& options) {
  const int n = static_cast<int>(qp.hessian.rows());
  const int me = static_cast<int>(qp.eq_matrix.rows());
  const int mi = static_cast<int>(qp.ineq_matrix.rows());
  if (qp.hessian.cols() != n || qp.gradient.size() != n || (me > 0 && qp.eq_matrix.cols() != n) ||
      (mi > 0 && qp.ineq_matrix.cols() != n) || qp.eq_rhs.size() != me || qp.ineq_rhs.size() != mi) {
    throw Error(ErrorCode::kInvalidArgument, "QP dimensions are inconsistent");
  }

  QpResult res;
  res.x = VectorXd::Zero(n);
  res.eq_multipliers = VectorXd::Zero(me);
  res.ineq_multipliers = VectorXd::Zero(mi);

  const Eigen::LLT<MatrixXd> llt(qp.hessian);
  if (llt.info() != Eigen::Success) {
    res.status = QpStatus::kNotConvex;
    return res;
  }
  const MatrixXd l = llt.matrixL();
  const MatrixXd j0 = l.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n)).transpose();
  const double c1 = qp.hessian.trace();
  const double c2 = j0.trace();

  ActiveSetFactor fac(j0, n);
  VectorXd& x = res.x;
  x = -llt.solve(qp.gradient);

  // Active bookkeeping: entries < 0 encode equality -(i+1), >= 0 inequality rows.
  std::vector<int> active(n + 1, 0);
  VectorXd u = VectorXd::Zero(n + 1);
  VectorXd d(n), z(n), r(n + 1);

  for (int i = 0; i < me; ++i) {
    const VectorXd normal = qp.eq_matrix.row(i).transpose();
    fac.compute_d(normal, d);
    fac.primal_direction(d, z);
    fac.dual_direction(d, r);
    double t2 = 0.0;
    const double zn = z.dot(normal);
    if (std::abs(zn) > kEps) t2 = (qp.eq_rhs(i) - normal.dot(x)) / zn;
    x += t2 * z;
    const int iq = fac.size();
    u(iq) = t2;
    for (int k = 0; k < iq; ++k) u(k) -= t2 * r(k);
    active[iq] = -i - 1;
    if (!fac.add(d)) {
      res.status = QpStatus::kDependentEqualities;
      return res;
    }
  }

  std::vector<char> is_active(mi, 0), excluded(mi, 0);
  VectorXd slack(mi);
  auto row_slack = [&](int i) { return qp.ineq_matrix.row(i).dot(x) - qp.ineq_rhs(i); };

  while (true) {
    if (++res.iterations > options.max_iterations) {
      res.status = QpStatus::kMaxIterations;
      break;
    }
    double psi = 0.0;
    for (int i = 0; i < mi; ++i) {
      slack(i) = row_slack(i);
      if (!is_active[i]) psi += std::min(0.0, slack(i));
      excluded[i] = 0;
    }
    if (std::abs(psi) <= mi * kEps * c1 * c2 * 100.0) break;

    // Snapshot for recovery from a degenerate addition.
    const VectorXd x_old = x;
    const VectorXd u_old = u;
    const std::vector<int> active_old = active;
    const std::vector<char> is_active_old = is_active;
    const ActiveSetFactor fac_old = fac;

    bool restart = false;
    while (!restart) {
      int ip = -1;
      double most = 0.0;
      for (int i = 0; i < mi; ++i) {
        if (!is_active[i] && !excluded[i] && slack(i) < most) {
          most = slack(i);
          ip = i;
        }
      }
      if (ip < 0) {
        // Every remaining violation was excluded for degeneracy.
        res.status = QpStatus::kInfeasible;
        goto done;
      }
      const VectorXd normal = qp.ineq_matrix.row(ip).transpose();
      u(fac.size()) = 0.0;
      active[fac.size()] = ip;

      while (true) {
        fac.compute_d(normal, d);
        fac.primal_direction(d, z);
        fac.dual_direction(d, r);
        const int iq = fac.size();

        int drop = -1;
        double t1 = kInf;
        for (int k = me; k < iq; ++k) {
          if (r(k) > 0.0 && u(k) / r(k) < t1) {
            t1 = u(k) / r(k);
            drop = k;
          }
        }
        const double zn = z.dot(normal);
        const double t2 = std::abs(z.dot(z)) > kEps ? -row_slack(ip) / zn : kInf;
        const double t = std::min(t1, t2);
        if (t >= kInf) {
          res.status = QpStatus::kInfeasible;
          goto done;
        }
        if (t2 >= kInf) {
          for (int k = 0; k < iq; ++k) u(k) -= t * r(k);
          u(iq) += t;
          is_active[active[drop]] = 0;
          for (int k = drop; k < iq; ++k) {
            active[k] = active[k + 1];
            u(k) = u(k + 1);
          }
          u(iq) = 0.0;
          fac.remove(drop);
          continue;
        }
        x += t * z;
        for (int k = 0; k < iq; ++k) u(k) -= t * r(k);
        u(iq) += t;
        if (t == t2) {
          if (!fac.add(d)) {
            // Linearly dependent on the active set: roll back and skip this row.
            x = x_old;
            u = u_old;
            active = active_old;
            is_active = is_active_old;
            fac = fac_old;
            excluded[ip] = 1;
            break;
          }
          is_active[ip] = 1;
          restart = true;
          break;
        }
        // Partial step: a dual variable hit zero, release that constraint.
        is_active[active[drop]] = 0;
        for (int k = drop; k < iq; ++k) {
          active[k] = active[k + 1];
          u(k) = u(k + 1);
        }
        u(iq) = 0.0;
        fac.remove(drop);
      }
    }
  }

done:
  for (int k = 0; k < fac.size(); ++k) {
    if (active[k] < 0) {
      res.eq_multipliers(-active[k] - 1) = u(k);
    } else {
      res.ineq_multipliers(active[k]) = u(k);
      res.active_set.push_back(active[k]);
    }
  }
  res.objective = 0.5 * x.dot(qp.hessian * x) + qp.gradient.dot(x);
  return res;
}

}  // namespace pmsg
