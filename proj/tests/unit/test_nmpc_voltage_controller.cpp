#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pmsg/error.hpp"
#include "pmsg/nmpc_voltage_controller.hpp"
#include "pmsg/steady_state_optimizer.hpp"

using namespace pmsg;

namespace {

const MachineParams kMp = MachineParams::bmw_i3();
const DcLinkParams kDp;
const double kW7000 = rpm_to_electrical(7000.0, 12).omega_r;

NmpcConfig config() { return NmpcConfig::defaults_for(kMp, kDp); }

void expect_feasible(const OcpSolution& s, const ReducedState& x0, double i_load, double w,
                     const NmpcConfig& cfg) {
  ASSERT_EQ(s.u_sequence.size(), static_cast<std::size_t>(cfg.horizon_n));
  ASSERT_EQ(s.x_sequence.size(), static_cast<std::size_t>(cfg.horizon_n + 1));
  EXPECT_DOUBLE_EQ(s.x_sequence[0].v_dc, x0.v_dc);
  for (int k = 0; k < cfg.horizon_n; ++k) {
    const CurrentPair& u = s.u_sequence[k];
    const ReducedState next = discretize_fe(s.x_sequence[k], u, i_load, w, cfg.t_s, kMp, kDp);
    EXPECT_NEAR(s.x_sequence[k + 1].v_dc, next.v_dc, 1e-4);
    EXPECT_NEAR(s.x_sequence[k + 1].e_int, next.e_int, 1e-7);
    EXPECT_LE(std::hypot(u.i_d, u.i_q), cfg.i_peak * (1.0 + 1e-6));
    const double v = s.x_sequence[k].v_dc;
    EXPECT_LE(voltage_ellipse_lhs(u.i_d, u.i_q, w, kMp), 0.25 * v * v * (1.0 + 1e-6));
  }
}

}  // namespace

TEST(ReducedDynamics, MatchesFullPlantAtCurrentEquilibrium) {
  // With the currents held (stator derivatives zero) the plant dv_dc equals the reduced model.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double w = 5000.0 * std::abs(u(rng)) + 100.0;
    const CurrentPair c{200.0 * u(rng), 200.0 * u(rng)};
    const double v = 450.0 + 150.0 * std::abs(u(rng));
    const double i_load = 150.0 * u(rng);
    const ReducedDerivative r = reduced_dynamics({v, 0.0}, c, i_load, w, kMp, kDp);
    const DqVoltage vs = steady_stator_voltage(c.i_d, c.i_q, w, kMp);
    const PlantDerivative p =
        plant_derivatives_from_voltage({v, c.i_d, c.i_q, 0.0}, vs, {w, 0.0, i_load}, kMp, kDp);
    EXPECT_NEAR(r.dv_dc, p.dv_dc, 1e-6 * (1.0 + std::abs(p.dv_dc)));
    EXPECT_DOUBLE_EQ(r.de_int, kDp.v_dc_ref - v);
  }
}

TEST(ReducedDynamics, FloorThrows) {
  try {
    reduced_dynamics({0.5, 0.0}, {}, 0.0, kW7000, kMp, kDp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonPositiveVoltage);
  }
}

TEST(DiscretizeFe, IsOneEulerStep) {
  const ReducedState x{530.0, 0.01};
  const CurrentPair c{-60.0, -130.0};
  const ReducedDerivative d = reduced_dynamics(x, c, 80.0, kW7000, kMp, kDp);
  const ReducedState n = discretize_fe(x, c, 80.0, kW7000, 1e-4, kMp, kDp);
  EXPECT_DOUBLE_EQ(n.v_dc, x.v_dc + 1e-4 * d.dv_dc);
  EXPECT_DOUBLE_EQ(n.e_int, x.e_int + 1e-4 * d.de_int);
  const ReducedState same = discretize_fe(x, c, 80.0, kW7000, 0.0, kMp, kDp);
  EXPECT_EQ(same.v_dc, x.v_dc);
  EXPECT_THROW(discretize_fe(x, c, 80.0, kW7000, -1e-4, kMp, kDp), Error);
}

TEST(NmpcConfig, Validation) {
  NmpcConfig c = config();
  EXPECT_NO_THROW(c.validate());
  c.horizon_n = 0;
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.r_d = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.v_dc_min = 600.0;
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.q_e = -1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Ocp, SolutionSatisfiesDynamicsAndLimits) {
  const NmpcConfig cfg = config();
  for (double v0 : {540.0, 500.0, 600.0}) {
    const ReducedState x0{v0, 0.0};
    const double i_load = 62.25e3 / 540.0;
    const OcpSolution s = build_and_solve_ocp(x0, i_load, kW7000, cfg, kMp, kDp);
    EXPECT_TRUE(s.converged) << v0;
    EXPECT_LE(s.kkt_residual, cfg.kkt_tol) << v0;
    EXPECT_LT(s.max_violation, 1e-6);
    expect_feasible(s, x0, i_load, kW7000, cfg);
  }
}

TEST(Ocp, LowVoltageDrawsMorePower) {
  // Starting under the reference the first move must push more power into the link.
  const NmpcConfig cfg = config();
  const double i_load = 43.5e3 / 540.0;
  const OcpSolution lo = build_and_solve_ocp({520.0, 0.0}, i_load, kW7000, cfg, kMp, kDp);
  const OcpSolution hi = build_and_solve_ocp({560.0, 0.0}, i_load, kW7000, cfg, kMp, kDp);
  const auto gen = [](const CurrentPair& u) { return -electrical_power(u.i_d, u.i_q, kW7000, kMp); };
  EXPECT_GT(gen(lo.u_sequence[0]), gen(hi.u_sequence[0]));
}

TEST(Ocp, WarmStartReachesTheSameSolution) {
  const NmpcConfig cfg = config();
  const double i_load = 43.5e3 / 540.0;
  const ReducedState x0{535.0, 0.0};
  const OcpSolution first = build_and_solve_ocp(x0, i_load, kW7000, cfg, kMp, kDp);
  const ReducedState x1 = first.x_sequence[1];
  const OcpSolution cold = build_and_solve_ocp(x1, i_load, kW7000, cfg, kMp, kDp);
  const OcpSolution shifted = shift_solution(first);
  const OcpSolution warm = build_and_solve_ocp(x1, i_load, kW7000, cfg, kMp, kDp, &shifted);
  ASSERT_TRUE(cold.converged);
  ASSERT_TRUE(warm.converged);
  for (int k = 0; k < cfg.horizon_n; ++k) {
    EXPECT_NEAR(warm.u_sequence[k].i_d, cold.u_sequence[k].i_d, 1e-2);
    EXPECT_NEAR(warm.u_sequence[k].i_q, cold.u_sequence[k].i_q, 1e-2);
  }
  EXPECT_LE(warm.iterations, cold.iterations);
}

TEST(Ocp, BfgsAgreesWithExactHessian) {
  NmpcConfig cfg = config();
  const double i_load = 62.25e3 / 540.0;
  const OcpSolution exact = build_and_solve_ocp({530.0, 0.0}, i_load, kW7000, cfg, kMp, kDp);
  cfg.hessian = HessianMode::kDampedBfgs;
  const OcpSolution bfgs = build_and_solve_ocp({530.0, 0.0}, i_load, kW7000, cfg, kMp, kDp);
  ASSERT_TRUE(bfgs.converged);
  EXPECT_NEAR(bfgs.u_sequence[0].i_d, exact.u_sequence[0].i_d, 0.05);
  EXPECT_NEAR(bfgs.u_sequence[0].i_q, exact.u_sequence[0].i_q, 0.05);
}

TEST(Ocp, ExcessLoadUsesSlackInsteadOfFailing) {
  // Far more load than the machine can supply: the lower voltage bound cannot hold.
  const NmpcConfig cfg = config();
  const ReducedState x0{430.0, 0.0};
  const OcpSolution s = build_and_solve_ocp(x0, 400e3 / 430.0, kW7000, cfg, kMp, kDp);
  ASSERT_EQ(s.u_sequence.size(), static_cast<std::size_t>(cfg.horizon_n));
  EXPECT_TRUE(std::isfinite(s.u_sequence[0].i_d));
  double max_slack = 0.0;
  for (double v : s.slack) max_slack = std::max(max_slack, v);
  EXPECT_GT(max_slack, 0.0);
}

TEST(ShiftSolution, MovesOneStageForward) {
  OcpSolution s;
  for (int k = 0; k < 4; ++k) s.u_sequence.push_back({double(k), -double(k)});
  for (int k = 0; k < 5; ++k) s.x_sequence.push_back({500.0 + k, 0.1 * k});
  s.slack = {0.0, 1.0, 2.0, 3.0};
  const OcpSolution t = shift_solution(s);
  EXPECT_EQ(t.u_sequence[0].i_d, 1.0);
  EXPECT_EQ(t.u_sequence[2].i_d, 3.0);
  EXPECT_EQ(t.u_sequence[3].i_d, 3.0);
  EXPECT_EQ(t.x_sequence[0].v_dc, 501.0);
  EXPECT_EQ(t.x_sequence[4].v_dc, 504.0);
  EXPECT_EQ(t.slack[3], 3.0);
}

TEST(NmpcController, RegulatesReducedPlantToStaticOptimum) {
  const NmpcConfig cfg = config();
  NmpcController ctl(kMp, kDp, cfg);
  const double p_load = 43.5e3;
  ReducedState x{540.0, 0.0};
  CurrentPair u;
  for (int k = 0; k < 400; ++k) {
    const NmpcStepResult r = ctl.step(x.v_dc, p_load / x.v_dc, kW7000);
    EXPECT_FALSE(r.held_previous);
    u = r.reference;
    // fine sub-steps between controller samples
    for (int j = 0; j < 50; ++j) x = discretize_fe(x, u, p_load / x.v_dc, kW7000, cfg.t_s / 50, kMp, kDp);
  }
  EXPECT_NEAR(x.v_dc, 540.0, 0.1);
  StaticProblem p;
  p.mp = kMp;
  p.omega_r = kW7000;
  p.v_dc = 540.0;
  p.p_e = -(540.0 * 540.0 / kDp.r + p_load);
  const StaticSolution opt = solve_static(p);
  EXPECT_NEAR(u.i_d, opt.i_d, 2.0);
  EXPECT_NEAR(u.i_q, opt.i_q, 2.0);
}

TEST(NmpcController, IntegratorFollowsMeasuredError) {
  NmpcController ctl(kMp, kDp, config());
  ctl.reset({-60.0, -130.0}, 0.25);
  ctl.step(530.0, 80.0, kW7000);
  EXPECT_NEAR(ctl.e_int(), 0.25 + 0.5e-3 * 10.0, 1e-12);
  ASSERT_TRUE(ctl.last_solution().has_value());
}
