#include <gtest/gtest.h>

#include <cmath>

#include "pmsg/closed_loop_simulator.hpp"
#include "pmsg/error.hpp"

using namespace pmsg;

namespace {

Scenario short_scenario(double rpm, double load, double duration = 0.02) {
  Scenario s;
  s.name = "short";
  s.dc_link = DcLinkParams{};
  s.nmpc = NmpcConfig::defaults_for(s.machine, s.dc_link);
  s.speed_rpm = StepProfile::constant(rpm);
  s.load_power = StepProfile::constant(load);
  s.duration = duration;
  return s;
}

double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

TEST(StepProfile, HoldsLastStartedValue) {
  const StepProfile p({{0.0, 1.0}, {0.04, 2.0}, {0.08, 3.0}});
  EXPECT_EQ(p.at(0.0), 1.0);
  EXPECT_EQ(p.at(0.039), 1.0);
  EXPECT_EQ(p.at(0.04), 2.0);
  EXPECT_EQ(p.at(1.0), 3.0);
  EXPECT_THROW(StepProfile().at(0.0), Error);
}

TEST(SinePwm, CarrierComparison) {
  // phase 0: carrier at +1, so only duty 1 switches high
  EXPECT_EQ(sine_pwm({1.0, 0.5, -1.0}, 0.0)[0], 1.0);
  EXPECT_EQ(sine_pwm({1.0, 0.5, -1.0}, 0.0)[1], -1.0);
  // phase 0.5: carrier at -1, everything above is high
  const Vec3 mid = sine_pwm({0.5, -0.5, -0.99}, 0.5);
  EXPECT_EQ(mid[0], 1.0);
  EXPECT_EQ(mid[1], 1.0);
  EXPECT_EQ(mid[2], 1.0);
  // phase 0.25: carrier at 0
  const Vec3 q = sine_pwm({0.1, -0.1, 0.0}, 0.25);
  EXPECT_EQ(q[0], 1.0);
  EXPECT_EQ(q[1], -1.0);
}

TEST(PwmOnFraction, AveragesToDutyOverWholePeriods) {
  for (double d : {-1.0, -0.7, 0.0, 0.3, 0.95, 1.0}) {
    EXPECT_NEAR(pwm_on_fraction(d, 0.0, 1.0), 0.5 * (1.0 + d), 1e-12) << d;
    EXPECT_NEAR(pwm_on_fraction(d, 0.3, 3.3), 0.5 * (1.0 + d), 1e-12) << d;
  }
}

TEST(PwmOnFraction, AgreesWithSampledComparator) {
  for (double d : {-0.6, 0.2, 0.8}) {
    const double a = 0.13, b = 0.61;
    int high = 0;
    const int n = 200000;
    for (int k = 0; k < n; ++k) {
      const double ph = a + (b - a) * (k + 0.5) / n;
      if (sine_pwm({d, 0.0, 0.0}, ph)[0] > 0.0) ++high;
    }
    EXPECT_NEAR(pwm_on_fraction(d, a, b), static_cast<double>(high) / n, 1e-4) << d;
  }
}

TEST(Scenario, ValidationRejectsBadSteps) {
  Scenario s = short_scenario(7000.0, 40e3);
  EXPECT_NO_THROW(s.validate());
  s.integrator_step = 7e-6;  // does not divide 25 us
  EXPECT_THROW(s.validate(), Error);
  s = short_scenario(7000.0, 40e3);
  s.integrator_step = 10e-6;  // above T_s-i / 5
  EXPECT_THROW(s.validate(), Error);
  s = short_scenario(7000.0, 40e3);
  s.fidelity = Fidelity::kSwitched;  // 5 us is too coarse for a 40 kHz carrier
  EXPECT_THROW(s.validate(), Error);
  s.integrator_step = 1e-6;
  EXPECT_NO_THROW(s.validate());
  s = short_scenario(7000.0, 40e3);
  s.load_power = StepProfile({{0.01, 1.0}});
  EXPECT_THROW(s.validate(), Error);
}

TEST(Equilibrium, HoldsReferenceUnderLoad) {
  const MachineParams mp = MachineParams::bmw_i3();
  const DcLinkParams dp;
  const NmpcConfig cfg = NmpcConfig::defaults_for(mp, dp);
  const double w = rpm_to_electrical(7000.0, mp.poles).omega_r;
  const double i_load = 43.5e3 / 540.0;
  const EquilibriumInput eq = find_equilibrium_integrator(mp, dp, cfg, i_load, w);
  const ReducedDerivative d = reduced_dynamics({540.0, eq.e_int}, eq.u, i_load, w, mp, dp);
  EXPECT_LT(std::abs(d.dv_dc), 0.5);  // V/s, i.e. < 0.25 mV per outer sample
}

TEST(RunClosedLoop, ZeroLoadHoldsReference) {
  const Scenario s = short_scenario(7000.0, 0.0);
  const Trace t = run_closed_loop(s);
  ASSERT_FALSE(t.rows.empty());
  EXPECT_DOUBLE_EQ(t.sample_period, s.inner.sample_time);
  for (const TraceRow& r : t.rows) EXPECT_NEAR(r.v_dc, 540.0, 1.0);
  const Metrics m = compute_metrics(t, s);
  ASSERT_EQ(m.segments.size(), 1u);
  EXPECT_TRUE(m.segments[0].settled);
  EXPECT_EQ(m.segments[0].settling_time, 0.0);
}

TEST(RunClosedLoop, PhaseCurrentsSumToZero) {
  const Trace t = run_closed_loop(short_scenario(7000.0, 40e3, 0.005));
  for (const TraceRow& r : t.rows) {
    EXPECT_NEAR(r.i_abc[0] + r.i_abc[1] + r.i_abc[2], 0.0, 1e-9);
    EXPECT_NEAR(r.d_abc[0] + r.d_abc[1] + r.d_abc[2], 0.0, 1e-9);
  }
}

TEST(RunClosedLoop, SteadyPowerCoversLoadAndLosses) {
  const Scenario s = short_scenario(7000.0, 40e3);
  const Trace t = run_closed_loop(s);
  std::vector<double> p, loss;
  const MachineParams& mp = s.machine;
  for (std::size_t k = t.rows.size() * 4 / 5; k < t.rows.size(); ++k) {
    const TraceRow& r = t.rows[k];
    p.push_back(-r.p_e);
    loss.push_back(r.v_dc * r.v_dc / s.dc_link.r + 40e3 + 1.5 * mp.r_s * (r.i_d * r.i_d + r.i_q * r.i_q));
  }
  EXPECT_NEAR(mean(p), mean(loss), 1e-3 * mean(loss));
}

TEST(RunClosedLoop, Deterministic) {
  const Scenario s = short_scenario(8000.0, 50e3, 0.005);
  const Trace a = run_closed_loop(s), b = run_closed_loop(s);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    EXPECT_EQ(a.rows[k].v_dc, b.rows[k].v_dc);
    EXPECT_EQ(a.rows[k].i_q_ref, b.rows[k].i_q_ref);
  }
}

TEST(RunClosedLoop, OverloadDiverges) {
  Scenario s = short_scenario(2000.0, 40e3, 0.05);
  s.load_power = StepProfile({{0.0, 40e3}, {0.01, 400e3}});
  try {
    run_closed_loop(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSimulationDiverged);
  }
}

TEST(RunClosedLoop, SwitchedTracksAveraged) {
  Scenario avg = short_scenario(7000.0, 40e3, 0.02);
  avg.load_power = StepProfile({{0.0, 40e3}, {0.01, 55e3}});
  Scenario sw = avg;
  sw.fidelity = Fidelity::kSwitched;
  sw.integrator_step = 1e-6;
  const Metrics ma = compute_metrics(run_closed_loop(avg), avg);
  const Metrics ms = compute_metrics(run_closed_loop(sw), sw);
  ASSERT_EQ(ma.segments.size(), ms.segments.size());
  for (std::size_t k = 0; k < ma.segments.size(); ++k) {
    EXPECT_NEAR(ma.segments[k].v_dc_mean, ms.segments[k].v_dc_mean, 2.0);
    EXPECT_NEAR(ma.segments[k].i_d, ms.segments[k].i_d, 3.0);
    EXPECT_NEAR(ma.segments[k].i_q, ms.segments[k].i_q, 3.0);
  }
  EXPECT_NEAR(ma.v_dc_min, ms.v_dc_min, 2.0);
}

TEST(ComputeMetrics, SegmentsFollowBreakpoints) {
  Scenario s = short_scenario(7000.0, 40e3, 0.03);
  s.load_power = StepProfile({{0.0, 40e3}, {0.015, 50e3}});
  const Metrics m = compute_metrics(run_closed_loop(s), s);
  ASSERT_EQ(m.segments.size(), 2u);
  EXPECT_DOUBLE_EQ(m.segments[1].start, 0.015);
  EXPECT_DOUBLE_EQ(m.segments[1].load_power, 50e3);
  EXPECT_NEAR(m.segments[1].optimality_ratio, 1.0, 0.02);
  EXPECT_LE(m.v_dc_min, m.segments[1].v_dc_min);
}

TEST(ComputeMetrics, TooShortSegmentThrows) {
  Scenario s = short_scenario(7000.0, 40e3, 0.01);
  s.load_power = StepProfile({{0.0, 40e3}, {0.01 - 30e-6, 41e3}});
  const Trace t = run_closed_loop(s);
  try {
    compute_metrics(t, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSegmentTooShort);
  }
}
