#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pmsg/error.hpp"
#include "pmsg/machine_model.hpp"

using namespace pmsg;

namespace {

const MachineParams kMp = MachineParams::bmw_i3();
const DcLinkParams kDp;

}  // namespace

TEST(MachineParams, PresetCarriesNominalValues) {
  EXPECT_DOUBLE_EQ(kMp.l_d, 0.090e-3);
  EXPECT_DOUBLE_EQ(kMp.l_q, 0.255e-3);
  EXPECT_DOUBLE_EQ(kMp.lambda_m, 0.0385);
  EXPECT_DOUBLE_EQ(kMp.r_s, 5.3e-3);
  EXPECT_EQ(kMp.poles, 12);
  EXPECT_DOUBLE_EQ(kMp.i_peak, 400.0);
  EXPECT_DOUBLE_EQ(kMp.t_max, 250.0);
  EXPECT_DOUBLE_EQ(kMp.p_max, 125e3);
  EXPECT_DOUBLE_EQ(kMp.n_max, 11400.0);
  EXPECT_NO_THROW(kMp.validate());
}

TEST(MachineParams, RejectsNonPhysicalConstants) {
  MachineParams mp = kMp;
  mp.l_d = 0.0;
  EXPECT_THROW(mp.validate(), Error);
  mp = kMp;
  mp.poles = 7;
  EXPECT_THROW(mp.validate(), Error);
  mp = kMp;
  mp.r_s = -1.0;
  EXPECT_THROW(mp.validate(), Error);
}

TEST(Speeds, SevenThousandRpmTwelvePoles) {
  const Speeds s = rpm_to_electrical(7000.0, 12);
  EXPECT_NEAR(s.omega_m, 7000.0 * 2.0 * M_PI / 60.0, 1e-12);
  EXPECT_NEAR(s.omega_r, 6.0 * s.omega_m, 1e-9);
  EXPECT_NEAR(s.omega_r, 4398.23, 0.01);
}

TEST(Park, ThetaZeroMapsPhaseAToD) {
  const Vec3 dq0 = park_transform({1.0, -0.5, -0.5}, 0.0);
  EXPECT_NEAR(dq0[0], 1.0, 1e-15);
  EXPECT_NEAR(dq0[1], 0.0, 1e-15);
  EXPECT_NEAR(dq0[2], 0.0, 1e-15);
}

TEST(Park, AmplitudeInvariantForBalancedSet) {
  const double amp = 123.0, th = 0.7;
  const Vec3 abc{amp * std::cos(th), amp * std::cos(th - 2.0 * M_PI / 3.0),
                 amp * std::cos(th + 2.0 * M_PI / 3.0)};
  const Vec3 dq0 = park_transform(abc, th);
  EXPECT_NEAR(dq0[0], amp, 1e-12);
  EXPECT_NEAR(dq0[1], 0.0, 1e-12);
}

TEST(Park, RoundTripOnRandomInputs) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-500.0, 500.0), th(-20.0, 20.0);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 abc{u(rng), u(rng), u(rng)};
    const double theta = th(rng);
    const Vec3 back = inverse_park(park_transform(abc, theta), theta);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(back[k], abc[k], 1e-12 * 500.0);
  }
}

TEST(Park, BalancedDqHasZeroSequenceSum) {
  const Vec3 abc = inverse_park({-62.0, -135.3, 0.0}, 1.234);
  EXPECT_NEAR(abc[0] + abc[1] + abc[2], 0.0, 1e-12);
}

TEST(WrapAngle, StaysInRange) {
  EXPECT_NEAR(wrap_angle(-0.1), kTwoPi - 0.1, 1e-15);
  EXPECT_NEAR(wrap_angle(7.0), 7.0 - kTwoPi, 1e-15);
  EXPECT_GE(wrap_angle(kTwoPi), 0.0);
  EXPECT_LT(wrap_angle(kTwoPi), kTwoPi);
}

TEST(Converter, DutyToVoltageIsHalfBus) {
  const DqVoltage v = duty_to_voltage({1.0, -0.5}, 540.0);
  EXPECT_DOUBLE_EQ(v.v_d, 270.0);
  EXPECT_DOUBLE_EQ(v.v_q, -135.0);
}

TEST(Plant, RejectsVoltageAtFloor) {
  const OperatingPoint op = OperatingPoint::from_rpm(7000.0, kMp.poles);
  try {
    plant_derivatives({1.0, 0.0, 0.0, 0.0}, {}, op, kMp, kDp);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonPositiveVoltage);
  }
  EXPECT_NO_THROW(plant_derivatives({1.5, 0.0, 0.0, 0.0}, {}, op, kMp, kDp));
}

TEST(Plant, OpenCircuitBackEmf) {
  // Zero current and zero applied voltage: only the back-emf drives i_q.
  const OperatingPoint op = OperatingPoint::from_rpm(7000.0, kMp.poles);
  const PlantDerivative d = plant_derivatives({540.0, 0.0, 0.0, 0.0}, {}, op, kMp, kDp);
  EXPECT_NEAR(d.di_d, 0.0, 1e-12);
  EXPECT_NEAR(d.di_q, -op.omega_r * kMp.lambda_m / kMp.l_q, 1e-6);
  EXPECT_NEAR(d.dv_dc, -540.0 / (kDp.r * kDp.c), 1e-9);
  EXPECT_NEAR(d.dtheta_r, op.omega_r, 1e-12);
}

TEST(Plant, SteadyStatorVoltageHoldsCurrents) {
  const double w = rpm_to_electrical(7000.0, kMp.poles).omega_r;
  const DqVoltage v = steady_stator_voltage(-62.0, -135.3, w, kMp);
  const PlantDerivative d = plant_derivatives_from_voltage({540.0, -62.0, -135.3, 0.0}, v,
                                                           {w, 0.0, 0.0}, kMp, kDp);
  EXPECT_NEAR(d.di_d, 0.0, 1e-6);
  EXPECT_NEAR(d.di_q, 0.0, 1e-6);
}

TEST(Plant, EnergyBalanceOnRandomStates) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const PlantState s{300.0 + 400.0 * std::abs(u(rng)), 400.0 * u(rng), 400.0 * u(rng), 0.0};
    const DutyCycles duty{u(rng), u(rng)};
    const OperatingPoint op{3000.0 * std::abs(u(rng)), 0.0, 200.0 * u(rng)};
    const PlantDerivative d = plant_derivatives(s, duty, op, kMp, kDp);
    const DqVoltage v = duty_to_voltage(duty, s.v_dc);
    const double fed = -1.5 * (v.v_d * s.i_d + v.v_q * s.i_q);
    const double absorbed = kDp.c * s.v_dc * d.dv_dc + s.v_dc * s.v_dc / kDp.r + s.v_dc * op.i_load;
    const double scale = std::abs(fed) + s.v_dc * s.v_dc / kDp.r + std::abs(s.v_dc * op.i_load);
    EXPECT_LT(std::abs(fed - absorbed) / scale, 1e-9);
  }
}

TEST(Plant, StatorPowerSplitsIntoCopperLossAndElectromagneticPower) {
  // At a current equilibrium the terminal power is R_s losses plus the electromagnetic power.
  const double w = rpm_to_electrical(8000.0, kMp.poles).omega_r;
  const double id = -120.0, iq = -180.0;
  const DqVoltage v = steady_stator_voltage(id, iq, w, kMp);
  const double terminal = 1.5 * (v.v_d * id + v.v_q * iq);
  const double copper = 1.5 * kMp.r_s * (id * id + iq * iq);
  EXPECT_NEAR(terminal, copper + electrical_power(id, iq, w, kMp), 1e-6 * std::abs(terminal));
}

TEST(Torque, MatchesPowerOverMechanicalSpeed) {
  const Speeds s = rpm_to_electrical(5000.0, kMp.poles);
  const double id = -50.0, iq = 150.0;
  EXPECT_NEAR(electrical_torque(id, iq, kMp) * s.omega_m, electrical_power(id, iq, s.omega_r, kMp),
              1e-9);
  // Reluctance torque adds when i_d < 0 because L_d < L_q.
  EXPECT_GT(electrical_torque(-50.0, 150.0, kMp), electrical_torque(0.0, 150.0, kMp));
}

TEST(DcLinkParams, ValidatesOrdering) {
  DcLinkParams dp;
  EXPECT_NO_THROW(dp.validate());
  dp.v_dc_min = 600.0;
  EXPECT_THROW(dp.validate(), Error);
  dp = DcLinkParams{};
  dp.c = 0.0;
  EXPECT_THROW(dp.validate(), Error);
}
