#include "pmsg/machine_model.hpp"

#include <cmath>
#include <string>

#include "pmsg/error.hpp"

namespace pmsg {

namespace {

constexpr double kThird = 2.0 * std::numbers::pi / 3.0;

void require_positive(double value, const char* name) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be positive and finite");
  }
}

}  // namespace

void MachineParams::validate() const {
  require_positive(l_d, "l_d");
  require_positive(l_q, "l_q");
  require_positive(r_s, "r_s");
  require_positive(lambda_m, "lambda_m");
  require_positive(i_peak, "i_peak");
  require_positive(t_max, "t_max");
  require_positive(p_max, "p_max");
  require_positive(n_max, "n_max");
  if (poles < 2 || poles % 2 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "poles must be an even integer >= 2");
  }
}

MachineParams MachineParams::bmw_i3() {
  MachineParams mp;
  mp.l_d = 0.090e-3;
  mp.l_q = 0.255e-3;
  mp.r_s = 5.3e-3;
  mp.lambda_m = 0.0385;
  mp.poles = 12;
  mp.i_peak = 400.0;
  mp.t_max = 250.0;
  mp.p_max = 125e3;
  mp.n_max = 11400.0;
  return mp;
}

void DcLinkParams::validate() const {
  require_positive(c, "c");
  require_positive(r, "r");
  require_positive(v_dc_min, "v_dc_min");
  if (!(v_dc_min < v_dc_ref && v_dc_ref < v_dc_max)) {
    throw Error(ErrorCode::kInvalidArgument, "expected 0 < v_dc_min < v_dc_ref < v_dc_max");
  }
}

Speeds rpm_to_electrical(double rpm, int poles) {
  Speeds s;
  s.omega_m = rpm * kTwoPi / 60.0;
  s.omega_r = 0.5 * poles * s.omega_m;
  return s;
}

OperatingPoint OperatingPoint::from_rpm(double rpm, int poles, double i_load) {
  const Speeds s = rpm_to_electrical(rpm, poles);
  return OperatingPoint{s.omega_r, s.omega_m, i_load};
}

double wrap_angle(double theta) {
  double w = std::fmod(theta, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  // fmod of a tiny negative value can round up to exactly 2*pi
  if (w >= kTwoPi) w = 0.0;
  return w;
}

Vec3 park_transform(const Vec3& abc, double theta_r) {
  const double ca = std::cos(theta_r), cb = std::cos(theta_r - kThird), cc = std::cos(theta_r + kThird);
  const double sa = std::sin(theta_r), sb = std::sin(theta_r - kThird), sc = std::sin(theta_r + kThird);
  constexpr double k = 2.0 / 3.0;
  return {k * (ca * abc[0] + cb * abc[1] + cc * abc[2]),
          -k * (sa * abc[0] + sb * abc[1] + sc * abc[2]),
          k * 0.5 * (abc[0] + abc[1] + abc[2])};
}

Vec3 inverse_park(const Vec3& dq0, double theta_r) {
  const double ca = std::cos(theta_r), cb = std::cos(theta_r - kThird), cc = std::cos(theta_r + kThird);
  const double sa = std::sin(theta_r), sb = std::sin(theta_r - kThird), sc = std::sin(theta_r + kThird);
  return {ca * dq0[0] - sa * dq0[1] + dq0[2],
          cb * dq0[0] - sb * dq0[1] + dq0[2],
          cc * dq0[0] - sc * dq0[1] + dq0[2]};
}

DqVoltage duty_to_voltage(const DutyCycles& duty, double v_dc) {
  return {duty.d_d * 0.5 * v_dc, duty.d_q * 0.5 * v_dc};
}

PlantDerivative plant_derivatives_from_voltage(const PlantState& state, const DqVoltage& v,
                                               const OperatingPoint& op, const MachineParams& mp,
                                               const DcLinkParams& dp, double v_floor) {
  if (!(state.v_dc > v_floor)) {
    throw Error(ErrorCode::kNonPositiveVoltage,
                "v_dc = " + std::to_string(state.v_dc) + " V is at or below the model floor");
  }
  const double w = op.omega_r;
  const double p_ac = 1.5 * (v.v_d * state.i_d + v.v_q * state.i_q);
  PlantDerivative d;
  d.dv_dc = -state.v_dc / (dp.r * dp.c) - p_ac / (dp.c * state.v_dc) - op.i_load / dp.c;
  d.di_d = (-mp.r_s * state.i_d + w * mp.l_q * state.i_q + v.v_d) / mp.l_d;
  d.di_q = (-mp.r_s * state.i_q - w * mp.l_d * state.i_d - w * mp.lambda_m + v.v_q) / mp.l_q;
  d.dtheta_r = w;
  return d;
}

PlantDerivative plant_derivatives(const PlantState& state, const DutyCycles& duty,
                                  const OperatingPoint& op, const MachineParams& mp,
                                  const DcLinkParams& dp, double v_floor) {
  return plant_derivatives_from_voltage(state, duty_to_voltage(duty, state.v_dc), op, mp, dp,
                                        v_floor);
}

DqVoltage steady_stator_voltage(double i_d, double i_q, double omega_r, const MachineParams& mp) {
  return {mp.r_s * i_d - omega_r * mp.l_q * i_q,
          mp.r_s * i_q + omega_r * mp.l_d * i_d + omega_r * mp.lambda_m};
}

double electrical_torque(double i_d, double i_q, const MachineParams& mp) {
  return 1.5 * (0.5 * mp.poles) * (mp.lambda_m * i_q + (mp.l_d - mp.l_q) * i_q * i_d);
}

double electrical_power(double i_d, double i_q, double omega_r, const MachineParams& mp) {
  return 1.5 * omega_r * (mp.lambda_m * i_q + (mp.l_d - mp.l_q) * i_q * i_d);
}

}  // namespace pmsg
