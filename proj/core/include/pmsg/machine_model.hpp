#pragma once

#include <array>
#include <numbers>

namespace pmsg {

using Vec3 = std::array<double, 3>;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Lowest dc-link voltage the averaged model accepts; the dc equation divides by v_dc.
inline constexpr double kDefaultVoltageFloor = 1.0;

/// Electrical constants and ratings of an interior permanent-magnet machine.
struct MachineParams {
  double l_d = 0.0;        // H
  double l_q = 0.0;        // H
  double r_s = 0.0;        // Ohm
  double lambda_m = 0.0;   // V*s
  int poles = 0;
  double i_peak = 0.0;     // A
  double t_max = 0.0;      // N*m
  double p_max = 0.0;      // W
  double n_max = 0.0;      // rpm

  /// Throws Error(kInvalidArgument) when a constant is non-positive or poles is odd.
  void validate() const;

  /// BMW i3 traction machine.
  static MachineParams bmw_i3();
};

/// dc-side capacitor, bleed resistor and voltage limits.
struct DcLinkParams {
  double c = 1e-3;          // F
  double r = 10e3;          // Ohm
  double v_dc_ref = 540.0;  // V
  double v_dc_min = 420.0;  // V
  double v_dc_max = 670.0;  // V

  void validate() const;
};

struct PlantState {
  double v_dc = 0.0;
  double i_d = 0.0;
  double i_q = 0.0;
  double theta_r = 0.0;
};

struct PlantDerivative {
  double dv_dc = 0.0;
  double di_d = 0.0;
  double di_q = 0.0;
  double dtheta_r = 0.0;
};

struct DutyCycles {
  double d_d = 0.0;
  double d_q = 0.0;
};

struct DqVoltage {
  double v_d = 0.0;
  double v_q = 0.0;
};

struct OperatingPoint {
  double omega_r = 0.0;  // electrical rad/s
  double omega_m = 0.0;  // mechanical rad/s
  double i_load = 0.0;   // A, dc-side sink

  static OperatingPoint from_rpm(double rpm, int poles, double i_load = 0.0);
};

struct Speeds {
  double omega_m = 0.0;
  double omega_r = 0.0;
};

Speeds rpm_to_electrical(double rpm, int poles);

/// Wraps an angle into [0, 2*pi).
double wrap_angle(double theta);

/// Amplitude-invariant abc -> dq0 transform (2/3-scaled, zero-sequence row included).
Vec3 park_transform(const Vec3& abc, double theta_r);
Vec3 inverse_park(const Vec3& dq0, double theta_r);

/// Converter ac-side voltages produced by sine PWM: v = d * v_dc / 2.
DqVoltage duty_to_voltage(const DutyCycles& duty, double v_dc);

/// Averaged plant with the converter voltage as input. The stator currents use
/// motor (into-machine) orientation, so power delivered to the dc link is
/// -(3/2)(v_d i_d + v_q i_q).
PlantDerivative plant_derivatives_from_voltage(const PlantState& state, const DqVoltage& v,
                                               const OperatingPoint& op, const MachineParams& mp,
                                               const DcLinkParams& dp,
                                               double v_floor = kDefaultVoltageFloor);

/// Averaged plant driven by modulation indices. Throws Error(kNonPositiveVoltage)
/// when v_dc <= v_floor.
PlantDerivative plant_derivatives(const PlantState& state, const DutyCycles& duty,
                                  const OperatingPoint& op, const MachineParams& mp,
                                  const DcLinkParams& dp, double v_floor = kDefaultVoltageFloor);

/// Stator voltages that hold (i_d, i_q) constant: the quasi-steady state of the
/// current dynamics.
DqVoltage steady_stator_voltage(double i_d, double i_q, double omega_r, const MachineParams& mp);

double electrical_torque(double i_d, double i_q, const MachineParams& mp);

/// Electromagnetic power (negative when generating).
double electrical_power(double i_d, double i_q, double omega_r, const MachineParams& mp);

}  // namespace pmsg
