#pragma once

#include "pmsg/machine_model.hpp"

namespace pmsg {

/// Scalar per-axis plant x' = a x + b u with exosystem w' = s w and
/// tracking error e = c x + q w.
struct AxisModel {
  double a = 0.0;
  double b = 0.0;
  double c = -1.0;
  double q = 1.0;
  double s = 0.0;

  static AxisModel d_axis(const MachineParams& mp);
  static AxisModel q_axis(const MachineParams& mp);
};

/// Output-regulation controller u = k*xi + t*x_ref for one axis.
struct RegulatorDesign {
  double k = 0.0;              // V/A
  double t = 0.0;              // V/A
  double pi = 0.0;
  double observer_gain = 0.0;  // 1/s, Luenberger mode only

  double closed_loop_pole(const AxisModel& m) const { return m.a + m.b * k; }
};

struct RegulatorResiduals {
  double dynamics = 0.0;  // a*pi + b*(k*pi + t) - pi*s
  double output = 0.0;    // c*pi + q
};

RegulatorResiduals regulator_residuals(const AxisModel& model, const RegulatorDesign& design);

/// Places the closed-loop pole at desired_pole and solves the regulator equations.
/// Throws kUncontrollableAxis when b == 0 and kUnstableRequest when desired_pole >= 0.
RegulatorDesign synthesize_axis(const AxisModel& model, double desired_pole,
                                double observer_gain = 0.0);

/// Cross-coupling and back-emf feedforward: maps decoupled inputs to stator voltages.
DqVoltage decouple(double v_tilde_d, double v_tilde_q, double i_d, double i_q, double omega_r,
                   const MachineParams& mp);

enum class ObserverMode { kIdentity, kLuenberger };

struct InnerLoopState {
  double xi_d = 0.0;
  double xi_q = 0.0;
  double i_d_ref = 0.0;
  double i_q_ref = 0.0;
  // decoupled inputs applied on the previous step; drive the Luenberger predictor
  double v_tilde_d = 0.0;
  double v_tilde_q = 0.0;
};

struct CurrentMeasurement {
  double i_d = 0.0;
  double i_q = 0.0;
};

struct InnerControlOutput {
  DutyCycles duty;
  DqVoltage v_tilde;
  bool saturated = false;
};

/// Static control law plus decoupling and duty computation. Updates the stored
/// decoupled inputs in `state`. Throws kVoltageFloor when v_dc <= v_floor.
///
/// With hold_time > 0 the input is held for that long, and the decoupling uses
/// the predicted mean current over the hold instead of the sampled one.
InnerControlOutput control_step(InnerLoopState& state, const RegulatorDesign& d_design,
                                const RegulatorDesign& q_design,
                                const CurrentMeasurement& measured, double omega_r, double v_dc,
                                const MachineParams& mp, double hold_time = 0.0,
                                double v_floor = kDefaultVoltageFloor);

/// Advances the current estimates over one sample of length dt.
InnerLoopState observer_step(const InnerLoopState& state, const CurrentMeasurement& measured,
                             const AxisModel& d_model, const RegulatorDesign& d_design,
                             const AxisModel& q_model, const RegulatorDesign& q_design, double dt,
                             ObserverMode mode);

struct InnerLoopConfig {
  double d_pole = -kTwoPi * 4000.0;  // rad/s
  double q_pole = -kTwoPi * 4000.0;  // rad/s
  ObserverMode observer = ObserverMode::kIdentity;
  double observer_gain = 5.0 * kTwoPi * 4000.0;  // 1/s
  double sample_time = 25e-6;                    // s
};

/// Owns the two axis designs and the per-step state of the fast loop.
class CurrentController {
 public:
  CurrentController(const MachineParams& mp, const InnerLoopConfig& cfg);

  void set_reference(double i_d_ref, double i_q_ref);

  /// Observer update followed by the control law; one call per inner sample.
  InnerControlOutput step(const CurrentMeasurement& measured, double omega_r, double v_dc);

  void reset(const CurrentMeasurement& measured);

  const InnerLoopState& state() const { return state_; }
  const RegulatorDesign& d_design() const { return d_design_; }
  const RegulatorDesign& q_design() const { return q_design_; }
  const AxisModel& d_model() const { return d_model_; }
  const AxisModel& q_model() const { return q_model_; }
  const InnerLoopConfig& config() const { return cfg_; }

 private:
  MachineParams mp_;
  InnerLoopConfig cfg_;
  AxisModel d_model_;
  AxisModel q_model_;
  RegulatorDesign d_design_;
  RegulatorDesign q_design_;
  InnerLoopState state_;
  bool primed_ = false;
};

}  // namespace pmsg
