#pragma once

#include <string>
#include <vector>

#include "pmsg/inner_current_regulator.hpp"
#include "pmsg/machine_model.hpp"
#include "pmsg/nmpc_voltage_controller.hpp"

namespace pmsg {

enum class Fidelity { kAveraged, kSwitched };

/// Piecewise-constant signal: each point holds its value from `start` until the next point.
struct Breakpoint {
  double start = 0.0;  // s
  double value = 0.0;
};

class StepProfile {
 public:
  StepProfile() = default;
  explicit StepProfile(std::vector<Breakpoint> points);
  static StepProfile constant(double value) { return StepProfile({{0.0, value}}); }

  double at(double t) const;
  const std::vector<Breakpoint>& points() const { return points_; }
  bool empty() const { return points_.empty(); }

 private:
  std::vector<Breakpoint> points_;
};

struct Scenario {
  std::string name = "scenario";
  MachineParams machine = MachineParams::bmw_i3();
  DcLinkParams dc_link;
  StepProfile speed_rpm;
  StepProfile load_power;  // W drawn by the dc load
  double duration = 0.1;   // s
  Fidelity fidelity = Fidelity::kAveraged;
  double integrator_step = 5e-6;  // s
  double f_sw = 40e3;             // Hz, switched mode carrier
  InnerLoopConfig inner;
  NmpcConfig nmpc;
  // Start pre-settled at v_dc_ref with the static optimum for the initial load.
  bool settled_start = true;
  PlantState initial;  // used when settled_start is false

  void validate() const;
};

/// Triangle-carrier comparison. carrier_phase in [0, 1); the carrier sits at +1
/// at phase 0 and -1 at phase 0.5. Returns +1 (upper switch on) or -1 per leg.
Vec3 sine_pwm(const Vec3& duty_abc, double carrier_phase);

/// Fraction of the carrier-phase interval [phase_begin, phase_end] during which a
/// leg with this duty is switched high; intervals may span several periods.
double pwm_on_fraction(double duty, double phase_begin, double phase_end);

struct TraceRow {
  double time = 0.0;
  double v_dc = 0.0;
  double i_d = 0.0;
  double i_q = 0.0;
  double i_d_ref = 0.0;
  double i_q_ref = 0.0;
  double d_d = 0.0;
  double d_q = 0.0;
  Vec3 i_abc{};
  Vec3 d_abc{};
  double i_load = 0.0;
  double p_e = 0.0;
  double omega_r = 0.0;
  double e_int = 0.0;
  int nmpc_iterations = 0;
  double nmpc_kkt = 0.0;
  bool nmpc_converged = true;
  bool nmpc_relaxed = false;
  bool nmpc_held = false;
  bool ellipse_active = false;
  double max_slack = 0.0;
  bool inner_saturated = false;
};

struct Trace {
  double sample_period = 0.0;
  std::vector<TraceRow> rows;
};

/// Integrates the plant under the cascaded controller. Throws
/// Error(kSimulationDiverged) when v_dc leaves (floor, 2 * v_dc_max).
Trace run_closed_loop(const Scenario& scenario);

struct EquilibriumInput {
  double e_int = 0.0;
  CurrentPair u;
  int solves = 0;
};

/// Integrator value at which the receding-horizon input holds v_dc = v_dc_ref
/// under the given load: the steady state of the voltage loop.
EquilibriumInput find_equilibrium_integrator(const MachineParams& mp, const DcLinkParams& dp,
                                             const NmpcConfig& cfg, double i_load,
                                             double omega_r);

struct SegmentMetrics {
  double start = 0.0;
  double end = 0.0;
  double load_power = 0.0;
  double speed_rpm = 0.0;
  double i_d = 0.0;  // mean over the settled window
  double i_q = 0.0;
  double v_dc_mean = 0.0;
  double settling_time = 0.0;  // into +-1 % of v_dc_ref and staying
  bool settled = false;
  double v_dc_min = 0.0;
  double v_dc_max = 0.0;
  double v_dc_settled_error = 0.0;  // max |v_dc - v_ref| in the settled window
  double rms_phase_current = 0.0;
  double optimum_i_d = 0.0;
  double optimum_i_q = 0.0;
  double optimality_ratio = 0.0;  // ||(i_d, i_q)|| / ||static optimum||
  double peak_duty_abc = 0.0;     // settled window
  double ellipse_ratio = 0.0;     // mean ellipse LHS / (v_dc/2)^2 in the settled window
  bool ellipse_binding = false;
};

struct Metrics {
  std::string scenario;
  std::vector<SegmentMetrics> segments;
  double v_dc_min = 0.0;
  double v_dc_max = 0.0;
  int nmpc_unconverged = 0;
  int nmpc_relaxed = 0;
  int nmpc_held = 0;
  int saturated_samples = 0;
};

/// Per-load-segment summary. Throws Error(kSegmentTooShort) when a segment has
/// no samples in its settled window (last 20 %).
Metrics compute_metrics(const Trace& trace, const Scenario& scenario);

}  // namespace pmsg
