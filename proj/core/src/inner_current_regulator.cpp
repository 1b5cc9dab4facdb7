#include "pmsg/inner_current_regulator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pmsg/error.hpp"

namespace pmsg {

AxisModel AxisModel::d_axis(const MachineParams& mp) {
  return AxisModel{-mp.r_s / mp.l_d, 1.0 / mp.l_d, -1.0, 1.0, 0.0};
}

AxisModel AxisModel::q_axis(const MachineParams& mp) {
  return AxisModel{-mp.r_s / mp.l_q, 1.0 / mp.l_q, -1.0, 1.0, 0.0};
}

RegulatorResiduals regulator_residuals(const AxisModel& m, const RegulatorDesign& d) {
  return {m.a * d.pi + m.b * (d.k * d.pi + d.t) - d.pi * m.s, m.c * d.pi + m.q};
}

RegulatorDesign synthesize_axis(const AxisModel& model, double desired_pole,
                                double observer_gain) {
  if (model.b == 0.0) {
    throw Error(ErrorCode::kUncontrollableAxis, "axis input gain b is zero");
  }
  if (!(desired_pole < 0.0)) {
    throw Error(ErrorCode::kUnstableRequest,
                "desired pole " + std::to_string(desired_pole) + " is not in the open left half-plane");
  }
  if (model.c == 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "output row c is zero; regulator equations unsolvable");
  }
  RegulatorDesign d;
  d.k = (desired_pole - model.a) / model.b;
  // c*pi + q = 0, then a*pi + b*(k*pi + t) = pi*s solved for t.
  d.pi = -model.q / model.c;
  d.t = (d.pi * model.s - model.a * d.pi) / model.b - d.k * d.pi;
  d.observer_gain = observer_gain;
  return d;
}

DqVoltage decouple(double v_tilde_d, double v_tilde_q, double i_d, double i_q, double omega_r,
                   const MachineParams& mp) {
  return {v_tilde_d - omega_r * mp.l_q * i_q,
          v_tilde_q + omega_r * mp.l_d * i_d + omega_r * mp.lambda_m};
}

namespace {

// Mean of x over [0, h] for x' = a x + b u with u held, starting at x0.
double held_mean(double x0, double u, const AxisModel& m, double h) {
  const double ah = m.a * h;
  const double g = std::abs(ah) < 1e-6 ? h * (0.5 + ah / 6.0)
                                       : (std::expm1(ah) - ah) / (m.a * ah);
  return x0 + (m.a * x0 + m.b * u) * g;
}

}  // namespace

InnerControlOutput control_step(InnerLoopState& state, const RegulatorDesign& d_design,
                                const RegulatorDesign& q_design,
                                const CurrentMeasurement& measured, double omega_r, double v_dc,
                                const MachineParams& mp, double hold_time, double v_floor) {
  if (!(v_dc > v_floor)) {
    throw Error(ErrorCode::kVoltageFloor,
                "v_dc = " + std::to_string(v_dc) + " V is at or below the control floor");
  }
  InnerControlOutput out;
  out.v_tilde.v_d = d_design.k * state.xi_d + d_design.t * state.i_d_ref;
  out.v_tilde.v_q = q_design.k * state.xi_q + q_design.t * state.i_q_ref;
  // Over a held sample the coupling acts on the moving currents; cancel its mean.
  const double i_d = hold_time > 0.0
                         ? held_mean(measured.i_d, out.v_tilde.v_d, AxisModel::d_axis(mp), hold_time)
                         : measured.i_d;
  const double i_q = hold_time > 0.0
                         ? held_mean(measured.i_q, out.v_tilde.v_q, AxisModel::q_axis(mp), hold_time)
                         : measured.i_q;
  const DqVoltage v = decouple(out.v_tilde.v_d, out.v_tilde.v_q, i_d, i_q, omega_r, mp);

  const double raw_d = 2.0 * v.v_d / v_dc;
  const double raw_q = 2.0 * v.v_q / v_dc;
  out.duty.d_d = std::clamp(raw_d, -1.0, 1.0);
  out.duty.d_q = std::clamp(raw_q, -1.0, 1.0);
  out.saturated = raw_d != out.duty.d_d || raw_q != out.duty.d_q;

  state.v_tilde_d = out.v_tilde.v_d;
  state.v_tilde_q = out.v_tilde.v_q;
  return out;
}

namespace {

// Exact ZOH solution of xi' = a xi + b u + l (y - xi) over dt.
double propagate_estimate(double xi, double y, double u, const AxisModel& m, double gain,
                          double dt) {
  const double pole = m.a - gain;
  const double forcing = m.b * u + gain * y;
  if (std::abs(pole) * dt < 1e-12) return xi + dt * (pole * xi + forcing);
  const double phi = std::exp(pole * dt);
  return phi * xi + (phi - 1.0) / pole * forcing;
}

}  // namespace

InnerLoopState observer_step(const InnerLoopState& state, const CurrentMeasurement& measured,
                             const AxisModel& d_model, const RegulatorDesign& d_design,
                             const AxisModel& q_model, const RegulatorDesign& q_design, double dt,
                             ObserverMode mode) {
  if (!(dt > 0.0)) throw Error(ErrorCode::kInvalidArgument, "observer dt must be positive");
  InnerLoopState next = state;
  if (mode == ObserverMode::kIdentity) {
    next.xi_d = measured.i_d;
    next.xi_q = measured.i_q;
    return next;
  }
  next.xi_d = propagate_estimate(state.xi_d, measured.i_d, state.v_tilde_d, d_model,
                                 d_design.observer_gain, dt);
  next.xi_q = propagate_estimate(state.xi_q, measured.i_q, state.v_tilde_q, q_model,
                                 q_design.observer_gain, dt);
  return next;
}

CurrentController::CurrentController(const MachineParams& mp, const InnerLoopConfig& cfg)
    : mp_(mp),
      cfg_(cfg),
      d_model_(AxisModel::d_axis(mp)),
      q_model_(AxisModel::q_axis(mp)),
      d_design_(synthesize_axis(d_model_, cfg.d_pole, cfg.observer_gain)),
      q_design_(synthesize_axis(q_model_, cfg.q_pole, cfg.observer_gain)) {
  if (!(cfg.sample_time > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "inner sample time must be positive");
  }
}

void CurrentController::set_reference(double i_d_ref, double i_q_ref) {
  state_.i_d_ref = i_d_ref;
  state_.i_q_ref = i_q_ref;
}

void CurrentController::reset(const CurrentMeasurement& measured) {
  state_.xi_d = measured.i_d;
  state_.xi_q = measured.i_q;
  state_.v_tilde_d = 0.0;
  state_.v_tilde_q = 0.0;
  primed_ = true;
}

InnerControlOutput CurrentController::step(const CurrentMeasurement& measured, double omega_r,
                                           double v_dc) {
  if (!primed_) {
    reset(measured);
  } else {
    state_ = observer_step(state_, measured, d_model_, d_design_, q_model_, q_design_,
                           cfg_.sample_time, cfg_.observer);
  }
  return control_step(state_, d_design_, q_design_, measured, omega_r, v_dc, mp_, cfg_.sample_time);
}

}  // namespace pmsg
