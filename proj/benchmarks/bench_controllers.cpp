#include <benchmark/benchmark.h>

#include "pmsg/closed_loop_simulator.hpp"
#include "pmsg/inner_current_regulator.hpp"
#include "pmsg/nmpc_voltage_controller.hpp"
#include "pmsg/steady_state_optimizer.hpp"

using namespace pmsg;

namespace {

const MachineParams kMp = MachineParams::bmw_i3();
const DcLinkParams kDp;

void BM_SolveStatic(benchmark::State& state) {
  StaticProblem p;
  p.mp = kMp;
  p.omega_r = rpm_to_electrical(state.range(0), kMp.poles).omega_r;
  p.v_dc = 540.0;
  p.p_e = -62.25e3;
  for (auto _ : state) benchmark::DoNotOptimize(solve_static(p));
}
BENCHMARK(BM_SolveStatic)->Arg(7000)->Arg(8000)->Arg(11000);

void BM_GridOracle(benchmark::State& state) {
  StaticProblem p;
  p.mp = kMp;
  p.omega_r = rpm_to_electrical(7000.0, kMp.poles).omega_r;
  p.v_dc = 540.0;
  p.p_e = -43.5e3;
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_oracle(p, 0.25));
}
BENCHMARK(BM_GridOracle);

// Cold solve versus a shifted warm start, away from equilibrium.
void BM_Ocp(benchmark::State& state) {
  NmpcConfig cfg = NmpcConfig::defaults_for(kMp, kDp);
  cfg.hessian = state.range(1) ? HessianMode::kDampedBfgs : HessianMode::kExact;
  const double w = rpm_to_electrical(8000.0, kMp.poles).omega_r;
  const double i_load = 81e3 / 540.0;
  const OcpSolution first = build_and_solve_ocp({530.0, 0.0}, i_load, w, cfg, kMp, kDp);
  const OcpSolution warm = shift_solution(first);
  const bool use_warm = state.range(0) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        build_and_solve_ocp(first.x_sequence[1], i_load, w, cfg, kMp, kDp, use_warm ? &warm : nullptr));
  }
}
BENCHMARK(BM_Ocp)->ArgsProduct({{0, 1}, {0, 1}})->ArgNames({"warm", "bfgs"});

void BM_InnerStep(benchmark::State& state) {
  CurrentController cc(kMp, InnerLoopConfig{});
  cc.reset({-62.0, -135.3});
  cc.set_reference(-70.0, -140.0);
  const double w = rpm_to_electrical(7000.0, kMp.poles).omega_r;
  for (auto _ : state) benchmark::DoNotOptimize(cc.step({-62.0, -135.3}, w, 540.0));
}
BENCHMARK(BM_InnerStep);

void BM_Case1(benchmark::State& state) {
  Scenario s;
  s.nmpc = NmpcConfig::defaults_for(s.machine, s.dc_link);
  s.speed_rpm = StepProfile::constant(7000.0);
  s.load_power = StepProfile({{0.0, 43.5e3}, {0.04, 62.25e3}});
  s.duration = 0.1;
  for (auto _ : state) benchmark::DoNotOptimize(run_closed_loop(s));
}
BENCHMARK(BM_Case1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
