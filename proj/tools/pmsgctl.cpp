// pmsgctl: run scenarios, query static optima, and check the acceptance suite.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "acceptance/acceptance_suite.hpp"
#include "pmsg/error.hpp"
#include "pmsg/scenario_config.hpp"
#include "pmsg/steady_state_optimizer.hpp"
#include "pmsg/trace_io.hpp"

namespace fs = std::filesystem;
using namespace pmsg;

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kDiverged = 2, kVerification = 3 };

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSimulationDiverged:
    case ErrorCode::kNonPositiveVoltage:
    case ErrorCode::kVoltageFloor:
      return kDiverged;
    default:
      return kConfig;
  }
}

struct Job {
  ConfigDocument doc;
  fs::path out_dir;
};

std::mutex g_log;

void log_line(const std::string& s) {
  std::lock_guard<std::mutex> lock(g_log);
  std::cerr << s << '\n';
}

int run_job(const Job& job) {
  try {
    fs::create_directories(job.out_dir);
    const Trace trace = run_closed_loop(job.doc.scenario);
    const Metrics metrics = compute_metrics(trace, job.doc.scenario);
    write_trace_csv(job.out_dir / job.doc.output.trace_file, trace, job.doc.output.decimation);
    write_metrics_json(job.out_dir / job.doc.output.metrics_file, metrics);
    std::ostringstream msg;
    msg << job.doc.scenario.name << ": v_dc in [" << metrics.v_dc_min << ", " << metrics.v_dc_max
        << "] V";
    for (const SegmentMetrics& s : metrics.segments) {
      msg << "; " << s.load_power / 1e3 << " kW -> (" << s.i_d << ", " << s.i_q << ") A";
    }
    msg << " -> " << job.out_dir.string();
    log_line(msg.str());
    return kOk;
  } catch (const Error& e) {
    log_line(job.doc.scenario.name + ": " + e.what());
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    log_line(job.doc.scenario.name + ": " + e.what());
    return kConfig;
  }
}

// Worst exit code wins: divergence over config trouble over success.
int run_jobs(const std::vector<Job>& jobs, int n_threads) {
  std::vector<int> codes(jobs.size(), kOk);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) codes[i] = run_job(jobs[i]);
  };
  const int n = std::clamp(n_threads, 1, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  int worst = kOk;
  for (int c : codes) {
    if (c == kDiverged || (c == kConfig && worst == kOk)) worst = c;
  }
  return worst;
}

// Negative powers such as "-43.5kW" would otherwise be read as short options.
std::vector<std::string> protect_negative_numbers(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) {
    std::string a = argv[i];
    if (a.size() > 1 && a[0] == '-' && (std::isdigit(static_cast<unsigned char>(a[1])) || a[1] == '.')) {
      a = "\x01" + a;
    }
    args.push_back(std::move(a));
  }
  return args;  // reversed, as CLI11 expects
}

std::string unprotect(std::string s) {
  if (!s.empty() && s[0] == '\x01') s.erase(0, 1);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voltage control of an IPMSM generator with an active rectifier"};
  app.require_subcommand(1);
  int jobs = 1;

  // run
  std::vector<std::string> run_args;
  auto* run = app.add_subcommand("run", "Simulate one or more scenario files: run CONFIG... OUTPUT_DIR");
  run->add_option("args", run_args, "Config files followed by the output directory")->required()->expected(2, -1);
  run->add_option("-j,--jobs", jobs, "Scenarios simulated concurrently")->check(CLI::PositiveNumber);

  // optimal-currents
  std::string oc_power, oc_speed, oc_vdc, oc_preset = "bmw-i3", oc_format = "json";
  bool oc_verify = false;
  double oc_grid = 0.25;
  auto* oc = app.add_subcommand("optimal-currents", "Minimum-norm currents for a power/speed/v_dc point");
  oc->add_option("power", oc_power, "Electrical power, e.g. -43.5kW (negative when generating)")->required();
  oc->add_option("speed", oc_speed, "Rotor speed, e.g. 7000rpm")->required();
  oc->add_option("v_dc", oc_vdc, "Dc-link voltage, e.g. 540V")->required();
  oc->add_option("preset", oc_preset, "Machine preset")->check(CLI::IsMember({"bmw-i3"}));
  oc->add_flag("--verify", oc_verify, "Cross-check against the brute-force grid oracle");
  oc->add_option("--grid", oc_grid, "Oracle grid step in A")->check(CLI::PositiveNumber);
  oc->add_option("--format", oc_format, "Output format")->check(CLI::IsMember({"json", "csv"}));

  // case1 / case2
  std::string case_out;
  bool case_switched = false;
  auto add_case = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("output_dir", case_out, "Output directory (default out/<case>)");
    c->add_flag("--switched", case_switched, "Sine-PWM converter instead of the averaged model");
    return c;
  };
  auto* case1 = add_case("case1", "Built-in 43.5 -> 62.25 kW load step at 7000 rpm");
  auto* case2 = add_case("case2", "Built-in 34 -> 81 -> 34 kW load pulse at 8000 rpm");

  // verify
  auto* verify = app.add_subcommand("verify", "Run the acceptance suite");
  verify->add_option("-j,--jobs", jobs, "Criteria evaluated concurrently")->check(CLI::PositiveNumber);

  try {
    app.parse(protect_negative_numbers(argc, argv));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  if (run->parsed()) {
    const fs::path out_dir = unprotect(run_args.back());
    run_args.pop_back();
    std::vector<Job> list;
    std::set<std::string> names;
    try {
      for (const std::string& path : run_args) {
        Job job{load_config(unprotect(path)), out_dir};
        if (run_args.size() > 1) {
          // Separate directories keep concurrent runs from sharing files.
          std::string name = job.doc.scenario.name;
          for (int k = 2; !names.insert(name).second; ++k) name = job.doc.scenario.name + "-" + std::to_string(k);
          job.out_dir = out_dir / name;
        }
        list.push_back(std::move(job));
      }
    } catch (const Error& e) {
      std::cerr << e.what() << '\n';
      return kConfig;
    }
    return run_jobs(list, jobs);
  }

  if (case1->parsed() || case2->parsed()) {
    Job job{case1->parsed() ? builtin_case1() : builtin_case2(), {}};
    if (case_switched) {
      job.doc.scenario.fidelity = Fidelity::kSwitched;
      job.doc.scenario.integrator_step = 1e-6;
    }
    job.out_dir = case_out.empty() ? fs::path("out") / job.doc.scenario.name : fs::path(unprotect(case_out));
    return run_job(job);
  }

  if (oc->parsed()) {
    StaticProblem prob;
    try {
      prob.mp = MachineParams::bmw_i3();
      prob.p_e = parse_quantity(unprotect(oc_power), "power");
      prob.omega_r = rpm_to_electrical(parse_quantity(unprotect(oc_speed), "speed"), prob.mp.poles).omega_r;
      prob.v_dc = parse_quantity(unprotect(oc_vdc), "voltage");
      const StaticSolution s = solve_static(prob);
      bool agrees = true;
      StaticSolution o;
      if (oc_verify) {
        o = brute_force_oracle(prob, oc_grid);
        agrees = std::abs(o.i_d - s.i_d) <= 1.0 && std::abs(o.i_q - s.i_q) <= 1.0 && o.feasible == s.feasible;
      }
      char line[512];
      if (oc_format == "csv") {
        std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%.3f,%d,%d,%d", s.i_d, s.i_q, s.norm_sq, s.power,
                      s.feasible, s.active.current_circle, s.active.voltage_ellipse);
        std::cout << line;
        if (oc_verify) std::cout << ',' << o.i_d << ',' << o.i_q << ',' << agrees;
        std::cout << '\n';
      } else {
        std::snprintf(line, sizeof line,
                      "{\"i_d\": %.6f, \"i_q\": %.6f, \"norm_sq\": %.6f, \"power\": %.3f, \"feasible\": %s, "
                      "\"circle_active\": %s, \"ellipse_active\": %s",
                      s.i_d, s.i_q, s.norm_sq, s.power, s.feasible ? "true" : "false",
                      s.active.current_circle ? "true" : "false", s.active.voltage_ellipse ? "true" : "false");
        std::cout << line;
        if (oc_verify) {
          std::snprintf(line, sizeof line, ", \"oracle_i_d\": %.6f, \"oracle_i_q\": %.6f, \"oracle_agrees\": %s",
                        o.i_d, o.i_q, agrees ? "true" : "false");
          std::cout << line;
        }
        std::cout << "}\n";
      }
      if (!s.feasible) std::cerr << "warning: request is infeasible; showing the best-effort boundary point\n";
      return agrees ? kOk : kVerification;
    } catch (const Error& e) {
      std::cerr << e.what() << '\n';
      return kConfig;
    }
  }

  if (verify->parsed()) {
    const auto results = acceptance::run_all(jobs);
    return acceptance::report(std::cout, results) ? kOk : kVerification;
  }
  return kOk;
}
