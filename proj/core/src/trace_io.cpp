#include "pmsg/trace_io.hpp"

#include <charconv>
#include <fstream>
#include <ostream>

#include "json.hpp"

#include "pmsg/error.hpp"

namespace pmsg {

namespace {

void put(std::string& line, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, res.ptr);
  line.push_back(',');
}

void put(std::string& line, int v) {
  char buf[16];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, res.ptr);
  line.push_back(',');
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  return f;
}

}  // namespace

const std::string& trace_header() {
  static const std::string header =
      "time,v_dc,i_d,i_q,i_d_ref,i_q_ref,d_d,d_q,i_a,i_b,i_c,d_a,d_b,d_c,i_load,p_e,omega_r,"
      "e_int,nmpc_iterations,nmpc_kkt,nmpc_converged,nmpc_relaxed,nmpc_held,ellipse_active,"
      "max_slack,inner_saturated";
  return header;
}

void write_trace_csv(std::ostream& out, const Trace& trace, int decimation) {
  if (decimation < 1) throw Error(ErrorCode::kInvalidArgument, "decimation must be >= 1");
  out << kTraceVersionLine << '\n' << trace_header() << '\n';
  std::string line;
  for (std::size_t i = 0; i < trace.rows.size(); i += static_cast<std::size_t>(decimation)) {
    const TraceRow& r = trace.rows[i];
    line.clear();
    for (double v : {r.time, r.v_dc, r.i_d, r.i_q, r.i_d_ref, r.i_q_ref, r.d_d, r.d_q}) put(line, v);
    for (double v : r.i_abc) put(line, v);
    for (double v : r.d_abc) put(line, v);
    for (double v : {r.i_load, r.p_e, r.omega_r, r.e_int}) put(line, v);
    put(line, r.nmpc_iterations);
    put(line, r.nmpc_kkt);
    for (bool b : {r.nmpc_converged, r.nmpc_relaxed, r.nmpc_held, r.ellipse_active}) put(line, b ? 1 : 0);
    put(line, r.max_slack);
    put(line, r.inner_saturated ? 1 : 0);
    line.back() = '\n';
    out << line;
  }
}

void write_trace_csv(const std::filesystem::path& path, const Trace& trace, int decimation) {
  std::ofstream f = open_for_write(path);
  write_trace_csv(f, trace, decimation);
  if (!f) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

std::string metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["scenario"] = m.scenario;
  j["v_dc_min"] = m.v_dc_min;
  j["v_dc_max"] = m.v_dc_max;
  j["nmpc_unconverged"] = m.nmpc_unconverged;
  j["nmpc_relaxed"] = m.nmpc_relaxed;
  j["nmpc_held"] = m.nmpc_held;
  j["saturated_samples"] = m.saturated_samples;
  j["segments"] = nlohmann::ordered_json::array();
  for (const SegmentMetrics& s : m.segments) {
    nlohmann::ordered_json o;
    o["start"] = s.start;
    o["end"] = s.end;
    o["load_power"] = s.load_power;
    o["speed_rpm"] = s.speed_rpm;
    o["i_d"] = s.i_d;
    o["i_q"] = s.i_q;
    o["v_dc_mean"] = s.v_dc_mean;
    o["settled"] = s.settled;
    o["settling_time"] = s.settling_time;
    o["v_dc_min"] = s.v_dc_min;
    o["v_dc_max"] = s.v_dc_max;
    o["v_dc_settled_error"] = s.v_dc_settled_error;
    o["rms_phase_current"] = s.rms_phase_current;
    o["optimum_i_d"] = s.optimum_i_d;
    o["optimum_i_q"] = s.optimum_i_q;
    o["optimality_ratio"] = s.optimality_ratio;
    o["peak_duty_abc"] = s.peak_duty_abc;
    o["ellipse_ratio"] = s.ellipse_ratio;
    o["ellipse_binding"] = s.ellipse_binding;
    j["segments"].push_back(std::move(o));
  }
  return j.dump(2);
}

void write_metrics_json(const std::filesystem::path& path, const Metrics& metrics) {
  std::ofstream f = open_for_write(path);
  f << metrics_to_json(metrics) << '\n';
  if (!f) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

}  // namespace pmsg
