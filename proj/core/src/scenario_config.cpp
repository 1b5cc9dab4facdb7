#include "pmsg/scenario_config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "pmsg/error.hpp"

namespace pmsg {

namespace {

struct Unit {
  std::string_view suffix;
  double scale;
};

// First entry of each family is the base unit used when rendering.
const std::map<std::string_view, std::vector<Unit>>& unit_families() {
  static const std::map<std::string_view, std::vector<Unit>> families = {
      {"inductance", {{"H", 1.0}, {"mH", 1e-3}, {"uH", 1e-6}}},
      {"resistance", {{"Ohm", 1.0}, {"mOhm", 1e-3}, {"kOhm", 1e3}}},
      {"flux", {{"Vs", 1.0}, {"mVs", 1e-3}, {"Wb", 1.0}}},
      {"current", {{"A", 1.0}, {"kA", 1e3}}},
      {"torque", {{"Nm", 1.0}, {"kNm", 1e3}}},
      {"power", {{"W", 1.0}, {"kW", 1e3}, {"MW", 1e6}}},
      {"speed", {{"rpm", 1.0}}},
      {"voltage", {{"V", 1.0}, {"mV", 1e-3}, {"kV", 1e3}}},
      {"time", {{"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}}},
      {"frequency", {{"Hz", 1.0}, {"kHz", 1e3}}},
      {"capacitance", {{"F", 1.0}, {"mF", 1e-3}, {"uF", 1e-6}}},
      {"rate", {{"rad/s", 1.0}, {"1/s", 1.0}}},
      {"number", {{"", 1.0}}},
  };
  return families;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Parses "<number><suffix>"; throws std::invalid_argument with a short reason.
double quantity(std::string_view text, std::string_view kind) {
  const auto fam = unit_families().find(kind);
  if (fam == unit_families().end()) throw std::invalid_argument("unknown unit family");
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr == text.data()) throw std::invalid_argument("expected a number");
  const std::string_view suffix = trim(text.substr(static_cast<std::size_t>(ptr - text.data())));
  for (const Unit& u : fam->second) {
    if (u.suffix == suffix) {
      if (!std::isfinite(value)) throw std::invalid_argument("value is not finite");
      // Divide for sub-unit prefixes so that e.g. 5us is exactly 5e-6.
      return u.scale < 1.0 ? value / std::round(1.0 / u.scale) : value * u.scale;
    }
  }
  std::string expected;
  for (const Unit& u : fam->second) {
    if (!expected.empty()) expected += ", ";
    expected += u.suffix.empty() ? "no unit" : std::string(u.suffix);
  }
  throw std::invalid_argument("bad unit '" + std::string(suffix) + "' (expected " + expected + ")");
}

std::string render_quantity(double v, std::string_view kind) {
  return format_double(v) + std::string(unit_families().at(kind).front().suffix);
}

StepProfile profile(std::string_view text, std::string_view kind) {
  std::vector<Breakpoint> points;
  while (true) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    const auto at = item.find('@');
    Breakpoint p;
    p.value = quantity(item.substr(0, at), kind);
    p.start = at == std::string_view::npos ? 0.0 : quantity(item.substr(at + 1), "time");
    if (!points.empty() && !(p.start > points.back().start)) {
      throw std::invalid_argument("profile times must increase");
    }
    points.push_back(p);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (points.front().start != 0.0) throw std::invalid_argument("profile must start at 0s");
  return StepProfile(std::move(points));
}

std::string render_profile(const StepProfile& prof, std::string_view kind) {
  std::string out;
  for (const Breakpoint& p : prof.points()) {
    if (!out.empty()) out += ", ";
    out += render_quantity(p.value, kind) + "@" + render_quantity(p.start, "time");
  }
  return out;
}

int integer(std::string_view text) {
  text = trim(text);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) throw std::invalid_argument("expected an integer");
  return v;
}

bool boolean(std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "no" || text == "off") return false;
  throw std::invalid_argument("expected true or false");
}

struct Field {
  std::string_view section;
  std::string_view key;
  std::function<void(ConfigDocument&, std::string_view)> set;
  std::function<std::string(const ConfigDocument&)> get;
};

#define PMSG_QTY(sec, name, kind, member)                                                      \
  Field {                                                                                       \
    sec, name, [](ConfigDocument& d, std::string_view v) { d.member = quantity(v, kind); },     \
        [](const ConfigDocument& d) { return render_quantity(d.member, kind); }                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // The preset is applied when read; explicit constants must follow it.
      {"machine", "preset",
       [](ConfigDocument& d, std::string_view v) {
         if (trim(v) != "bmw-i3") throw std::invalid_argument("unknown preset (known: bmw-i3)");
         d.scenario.machine = MachineParams::bmw_i3();
       },
       nullptr},
      PMSG_QTY("machine", "l_d", "inductance", scenario.machine.l_d),
      PMSG_QTY("machine", "l_q", "inductance", scenario.machine.l_q),
      PMSG_QTY("machine", "r_s", "resistance", scenario.machine.r_s),
      PMSG_QTY("machine", "lambda_m", "flux", scenario.machine.lambda_m),
      {"machine", "poles",
       [](ConfigDocument& d, std::string_view v) { d.scenario.machine.poles = integer(v); },
       [](const ConfigDocument& d) { return std::to_string(d.scenario.machine.poles); }},
      PMSG_QTY("machine", "i_peak", "current", scenario.machine.i_peak),
      PMSG_QTY("machine", "t_max", "torque", scenario.machine.t_max),
      PMSG_QTY("machine", "p_max", "power", scenario.machine.p_max),
      PMSG_QTY("machine", "n_max", "speed", scenario.machine.n_max),

      PMSG_QTY("dc_link", "capacitance", "capacitance", scenario.dc_link.c),
      PMSG_QTY("dc_link", "resistance", "resistance", scenario.dc_link.r),
      PMSG_QTY("dc_link", "v_ref", "voltage", scenario.dc_link.v_dc_ref),
      PMSG_QTY("dc_link", "v_min", "voltage", scenario.dc_link.v_dc_min),
      PMSG_QTY("dc_link", "v_max", "voltage", scenario.dc_link.v_dc_max),

      PMSG_QTY("inner", "d_pole", "rate", scenario.inner.d_pole),
      PMSG_QTY("inner", "q_pole", "rate", scenario.inner.q_pole),
      {"inner", "observer",
       [](ConfigDocument& d, std::string_view v) {
         v = trim(v);
         if (v == "identity") d.scenario.inner.observer = ObserverMode::kIdentity;
         else if (v == "luenberger") d.scenario.inner.observer = ObserverMode::kLuenberger;
         else throw std::invalid_argument("expected identity or luenberger");
       },
       [](const ConfigDocument& d) {
         return std::string(d.scenario.inner.observer == ObserverMode::kIdentity ? "identity" : "luenberger");
       }},
      PMSG_QTY("inner", "observer_gain", "rate", scenario.inner.observer_gain),
      PMSG_QTY("inner", "sample_time", "time", scenario.inner.sample_time),

      {"nmpc", "horizon",
       [](ConfigDocument& d, std::string_view v) { d.scenario.nmpc.horizon_n = integer(v); },
       [](const ConfigDocument& d) { return std::to_string(d.scenario.nmpc.horizon_n); }},
      PMSG_QTY("nmpc", "sample_time", "time", scenario.nmpc.t_s),
      PMSG_QTY("nmpc", "q_v", "number", scenario.nmpc.q_v),
      PMSG_QTY("nmpc", "q_e", "number", scenario.nmpc.q_e),
      PMSG_QTY("nmpc", "r_d", "number", scenario.nmpc.r_d),
      PMSG_QTY("nmpc", "r_q", "number", scenario.nmpc.r_q),
      {"nmpc", "max_iters",
       [](ConfigDocument& d, std::string_view v) { d.scenario.nmpc.max_sqp_iters = integer(v); },
       [](const ConfigDocument& d) { return std::to_string(d.scenario.nmpc.max_sqp_iters); }},
      PMSG_QTY("nmpc", "kkt_tol", "number", scenario.nmpc.kkt_tol),
      {"nmpc", "hessian",
       [](ConfigDocument& d, std::string_view v) {
         v = trim(v);
         if (v == "exact") d.scenario.nmpc.hessian = HessianMode::kExact;
         else if (v == "bfgs") d.scenario.nmpc.hessian = HessianMode::kDampedBfgs;
         else throw std::invalid_argument("expected exact or bfgs");
       },
       [](const ConfigDocument& d) {
         return std::string(d.scenario.nmpc.hessian == HessianMode::kExact ? "exact" : "bfgs");
       }},
      PMSG_QTY("nmpc", "slack_quadratic", "number", scenario.nmpc.slack_quadratic),
      PMSG_QTY("nmpc", "slack_linear", "number", scenario.nmpc.slack_linear),

      {"scenario", "name",
       [](ConfigDocument& d, std::string_view v) { d.scenario.name = std::string(trim(v)); },
       [](const ConfigDocument& d) { return d.scenario.name; }},
      {"scenario", "speed",
       [](ConfigDocument& d, std::string_view v) { d.scenario.speed_rpm = profile(v, "speed"); },
       [](const ConfigDocument& d) { return render_profile(d.scenario.speed_rpm, "speed"); }},
      {"scenario", "load",
       [](ConfigDocument& d, std::string_view v) { d.scenario.load_power = profile(v, "power"); },
       [](const ConfigDocument& d) { return render_profile(d.scenario.load_power, "power"); }},
      PMSG_QTY("scenario", "duration", "time", scenario.duration),
      {"scenario", "fidelity",
       [](ConfigDocument& d, std::string_view v) {
         v = trim(v);
         if (v == "averaged") d.scenario.fidelity = Fidelity::kAveraged;
         else if (v == "switched") d.scenario.fidelity = Fidelity::kSwitched;
         else throw std::invalid_argument("expected averaged or switched");
       },
       [](const ConfigDocument& d) {
         return std::string(d.scenario.fidelity == Fidelity::kAveraged ? "averaged" : "switched");
       }},
      PMSG_QTY("scenario", "integrator_step", "time", scenario.integrator_step),
      PMSG_QTY("scenario", "f_sw", "frequency", scenario.f_sw),
      {"scenario", "settled_start",
       [](ConfigDocument& d, std::string_view v) { d.scenario.settled_start = boolean(v); },
       [](const ConfigDocument& d) { return std::string(d.scenario.settled_start ? "true" : "false"); }},
      PMSG_QTY("scenario", "initial_v_dc", "voltage", scenario.initial.v_dc),
      PMSG_QTY("scenario", "initial_i_d", "current", scenario.initial.i_d),
      PMSG_QTY("scenario", "initial_i_q", "current", scenario.initial.i_q),

      {"output", "trace",
       [](ConfigDocument& d, std::string_view v) { d.output.trace_file = std::string(trim(v)); },
       [](const ConfigDocument& d) { return d.output.trace_file; }},
      {"output", "metrics",
       [](ConfigDocument& d, std::string_view v) { d.output.metrics_file = std::string(trim(v)); },
       [](const ConfigDocument& d) { return d.output.metrics_file; }},
      {"output", "decimation",
       [](ConfigDocument& d, std::string_view v) {
         d.output.decimation = integer(v);
         if (d.output.decimation < 1) throw std::invalid_argument("must be >= 1");
       },
       [](const ConfigDocument& d) { return std::to_string(d.output.decimation); }},
  };
  return table;
}

#undef PMSG_QTY

// Controller limits follow the plant description.
void sync_limits(ConfigDocument& doc) {
  NmpcConfig& n = doc.scenario.nmpc;
  n.v_dc_min = doc.scenario.dc_link.v_dc_min;
  n.v_dc_max = doc.scenario.dc_link.v_dc_max;
  n.v_dc_ref = doc.scenario.dc_link.v_dc_ref;
  n.i_peak = doc.scenario.machine.i_peak;
}

}  // namespace

double parse_quantity(std::string_view text, std::string_view kind) {
  try {
    return quantity(text, kind);
  } catch (const std::invalid_argument& e) {
    throw Error(ErrorCode::kConfigError, "'" + std::string(text) + "': " + e.what());
  }
}

ConfigDocument parse_config(std::string_view text, std::string_view origin) {
  ConfigDocument doc;
  std::string section;
  std::set<std::string> seen;
  std::set<std::string> machine_constants;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kConfigError,
                std::string(origin) + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.section == section; });
      if (!known) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) fail("key '" + key + "' outside a section");
    const std::string qualified = section + "." + key;
    const auto field = std::find_if(fields().begin(), fields().end(), [&](const Field& f) {
      return f.section == section && f.key == key;
    });
    if (field == fields().end()) fail("unknown key '" + qualified + "'");
    if (!seen.insert(qualified).second) fail("duplicate key '" + qualified + "'");
    if (value.empty()) fail("key '" + qualified + "' has no value");
    if (section == "machine") {
      if (key == "preset" && !machine_constants.empty()) {
        fail("key 'machine.preset' must precede explicit machine constants");
      }
      if (key != "preset") machine_constants.insert(key);
    }
    try {
      field->set(doc, value);
    } catch (const std::invalid_argument& e) {
      fail("key '" + qualified + "': " + e.what());
    }
  }
  sync_limits(doc);
  if (doc.scenario.speed_rpm.empty()) {
    throw Error(ErrorCode::kConfigError, std::string(origin) + ": missing key 'scenario.speed'");
  }
  if (doc.scenario.load_power.empty()) {
    throw Error(ErrorCode::kConfigError, std::string(origin) + ": missing key 'scenario.load'");
  }
  try {
    doc.scenario.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfigError, std::string(origin) + ": " + e.what());
  }
  return doc;
}

ConfigDocument load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string render_config(const ConfigDocument& doc) {
  std::string out;
  std::string_view section;
  for (const Field& f : fields()) {
    if (!f.get) continue;
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + std::string(section) + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(doc) + "\n";
  }
  return out;
}

namespace {

ConfigDocument builtin_base(std::string name) {
  ConfigDocument doc;
  doc.scenario.name = std::move(name);
  doc.scenario.machine = MachineParams::bmw_i3();
  sync_limits(doc);
  return doc;
}

}  // namespace

ConfigDocument builtin_case1() {
  ConfigDocument doc = builtin_base("case1");
  doc.scenario.speed_rpm = StepProfile::constant(7000.0);
  doc.scenario.load_power = StepProfile({{0.0, 43.5e3}, {0.04, 62.25e3}});
  doc.scenario.duration = 0.1;
  return doc;
}

ConfigDocument builtin_case2() {
  ConfigDocument doc = builtin_base("case2");
  doc.scenario.speed_rpm = StepProfile::constant(8000.0);
  doc.scenario.load_power = StepProfile({{0.0, 34e3}, {0.04, 81e3}, {0.08, 34e3}});
  doc.scenario.duration = 0.12;
  return doc;
}

}  // namespace pmsg
