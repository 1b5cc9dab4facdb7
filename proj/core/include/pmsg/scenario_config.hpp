#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "pmsg/closed_loop_simulator.hpp"

namespace pmsg {

struct OutputSpec {
  std::string trace_file = "trace.csv";
  std::string metrics_file = "metrics.json";
  int decimation = 1;  // keep every n-th trace row
};

/// A parsed scenario file.
struct ConfigDocument {
  Scenario scenario;
  OutputSpec output;
};

/// Parses the sectioned `key = value` format. Dimensional values carry a unit
/// suffix (`0.090mH`, `7000rpm`, `40ms`); profiles are comma-separated
/// `value@time` lists. Throws Error(kConfigError) naming the key and line.
ConfigDocument parse_config(std::string_view text, std::string_view origin = "<string>");

/// Reads and parses a file; Error(kIoError) when unreadable.
ConfigDocument load_config(const std::filesystem::path& path);

/// Serializes back to the file format in SI base units; round-trips through parse_config.
std::string render_config(const ConfigDocument& doc);

/// Parses one quantity such as "43.5kW" against the unit family of `kind`
/// ("power", "speed", "voltage", ...). Returns the SI value (rpm for speed).
double parse_quantity(std::string_view text, std::string_view kind);

ConfigDocument builtin_case1();  // 7000 rpm, 43.5 kW -> 62.25 kW at 40 ms
ConfigDocument builtin_case2();  // 8000 rpm, 34 kW -> 81 kW -> 34 kW at 40/80 ms

}  // namespace pmsg
