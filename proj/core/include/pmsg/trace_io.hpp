#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "pmsg/closed_loop_simulator.hpp"

namespace pmsg {

/// First line of every trace file; bump when the column set changes.
inline constexpr const char* kTraceVersionLine = "# pmsg-trace v1";

/// Column names in file order.
const std::string& trace_header();

/// Writes the version line, the header and every `decimation`-th row.
void write_trace_csv(std::ostream& out, const Trace& trace, int decimation = 1);
void write_trace_csv(const std::filesystem::path& path, const Trace& trace, int decimation = 1);

std::string metrics_to_json(const Metrics& metrics);
void write_metrics_json(const std::filesystem::path& path, const Metrics& metrics);

}  // namespace pmsg
