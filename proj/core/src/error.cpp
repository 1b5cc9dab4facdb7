#include "pmsg/error.hpp"

namespace pmsg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonPositiveVoltage: return "NonPositiveVoltage";
    case ErrorCode::kVoltageFloor: return "VoltageFloor";
    case ErrorCode::kUncontrollableAxis: return "UncontrollableAxis";
    case ErrorCode::kUnstableRequest: return "UnstableRequest";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kMaxItersExceeded: return "MaxItersExceeded";
    case ErrorCode::kInfeasibleQp: return "InfeasibleQP";
    case ErrorCode::kSimulationDiverged: return "SimulationDiverged";
    case ErrorCode::kSegmentTooShort: return "SegmentTooShort";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace pmsg
