#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "json.hpp"

#include "clustsens/simulation.hpp"

namespace clustsens {

/// Parse a JSON scenario document. Keys not listed in the README are
/// rejected so typos do not silently fall back to defaults. Missing keys take
/// the defaults of the declared kind. Throws DomainError.
ScenarioConfig scenario_from_json(const nlohmann::json& doc);
ScenarioConfig load_scenario(const std::filesystem::path& path);

nlohmann::json scenario_to_json(const ScenarioConfig& config);

/// Column names of the metrics row for a scenario kind.
std::string metrics_csv_header(ScenarioKind kind);
/// One CSV row with `precision` significant digits. An absent SE prints empty.
std::string metrics_csv_row(const ScenarioConfig& config, const SimMetrics& metrics, int precision);

nlohmann::json metrics_to_json(const ScenarioConfig& config, const SimMetrics& metrics);

/// printf-style %.{precision}g formatting.
std::string format_number(double value, int precision);

}  // namespace clustsens
