#pragma once

#include <string>

#include <json.hpp>

#include "qdb/aipw.hpp"
#include "qdb/estimator.hpp"
#include "qdb/simulate.hpp"

namespace qdb {

nlohmann::json to_json(const WeightSolution& w);
nlohmann::json to_json(const LassoFit& fit);
nlohmann::json to_json(const QuantileEstimate& est);
nlohmann::json to_json(const AipwEstimate& est);
nlohmann::json to_json(const McReport& report);
nlohmann::json to_json(const ContrastEstimate& est);

// Stable serialized form (sorted keys, two-space indent, trailing newline).
std::string render_report(const nlohmann::json& doc);

}  // namespace qdb
