#pragma once

// JSON forms of the configuration and preprocessing records. Parsing is
// strict: unknown keys and wrong types raise ConfigError naming the field.

#include <string>

#include <nlohmann/json.hpp>

#include "ca3/data.hpp"
#include "ca3/networks.hpp"
#include "ca3/training.hpp"

namespace ca3 {

using Json = nlohmann::ordered_json;

Json to_json(const TargetConfig& c);
Json to_json(const AlarmConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const CsvSchema& s);
Json to_json(const NormalizationRecord& r);
Json to_json(const TapInfo& t);

// `path` prefixes field names in error messages, e.g. "target.kernel_size".
TargetConfig target_config_from_json(const Json& j, const std::string& path = "target");
AlarmConfig alarm_config_from_json(const Json& j, const std::string& path = "alarm");
TrainConfig train_config_from_json(const Json& j, const std::string& path = "train");
CsvSchema csv_schema_from_json(const Json& j, const std::string& path = "schema");
NormalizationRecord normalization_from_json(const Json& j, const std::string& path = "normalization");

// Helpers shared with the command-line config reader.
void require_object(const Json& j, const std::string& path);
void reject_unknown_keys(const Json& j, const std::string& path, std::initializer_list<const char*> known);

}  // namespace ca3
