#pragma once

// JSON conversions for configs and reports. Unknown keys are rejected with a
// ConfigError so that typos in experiment files do not pass silently.

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "focalseg/data.hpp"
#include "focalseg/losses.hpp"
#include "focalseg/network.hpp"
#include "focalseg/selection.hpp"
#include "focalseg/training.hpp"

namespace focalseg {

using nlohmann::json;

void to_json(json& j, const LossSpec& s);
void from_json(const json& j, LossSpec& s);
void to_json(json& j, const AttentionPlacement& p);
void from_json(const json& j, AttentionPlacement& p);
void to_json(json& j, const NetworkConfig& c);
void from_json(const json& j, NetworkConfig& c);
void to_json(json& j, const AugmentConfig& c);
void from_json(const json& j, AugmentConfig& c);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const SplitSpec& s);
void from_json(const json& j, SplitSpec& s);
void to_json(json& j, const MetricsReport& r);
void from_json(const json& j, MetricsReport& r);
void to_json(json& j, const FocalTrace& t);
void from_json(const json& j, FocalTrace& t);
void to_json(json& j, const SelectionReport& r);
void from_json(const json& j, SelectionReport& r);

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void require_known_keys(const json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view section);

/// Parses a file; syntax errors become ConfigError "path:line:column: message".
json read_json_file(const std::filesystem::path& path);
void write_json_file(const json& j, const std::filesystem::path& path);

/// 1-based line and column of a byte offset into `text`.
std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte_offset);

}  // namespace focalseg
