#pragma once

// Experiment configuration and the command implementations behind the
// `focalseg` executable.
//
// Exit codes: 0 success, 1 configuration error (bad file, failed
// validation, unreadable inputs), 2 runtime failure during work.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "focalseg/json_io.hpp"

namespace focalseg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable that re-roots every output directory.
inline constexpr const char* kOutputRootEnv = "FOCALSEG_OUTPUT_ROOT";

const char* library_version();

struct SynthSpec {
  std::size_t count = 200;
  std::size_t size = 64;
  double fg_fraction = 0.12;
  std::uint64_t seed = 0;
};

struct DatasetSection {
  std::optional<std::filesystem::path> path;      // images/ + masks/
  std::optional<std::filesystem::path> manifest;  // JSON pair list
  std::optional<SynthSpec> synth;
  std::size_t height = 64, width = 64;
  NormalizeMode normalize = NormalizeMode::ZScore;
};

struct ExperimentConfig {
  DatasetSection dataset;
  SplitSpec split;
  NetworkConfig network;
  LossSpec loss;
  TrainConfig train;
  double threshold = kDefaultSelectionThreshold;
  std::filesystem::path output_dir = "runs/default";

  /// Checks every section's preconditions. Throws Error.
  void validate() const;
};

void to_json(json& j, const ExperimentConfig& c);
/// "loss" may be a LossSpec object or a derivable loss name.
void from_json(const json& j, ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// output_dir, re-rooted under $FOCALSEG_OUTPUT_ROOT when that is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& output_dir);

/// Loads, normalises and splits the configured dataset.
DataSplits prepare_data(const ExperimentConfig& config);

/// Parses argv and dispatches a subcommand; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace focalseg
