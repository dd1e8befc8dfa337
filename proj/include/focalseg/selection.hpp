#pragma once

// Attention-module selection: train with zero-initialised focal weights,
// trace them per epoch and keep the sites whose weight reaches a threshold
// at the best-validation epoch.

#include <filesystem>
#include <utility>
#include <vector>

#include "focalseg/training.hpp"

namespace focalseg {

inline constexpr double kDefaultSelectionThreshold = 0.2;

struct FocalTrace {
  AttentionPlacement placement;
  std::vector<std::pair<int, double>> values;  // (epoch, weight)
  double final_weight = 0.0;

  /// Epochs strictly increasing, final equals the last value.
  void validate() const;
};

struct SelectionReport {
  std::vector<FocalTrace> traces;
  double threshold = kDefaultSelectionThreshold;
  std::vector<AttentionPlacement> kept;
  std::vector<AttentionPlacement> removed;

  void validate() const;
};

/// kept = traces with final >= threshold (raw signed value), the rest removed.
SelectionReport partition_traces(std::vector<FocalTrace> traces, double threshold);

/// Per-placement traces from a training history, cut at `last_epoch`.
std::vector<FocalTrace> traces_from_history(const History& history,
                                            const std::vector<AttentionPlacement>& placements,
                                            int last_epoch);

struct SelectionRun {
  SelectionReport report;
  FitResult fit;
};

/// Every placement must be focal Init0. Throws InvalidPlacement otherwise.
SelectionRun run_selection(const NetworkConfig& config, const DataSplits& data,
                           const LossSpec& loss, const TrainConfig& train,
                           double threshold = kDefaultSelectionThreshold,
                           const EpochCallback& on_epoch = {});

struct FinalizeResult {
  FitResult fit;
  MetricsReport metrics;
};

/// Retrains from scratch with the kept sites at focal Init1 and evaluates on
/// the test split.
FinalizeResult finalize(const SelectionReport& report, const NetworkConfig& config,
                        const DataSplits& data, const LossSpec& loss, const TrainConfig& train,
                        const EpochCallback& on_epoch = {});

/// Line plot of one trace with a dashed horizontal threshold line.
void plot_trace(const FocalTrace& trace, double threshold, const std::filesystem::path& png);

}  // namespace focalseg
