#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "focalseg/data.hpp"
#include "focalseg/losses.hpp"
#include "focalseg/network.hpp"

namespace focalseg {

struct TrainConfig {
  double lr0 = 1e-3;
  double plateau_factor = 0.1;
  int plateau_patience = 25;
  int early_stop_patience = 50;
  double min_delta = 1e-4;
  std::size_t batch_size = 1;
  int max_epochs = 1000;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.lr0 == b.lr0 && a.plateau_factor == b.plateau_factor &&
           a.plateau_patience == b.plateau_patience &&
           a.early_stop_patience == b.early_stop_patience && a.min_delta == b.min_delta &&
           a.batch_size == b.batch_size && a.max_epochs == b.max_epochs && a.seed == b.seed &&
           a.augment == b.augment;
  }
};

/// Adam with bias correction; beta1 0.9, beta2 0.999, eps 1e-7.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-7);

  /// Updates every parameter from its gradient. The parameter list must keep
  /// the same order between calls.
  void step(const std::vector<Parameter<float>*>& params);
  double lr() const noexcept { return lr_; }
  void set_lr(double lr) noexcept { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Multiplies the learning rate by `factor` once the monitored value has not
/// improved by more than `min_delta` for `patience` epochs; the count restarts
/// after each reduction.
class ReduceLROnPlateau {
 public:
  ReduceLROnPlateau(double lr, double factor, int patience, double min_delta);

  /// Returns true when this epoch triggered a reduction.
  bool step(double value);
  double lr() const noexcept { return lr_; }

 private:
  double lr_, factor_;
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
};

class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta);

  /// Returns true when training should stop after this epoch.
  bool step(double value);

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int wait_ = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  /// Focal weight of every focal placement at the end of the epoch.
  std::map<std::string, double> focal;
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // epoch with minimum validation loss
  bool stopped_early = false;

  double best_val_loss() const;
  /// epoch,train_loss,val_loss,lr[,<label>...]
  void write_csv(const std::filesystem::path& path) const;
};

struct FitResult {
  UNet<float> model;  // parameters from the best epoch
  History history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on already-normalised samples. FDPT maps (when the loss uses them)
/// are recomputed from each augmented mask. Throws NonFiniteLoss.
FitResult fit(UNet<float> model, std::span<const Sample> train, std::span<const Sample> val,
              const LossSpec& loss, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean loss over samples without augmentation.
double mean_loss(UNet<float>& model, std::span<const Sample> samples, const LossSpec& loss);

struct ImageMetrics {
  std::string id;
  double dsc = 0.0, precision = 0.0, recall = 0.0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  double mean_dsc = 0.0, mean_precision = 0.0, mean_recall = 0.0;
};

/// An empty truth and empty prediction score 1 on all three; an empty truth
/// with any predicted foreground scores 0. Undefined precision/recall are 0.
ImageMetrics image_metrics(const BinaryMask& predicted, const BinaryMask& truth);

/// Foreground probability > threshold counts as foreground.
BinaryMask binarize(const Prediction& pred, double threshold = 0.5);

MetricsReport evaluate(UNet<float>& model, std::span<const Sample> samples, double threshold = 0.5);

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace focalseg
