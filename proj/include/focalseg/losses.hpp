#pragma once

// Extended Unified Focal loss family.
//
// Class convention: channel 0 is background, channel 1 foreground; the rare
// class defaults to 1. Every loss reads per-class probability grids and
// per-class indicator masks, optionally multiplies each pixel's contribution
// by a per-class weight map (DPT/FDPT), and can accumulate d(loss)/d(prob)
// into a caller-owned gradient.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "focalseg/distance_maps.hpp"
#include "focalseg/grid.hpp"

namespace focalseg {

inline constexpr double kProbabilityClip = 1e-7;

using ClassGrids = std::vector<Grid2D<double>>;
/// d(loss)/d(probability), one grid per class. Losses add into it.
using ProbGradient = ClassGrids;

/// Softmax output p_{c,i}.
struct Prediction {
  ClassGrids probs;

  std::size_t classes() const noexcept { return probs.size(); }
  std::size_t pixels() const noexcept { return probs.empty() ? 0 : probs.front().size(); }
  /// Throws ShapeMismatch / NonFiniteInput / InvalidArgument.
  void validate(double sum_tolerance = 1e-5) const;
};

Prediction softmax(const ClassGrids& logits);
/// Chain rule through the softmax: d(loss)/d(logit) from d(loss)/d(prob).
ClassGrids softmax_backward(const Prediction& pred, const ProbGradient& d_probs);
ProbGradient zero_gradient(const Prediction& pred);

/// {background, foreground} indicators for a binary ground truth.
std::vector<BinaryMask> one_hot(const BinaryMask& foreground);

enum class LossComponent { AF, AFT, CE, DICE };

std::string_view to_string(LossComponent c);
LossComponent loss_component_from_string(std::string_view name);

/// One member of the extended Unified Focal family.
///
/// The evaluated loss is the sum over `components` of
///   AF * lambda, AFT * (1 - lambda), CE * 1, DICE * 1,
/// with every pixel weighted by the per-class FDPT map when `epsilon` is set.
/// Components whose weight is exactly zero are skipped.
struct LossSpec {
  double lambda = 0.5;
  double delta = 0.6;
  double gamma = 0.2;
  std::optional<double> epsilon;
  /// Overrides gamma inside the AFT term only.
  std::optional<double> aft_gamma;
  /// No rare class means every class is treated as non-rare.
  std::optional<std::size_t> rare_class = 1;
  std::vector<LossComponent> components{LossComponent::AF, LossComponent::AFT};

  bool has(LossComponent c) const;
  double component_weight(LossComponent c) const;
  void validate() const;

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

struct LossTerm {
  std::string name;
  double weight = 1.0;
  double value = 0.0;
};

/// `scalar` equals the weighted sum of `breakdown`.
struct LossValue {
  double scalar = 0.0;
  std::vector<LossTerm> breakdown;

  double term(std::string_view name) const;
};

/// Tversky index of class `c`; 1 when the class is absent from both the
/// prediction support and the ground truth.
double tversky_index(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
                     std::size_t c, std::span<const WeightMap> weights = {});

/// 1 - mean_c TI_c
LossValue tversky_loss(const Prediction& pred, std::span<const BinaryMask> truth, double delta,
                       std::span<const WeightMap> weights = {}, ProbGradient* grad = nullptr);

/// mean over classes of (1 - TI_c) for non-rare classes and (1 - TI_r)^(1 - gamma)
/// for the rare class. Requires 0 <= gamma < 1.
LossValue asymmetric_focal_tversky_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                                        double delta, double gamma,
                                        std::optional<std::size_t> rare_class,
                                        std::span<const WeightMap> weights = {},
                                        ProbGradient* grad = nullptr);

/// Rare-class pixels: -(delta/N) log p. Other pixels: -((1-delta)/N) (1-p)^gamma log p,
/// with p the probability of the pixel's own class.
LossValue asymmetric_focal_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                                double delta, double gamma, std::optional<std::size_t> rare_class,
                                std::span<const WeightMap> weights = {},
                                ProbGradient* grad = nullptr);

/// Symmetric focal loss -(1/N) sum (1-p)^gamma log p.
LossValue focal_loss(const Prediction& pred, std::span<const BinaryMask> truth, double gamma,
                     std::span<const WeightMap> weights = {}, ProbGradient* grad = nullptr);

/// lambda * AF + (1 - lambda) * AFT, weighted by `weights` when given.
LossValue unified_focal_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                             const LossSpec& spec, std::span<const WeightMap> weights = {},
                             ProbGradient* grad = nullptr);

/// 1 - mean_c soft Dice.
LossValue dice_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                    std::span<const WeightMap> weights = {}, ProbGradient* grad = nullptr);

LossValue cross_entropy_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                             std::span<const WeightMap> weights = {}, ProbGradient* grad = nullptr);

LossValue dice_plus_ce(const Prediction& pred, std::span<const BinaryMask> truth,
                       std::span<const WeightMap> weights = {}, ProbGradient* grad = nullptr);

/// Evaluates any member of the family. FDPT maps are built from `truth` when
/// `spec.epsilon` is set.
LossValue evaluate_loss(const Prediction& pred, std::span<const BinaryMask> truth,
                        const LossSpec& spec, ProbGradient* grad = nullptr);

/// Hyperparameter fixing that reduces the extended family to a named loss.
LossSpec derive_loss(std::string_view name);
std::vector<std::string> derivable_losses();

}  // namespace focalseg
