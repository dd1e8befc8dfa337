#pragma once

// U-Net with four encoder levels and a bottleneck, configurable attention
// sites, non-affine instance normalisation and Glorot-uniform init.
//
// Attention positions:
//   SE 1-4  after encoder blocks (finest to coarsest)
//   SE 5    after the bottleneck block
//   SE 6-9  after decoder blocks (coarsest to finest)
//   AG 1-4  on the skip connection of encoder level 1-4, gated by the
//           coarser decoder feature before it is upsampled

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "focalseg/attention.hpp"
#include "focalseg/layers.hpp"
#include "focalseg/losses.hpp"

namespace focalseg {

inline constexpr std::size_t kUNetDepth = 4;

enum class AttentionKind { SE, AG };
enum class FocalMode { Off, Init0, Init1 };

std::string_view to_string(AttentionKind k);
std::string_view to_string(FocalMode m);
AttentionKind attention_kind_from_string(std::string_view s);
FocalMode focal_mode_from_string(std::string_view s);

struct AttentionPlacement {
  AttentionKind kind = AttentionKind::SE;
  int position = 1;
  FocalMode focal = FocalMode::Off;

  /// "SE3", "AG1"
  std::string label() const;
  /// Identity of the site; ignores the focal mode.
  bool same_site(const AttentionPlacement& o) const { return kind == o.kind && position == o.position; }

  friend auto operator<=>(const AttentionPlacement&, const AttentionPlacement&) = default;
};

int max_position(AttentionKind kind);

struct NetworkConfig {
  std::size_t in_channels = 3;
  std::size_t classes = 2;
  std::size_t base_channels = 32;
  std::size_t se_reduction = 8;
  std::vector<AttentionPlacement> placements;
  std::uint64_t seed = 0;

  /// Throws InvalidPlacement / InvalidArgument.
  void validate() const;
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Every SE site (USE-Net) or every AG site (Attention U-Net) with one focal mode.
std::vector<AttentionPlacement> all_sites(AttentionKind kind, FocalMode focal);

template <typename T>
class UNet {
 public:
  explicit UNet(NetworkConfig config);

  /// Returns per-class logits with the input's spatial size. Spatial dims
  /// must be multiples of 16.
  Tensor<T> forward(const Tensor<T>& image);
  /// Accumulates parameter gradients from d(loss)/d(logits) of the last forward.
  void backward(const Tensor<T>& d_logits);

  const NetworkConfig& config() const noexcept { return config_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  Parameter<T>* find_parameter(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad();

  /// Current focal weight per placement label, for placements with a focal layer.
  std::map<std::string, double> focal_weights() const;

 private:
  struct Site {
    std::optional<SEBlock<T>> se;
    std::optional<AttentionGate<T>> ag;
  };

  NetworkConfig config_;
  std::array<ConvBlock<T>, kUNetDepth> encoders_;
  std::array<MaxPool2<T>, kUNetDepth> pools_;
  ConvBlock<T> bottleneck_;
  std::array<ConvTranspose2x2<T>, kUNetDepth> ups_;
  std::array<ConvBlock<T>, kUNetDepth> decoders_;
  Conv2d<T> head_;
  std::array<std::optional<SEBlock<T>>, kUNetDepth> se_encoder_;
  std::optional<SEBlock<T>> se_bottleneck_;
  std::array<std::optional<SEBlock<T>>, kUNetDepth> se_decoder_;
  std::array<std::optional<AttentionGate<T>>, kUNetDepth> gates_;
  std::array<std::size_t, kUNetDepth> skip_channels_{};
};

/// Softmax of a forward pass as a double-precision Prediction.
template <typename T>
Prediction predict(UNet<T>& model, const Tensor<T>& image);

/// Flattens loss gradients on probabilities into d(loss)/d(logits).
template <typename T>
Tensor<T> logits_gradient(const Prediction& pred, const ProbGradient& d_probs);

template <typename T>
UNet<T> build_unet(const NetworkConfig& config);

/// Rebuilds the model keeping only the listed sites (focal modes are taken
/// from the current model); all remaining weights are copied.
template <typename T>
UNet<T> prune_placements(const UNet<T>& model, const std::vector<AttentionPlacement>& keep);

/// Copies every parameter of `from` that also exists in `to`, by name.
template <typename T>
void copy_parameters(const UNet<T>& from, UNet<T>& to);

/// Single-file checkpoint: magic, config JSON, then named float arrays.
void save_checkpoint(const UNet<float>& model, const std::filesystem::path& path);
UNet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace focalseg
