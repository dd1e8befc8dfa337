#pragma once

// Channel (squeeze-and-excitation) and spatial (attention gate) attention,
// each with an optional focal layer between coefficient generation and
// recalibration.
//
// Focal layer: a -> a^f elementwise, with 0^0 = 1 and f == 1 returning a
// unchanged. For f < 0 coefficients are clipped to [1e-6, 1] first.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "focalseg/layers.hpp"

namespace focalseg {

inline constexpr double kFocalCoefficientFloor = 1e-6;

template <typename T>
struct AttentionResult {
  Tensor<T> output;
  /// SE: C x 1 x 1 channel weights. AG: 1 x H x W map at the skip resolution.
  Tensor<T> coefficients;
};

/// Elementwise a^f. Throws NonFiniteParam for non-finite f.
template <typename T>
Tensor<T> focal_layer(const Tensor<T>& a, T f);

std::size_t se_bottleneck_width(std::size_t channels, std::size_t reduction);

/// Explicit parameters for the stand-alone SE forward pass.
template <typename T>
struct SEParams {
  std::size_t channels = 0;
  std::size_t hidden = 0;
  std::vector<T> fc1_weight;  // hidden x channels
  std::vector<T> fc1_bias;    // hidden
  std::vector<T> fc2_weight;  // channels x hidden
  std::vector<T> fc2_bias;    // channels

  static SEParams zeros(std::size_t channels, std::size_t reduction);
};

/// Explicit parameters for the stand-alone attention-gate forward pass.
template <typename T>
struct AGParams {
  std::size_t x_channels = 0, g_channels = 0, inter = 0, stride = 1;
  std::vector<T> theta_weight;  // inter x x_channels x stride x stride, no bias
  std::vector<T> phi_weight;    // inter x g_channels
  std::vector<T> phi_bias;      // inter
  std::vector<T> psi_weight;    // inter
  T psi_bias{};

  static AGParams zeros(std::size_t x_channels, std::size_t g_channels, std::size_t stride);
};

template <typename T>
class SEBlock {
 public:
  SEBlock() = default;
  /// `focal_init` empty means a plain SE block without a focal layer.
  SEBlock(const std::string& name, std::size_t channels, std::size_t reduction,
          std::optional<T> focal_init, std::uint64_t seed);
  SEBlock(const SEParams<T>& params, std::optional<T> focal_value);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& d_out);
  void collect(std::vector<Parameter<T>*>& out);

  /// Post-focal channel coefficients of the last forward pass.
  const Tensor<T>& coefficients() const noexcept { return scaled_; }
  bool has_focal() const noexcept { return has_focal_; }

  Parameter<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias, focal;

 private:
  std::size_t channels_ = 0, hidden_ = 0;
  bool has_focal_ = false;
  Tensor<T> input_;
  std::vector<T> squeezed_, pre_relu_, hidden_act_;
  Tensor<T> excitation_, scaled_;
};

template <typename T>
class AttentionGate {
 public:
  AttentionGate() = default;
  /// x: skip connection channels, g: gating channels; the gate may be coarser
  /// than x by an integer factor.
  AttentionGate(const std::string& name, std::size_t x_channels, std::size_t g_channels,
                std::size_t stride, std::optional<T> focal_init, std::uint64_t seed);
  AttentionGate(const AGParams<T>& params, std::optional<T> focal_value);

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& g);
  /// Returns {d/dx, d/dg}.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& d_out);
  void collect(std::vector<Parameter<T>*>& out);

  /// Upsampled post-focal coefficients of the last forward pass.
  const Tensor<T>& coefficients() const noexcept { return upsampled_; }
  bool has_focal() const noexcept { return has_focal_; }
  std::size_t intermediate_width() const noexcept { return inter_; }

  Conv2d<T> theta_x, phi_g, psi;
  Parameter<T> focal;

 private:
  std::size_t x_channels_ = 0, g_channels_ = 0, inter_ = 0, stride_ = 1;
  bool has_focal_ = false;
  Tensor<T> x_, relu_out_, alpha_, focal_alpha_, upsampled_;
};

template <typename T>
AttentionResult<T> se_forward(const Tensor<T>& x, const SEParams<T>& params);
template <typename T>
AttentionResult<T> focal_se_forward(const Tensor<T>& x, const SEParams<T>& params, T focal);

template <typename T>
AttentionResult<T> ag_forward(const Tensor<T>& x, const Tensor<T>& g, const AGParams<T>& params);
template <typename T>
AttentionResult<T> focal_ag_forward(const Tensor<T>& x, const Tensor<T>& g,
                                    const AGParams<T>& params, T focal);

}  // namespace focalseg
