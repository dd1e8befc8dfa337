#pragma once

// Trainable building blocks with explicit forward/backward passes. Each layer
// caches what its backward pass needs, so a layer instance is used at most
// once per forward pass.

#include <cstdint>
#include <string>
#include <vector>

#include "focalseg/kernels.hpp"
#include "focalseg/tensor.hpp"

namespace focalseg {

template <typename T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s);
  std::size_t size() const noexcept { return value.size(); }
};

/// Glorot-uniform fill seeded from (seed, parameter name), so a parameter's
/// initial value does not depend on which other modules exist.
template <typename T>
void xavier_uniform(Parameter<T>& p, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

std::uint64_t name_seed(std::uint64_t seed, const std::string& name);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, kernels::ConvGeometry geo,
         bool bias, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x);
  /// Returns d/d(input); skipped (empty) when `need_input_grad` is false.
  Tensor<T> backward(const Tensor<T>& d_out, bool need_input_grad = true);
  void collect(std::vector<Parameter<T>*>& out);

  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  std::size_t in_ = 0, out_ = 0;
  kernels::ConvGeometry geo_;
  bool has_bias_ = true;
  Tensor<T> input_;
};

template <typename T>
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& d_out);
  void collect(std::vector<Parameter<T>*>& out);

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T> input_;
};

/// Per-channel standardisation over the spatial plane, no affine terms.
template <typename T>
class InstanceNorm {
 public:
  static constexpr double kEps = 1e-5;

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& d_out);

 private:
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& d_out);

 private:
  Tensor<T> output_;
};

template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& d_out);

 private:
  std::size_t in_h_ = 0, in_w_ = 0;
  std::vector<std::size_t> argmax_;
};

/// conv3x3 -> instance norm -> ReLU, twice.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& d_out, bool need_input_grad = true);
  void collect(std::vector<Parameter<T>*>& out);

 private:
  Conv2d<T> conv1_, conv2_;
  InstanceNorm<T> norm1_, norm2_;
  ReLU<T> relu1_, relu2_;
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first);

/// Bilinear resize with half-pixel centres and edge clamping.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t height, std::size_t width);
/// Adjoint of upsample_bilinear.
template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& d_out, std::size_t in_height,
                                     std::size_t in_width);

template <typename T>
T sigmoid(T z);

}  // namespace focalseg
