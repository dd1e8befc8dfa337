#include "focalseg/layers.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace focalseg {

std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
  // FNV-1a over the name, mixed with the model seed.
  std::uint64_t h = 1469598103934665603ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
Parameter<T>::Parameter(std::string n, std::vector<std::size_t> s)
    : name(std::move(n)), shape(std::move(s)) {
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  value.assign(count, T{});
  grad.assign(count, T{});
}

template <typename T>
void xavier_uniform(Parameter<T>& p, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  std::mt19937_64 rng(name_seed(seed, p.name));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

template <typename T>
T sigmoid(T z) {
  if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, std::size_t in, std::size_t out,
                  kernels::ConvGeometry geo, bool bias, std::uint64_t seed)
    : weight(name + ".weight", {out, in, geo.kernel, geo.kernel}),
      bias(name + ".bias", {bias ? out : 0}),
      in_(in),
      out_(out),
      geo_(geo),
      has_bias_(bias) {
  const std::size_t area = geo.kernel * geo.kernel;
  xavier_uniform(weight, in * area, out * area, seed);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.channels() != in_)
    throw Error(ErrorCode::ShapeMismatch, weight.name + ": expected " + std::to_string(in_) +
                                              " input channels, got " + x.shape_string());
  input_ = x;
  Tensor<T> out;
  kernels::conv2d_forward<T>(x, weight.value, bias.value, out_, geo_, out);
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& d_out, bool need_input_grad) {
  Tensor<T> d_in;
  kernels::conv2d_backward<T>(input_, weight.value, out_, geo_, d_out,
                              need_input_grad ? &d_in : nullptr, weight.grad, bias.grad);
  return d_in;
}

template <typename T>
void Conv2d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

// ------------------------------------------------------ ConvTranspose2x2

template <typename T>
ConvTranspose2x2<T>::ConvTranspose2x2(const std::string& name, std::size_t in, std::size_t out,
                                      std::uint64_t seed)
    : weight(name + ".weight", {in, out, 2, 2}), bias(name + ".bias", {out}), in_(in), out_(out) {
  xavier_uniform(weight, in * 4, out * 4, seed);
}

template <typename T>
Tensor<T> ConvTranspose2x2<T>::forward(const Tensor<T>& x) {
  if (x.channels() != in_) throw Error(ErrorCode::ShapeMismatch, weight.name + ": channel count");
  input_ = x;
  Tensor<T> out;
  kernels::conv_transpose2x2_forward<T>(x, weight.value, bias.value, out_, out);
  return out;
}

template <typename T>
Tensor<T> ConvTranspose2x2<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_in;
  kernels::conv_transpose2x2_backward<T>(input_, weight.value, out_, d_out, &d_in, weight.grad,
                                         bias.grad);
  return d_in;
}

template <typename T>
void ConvTranspose2x2<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------- InstanceNorm

template <typename T>
Tensor<T> InstanceNorm<T>::forward(const Tensor<T>& x) {
  normalized_ = Tensor<T>(x.channels(), x.height(), x.width());
  inv_std_.assign(x.channels(), T{});
  const auto channels = static_cast<std::ptrdiff_t>(x.channels());
  const auto n = static_cast<double>(x.plane());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < channels; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    auto src = x.channel(uc);
    double mean = 0.0;
    for (T v : src) mean += v;
    mean /= n;
    double var = 0.0;
    for (T v : src) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_[uc] = static_cast<T>(inv);
    auto dst = normalized_.channel(uc);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>((src[i] - mean) * inv);
  }
  return normalized_;
}

template <typename T>
Tensor<T> InstanceNorm<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_in(d_out.channels(), d_out.height(), d_out.width());
  const auto channels = static_cast<std::ptrdiff_t>(d_out.channels());
  const auto n = static_cast<double>(d_out.plane());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < channels; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    auto dy = d_out.channel(uc);
    auto y = normalized_.channel(uc);
    double mean_dy = 0.0, mean_dy_y = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) {
      mean_dy += dy[i];
      mean_dy_y += static_cast<double>(dy[i]) * y[i];
    }
    mean_dy /= n;
    mean_dy_y /= n;
    auto dx = d_in.channel(uc);
    const double inv = inv_std_[uc];
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] = static_cast<T>(inv * (dy[i] - mean_dy - y[i] * mean_dy_y));
  }
  return d_in;
}

// ------------------------------------------------------------------ ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.values()) v = v > T{0} ? v : T{0};
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_in = d_out;
  for (std::size_t i = 0; i < d_in.size(); ++i)
    if (!(output_[i] > T{0})) d_in[i] = T{0};
  return d_in;
}

// -------------------------------------------------------------- MaxPool2

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0)
    throw Error(ErrorCode::ShapeMismatch, "max pooling needs even spatial dims, got " +
                                              x.shape_string());
  in_h_ = x.height();
  in_w_ = x.width();
  const std::size_t h = in_h_ / 2, w = in_w_ / 2;
  Tensor<T> out(x.channels(), h, w);
  argmax_.assign(out.size(), 0);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        std::size_t best = (c * in_h_ + 2 * y) * in_w_ + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * in_h_ + 2 * y + dy) * in_w_ + 2 * xx + dx;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (c * h + y) * w + xx;
        out[o] = x[best];
        argmax_[o] = best;
      }
  return out;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& d_out) {
  Tensor<T> d_in(d_out.channels(), in_h_, in_w_);
  for (std::size_t o = 0; o < d_out.size(); ++o) d_in[argmax_[o]] += d_out[o];
  return d_in;
}

// ------------------------------------------------------------- ConvBlock

template <typename T>
ConvBlock<T>::ConvBlock(const std::string& name, std::size_t in, std::size_t out,
                        std::uint64_t seed)
    : conv1_(name + ".conv1", in, out, {3, 1, 1}, true, seed),
      conv2_(name + ".conv2", out, out, {3, 1, 1}, true, seed) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = relu1_.forward(norm1_.forward(conv1_.forward(x)));
  return relu2_.forward(norm2_.forward(conv2_.forward(h)));
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& d_out, bool need_input_grad) {
  Tensor<T> d = conv2_.backward(norm2_.backward(relu2_.backward(d_out)));
  return conv1_.backward(norm1_.backward(relu1_.backward(d)), need_input_grad);
}

template <typename T>
void ConvBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  conv1_.collect(out);
  conv2_.collect(out);
}

// --------------------------------------------------------------- helpers

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw Error(ErrorCode::ShapeMismatch, "concat: " + a.shape_string() + " vs " + b.shape_string());
  Tensor<T> out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first) {
  Tensor<T> a(first, x.height(), x.width());
  Tensor<T> b(x.channels() - first, x.height(), x.width());
  const auto cut = x.values().begin() + static_cast<std::ptrdiff_t>(a.size());
  std::copy(x.values().begin(), cut, a.values().begin());
  std::copy(cut, x.values().end(), b.values().begin());
  return {std::move(a), std::move(b)};
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double t;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t height, std::size_t width) {
  if (height == x.height() && width == x.width()) return x;
  const auto ty = bilinear_taps(x.height(), height);
  const auto tx = bilinear_taps(x.width(), width);
  Tensor<T> out(x.channels(), height, width);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const double top = (1.0 - b.t) * x(c, a.lo, b.lo) + b.t * x(c, a.lo, b.hi);
        const double bot = (1.0 - b.t) * x(c, a.hi, b.lo) + b.t * x(c, a.hi, b.hi);
        out(c, y, xx) = static_cast<T>((1.0 - a.t) * top + a.t * bot);
      }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& d_out, std::size_t in_height,
                                     std::size_t in_width) {
  if (in_height == d_out.height() && in_width == d_out.width()) return d_out;
  const auto ty = bilinear_taps(in_height, d_out.height());
  const auto tx = bilinear_taps(in_width, d_out.width());
  Tensor<T> d_in(d_out.channels(), in_height, in_width);
  for (std::size_t c = 0; c < d_out.channels(); ++c)
    for (std::size_t y = 0; y < d_out.height(); ++y)
      for (std::size_t xx = 0; xx < d_out.width(); ++xx) {
        const auto& a = ty[y];
        const auto& b = tx[xx];
        const double g = d_out(c, y, xx);
        d_in(c, a.lo, b.lo) += static_cast<T>(g * (1.0 - a.t) * (1.0 - b.t));
        d_in(c, a.lo, b.hi) += static_cast<T>(g * (1.0 - a.t) * b.t);
        d_in(c, a.hi, b.lo) += static_cast<T>(g * a.t * (1.0 - b.t));
        d_in(c, a.hi, b.hi) += static_cast<T>(g * a.t * b.t);
      }
  return d_in;
}

#define FOCALSEG_INSTANTIATE(T)                                                                  \
  template struct Parameter<T>;                                                                  \
  template void xavier_uniform<T>(Parameter<T>&, std::size_t, std::size_t, std::uint64_t);       \
  template T sigmoid<T>(T);                                                                      \
  template class Conv2d<T>;                                                                      \
  template class ConvTranspose2x2<T>;                                                            \
  template class InstanceNorm<T>;                                                                \
  template class ReLU<T>;                                                                        \
  template class MaxPool2<T>;                                                                    \
  template class ConvBlock<T>;                                                                   \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, std::size_t);     \
  template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, std::size_t, std::size_t);           \
  template Tensor<T> upsample_bilinear_backward<T>(const Tensor<T>&, std::size_t, std::size_t);

FOCALSEG_INSTANTIATE(float)
FOCALSEG_INSTANTIATE(double)
#undef FOCALSEG_INSTANTIATE

}  // namespace focalseg
