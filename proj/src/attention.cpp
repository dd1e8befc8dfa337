#include "focalseg/attention.hpp"

#include <algorithm>
#include <cmath>

namespace focalseg {
namespace {

template <typename T>
void check_focal(T f) {
  if (!std::isfinite(f)) throw Error(ErrorCode::NonFiniteParam, "focal parameter is not finite");
}

template <typename T>
T focal_value(T a, T f) {
  if (f == T{1}) return a;
  if (f == T{0}) return T{1};
  if (f < T{0}) return std::pow(std::max(a, static_cast<T>(kFocalCoefficientFloor)), f);
  return std::pow(a, f);
}

// d(a^f)/da
template <typename T>
T focal_grad_coeff(T a, T f) {
  if (f == T{0}) return T{0};
  if (f == T{1}) return T{1};
  return f * std::pow(std::max(a, static_cast<T>(kFocalCoefficientFloor)), f - T{1});
}

// d(a^f)/df given y = a^f
template <typename T>
T focal_grad_param(T a, T y) {
  return y * std::log(std::max(a, static_cast<T>(kFocalCoefficientFloor)));
}

}  // namespace

template <typename T>
Tensor<T> focal_layer(const Tensor<T>& a, T f) {
  check_focal(f);
  Tensor<T> out = a;
  for (auto& v : out.values()) v = focal_value(v, f);
  return out;
}

std::size_t se_bottleneck_width(std::size_t channels, std::size_t reduction) {
  if (reduction == 0) throw Error(ErrorCode::InvalidArgument, "SE reduction ratio must be positive");
  return std::max<std::size_t>(1, channels / reduction);
}

template <typename T>
SEParams<T> SEParams<T>::zeros(std::size_t channels, std::size_t reduction) {
  SEParams p;
  p.channels = channels;
  p.hidden = se_bottleneck_width(channels, reduction);
  p.fc1_weight.assign(p.hidden * channels, T{});
  p.fc1_bias.assign(p.hidden, T{});
  p.fc2_weight.assign(channels * p.hidden, T{});
  p.fc2_bias.assign(channels, T{});
  return p;
}

template <typename T>
AGParams<T> AGParams<T>::zeros(std::size_t x_channels, std::size_t g_channels, std::size_t stride) {
  AGParams p;
  p.x_channels = x_channels;
  p.g_channels = g_channels;
  p.inter = std::max<std::size_t>(1, x_channels / 2);
  p.stride = stride;
  p.theta_weight.assign(p.inter * x_channels * stride * stride, T{});
  p.phi_weight.assign(p.inter * g_channels, T{});
  p.phi_bias.assign(p.inter, T{});
  p.psi_weight.assign(p.inter, T{});
  return p;
}

// ------------------------------------------------------------------ SE

template <typename T>
SEBlock<T>::SEBlock(const std::string& name, std::size_t channels, std::size_t reduction,
                    std::optional<T> focal_init, std::uint64_t seed)
    : channels_(channels), hidden_(se_bottleneck_width(channels, reduction)) {
  fc1_weight = Parameter<T>(name + ".fc1.weight", {hidden_, channels});
  fc1_bias = Parameter<T>(name + ".fc1.bias", {hidden_});
  fc2_weight = Parameter<T>(name + ".fc2.weight", {channels, hidden_});
  fc2_bias = Parameter<T>(name + ".fc2.bias", {channels});
  xavier_uniform(fc1_weight, channels, hidden_, seed);
  xavier_uniform(fc2_weight, hidden_, channels, seed);
  if (focal_init) {
    check_focal(*focal_init);
    has_focal_ = true;
    focal = Parameter<T>(name + ".focal", {1});
    focal.value[0] = *focal_init;
  }
}

template <typename T>
SEBlock<T>::SEBlock(const SEParams<T>& p, std::optional<T> focal_value)
    : channels_(p.channels), hidden_(p.hidden) {
  if (p.fc1_weight.size() != hidden_ * channels_ || p.fc1_bias.size() != hidden_ ||
      p.fc2_weight.size() != channels_ * hidden_ || p.fc2_bias.size() != channels_)
    throw Error(ErrorCode::ShapeMismatch, "SE parameter sizes");
  fc1_weight = Parameter<T>("se.fc1.weight", {hidden_, channels_});
  fc1_bias = Parameter<T>("se.fc1.bias", {hidden_});
  fc2_weight = Parameter<T>("se.fc2.weight", {channels_, hidden_});
  fc2_bias = Parameter<T>("se.fc2.bias", {channels_});
  fc1_weight.value = p.fc1_weight;
  fc1_bias.value = p.fc1_bias;
  fc2_weight.value = p.fc2_weight;
  fc2_bias.value = p.fc2_bias;
  if (focal_value) {
    check_focal(*focal_value);
    has_focal_ = true;
    focal = Parameter<T>("se.focal", {1});
    focal.value[0] = *focal_value;
  }
}

template <typename T>
Tensor<T> SEBlock<T>::forward(const Tensor<T>& x) {
  if (x.channels() != channels_)
    throw Error(ErrorCode::ShapeMismatch, "SE block expects " + std::to_string(channels_) +
                                              " channels, got " + x.shape_string());
  input_ = x;
  const double n = static_cast<double>(x.plane());
  squeezed_.assign(channels_, T{});
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (T v : x.channel(c)) sum += v;
    squeezed_[c] = static_cast<T>(sum / n);
  }
  pre_relu_.assign(hidden_, T{});
  hidden_act_.assign(hidden_, T{});
  for (std::size_t j = 0; j < hidden_; ++j) {
    T z = fc1_bias.value[j];
    for (std::size_t c = 0; c < channels_; ++c) z += fc1_weight.value[j * channels_ + c] * squeezed_[c];
    pre_relu_[j] = z;
    hidden_act_[j] = z > T{0} ? z : T{0};
  }
  excitation_ = Tensor<T>(channels_, 1, 1);
  for (std::size_t c = 0; c < channels_; ++c) {
    T z = fc2_bias.value[c];
    for (std::size_t j = 0; j < hidden_; ++j) z += fc2_weight.value[c * hidden_ + j] * hidden_act_[j];
    excitation_[c] = sigmoid(z);
  }
  scaled_ = has_focal_ ? focal_layer(excitation_, focal.value[0]) : excitation_;

  Tensor<T> out = x;
  for (std::size_t c = 0; c < channels_; ++c) {
    const T s = scaled_[c];
    for (auto& v : out.channel(c)) v *= s;
  }
  return out;
}

template <typename T>
Tensor<T> SEBlock<T>::backward(const Tensor<T>& d_out) {
  require_same_shape(d_out, input_, "SE backward");
  const double n = static_cast<double>(input_.plane());
  Tensor<T> d_in = d_out;
  std::vector<T> d_scaled(channels_, T{});
  for (std::size_t c = 0; c < channels_; ++c) {
    auto dy = d_out.channel(c);
    auto x = input_.channel(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < dy.size(); ++i) acc += static_cast<double>(dy[i]) * x[i];
    d_scaled[c] = static_cast<T>(acc);
    const T s = scaled_[c];
    for (auto& v : d_in.channel(c)) v *= s;
  }
  std::vector<T> d_exc = d_scaled;
  if (has_focal_) {
    const T f = focal.value[0];
    double df = 0.0;
    for (std::size_t c = 0; c < channels_; ++c) {
      df += static_cast<double>(d_scaled[c]) * focal_grad_param(excitation_[c], scaled_[c]);
      d_exc[c] = d_scaled[c] * focal_grad_coeff(excitation_[c], f);
    }
    focal.grad[0] += static_cast<T>(df);
  }
  std::vector<T> d_hidden(hidden_, T{});
  for (std::size_t c = 0; c < channels_; ++c) {
    const T e = excitation_[c];
    const T dz = d_exc[c] * e * (T{1} - e);
    fc2_bias.grad[c] += dz;
    for (std::size_t j = 0; j < hidden_; ++j) {
      fc2_weight.grad[c * hidden_ + j] += dz * hidden_act_[j];
      d_hidden[j] += dz * fc2_weight.value[c * hidden_ + j];
    }
  }
  std::vector<T> d_squeezed(channels_, T{});
  for (std::size_t j = 0; j < hidden_; ++j) {
    if (!(pre_relu_[j] > T{0})) continue;
    const T dz = d_hidden[j];
    fc1_bias.grad[j] += dz;
    for (std::size_t c = 0; c < channels_; ++c) {
      fc1_weight.grad[j * channels_ + c] += dz * squeezed_[c];
      d_squeezed[c] += dz * fc1_weight.value[j * channels_ + c];
    }
  }
  for (std::size_t c = 0; c < channels_; ++c) {
    const T share = static_cast<T>(d_squeezed[c] / n);
    for (auto& v : d_in.channel(c)) v += share;
  }
  return d_in;
}

template <typename T>
void SEBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&fc1_weight);
  out.push_back(&fc1_bias);
  out.push_back(&fc2_weight);
  out.push_back(&fc2_bias);
  if (has_focal_) out.push_back(&focal);
}

// ------------------------------------------------------------------ AG

template <typename T>
AttentionGate<T>::AttentionGate(const std::string& name, std::size_t x_channels,
                                std::size_t g_channels, std::size_t stride,
                                std::optional<T> focal_init, std::uint64_t seed)
    : theta_x(name + ".theta", x_channels, std::max<std::size_t>(1, x_channels / 2),
              {stride, stride, 0}, false, seed),
      phi_g(name + ".phi", g_channels, std::max<std::size_t>(1, x_channels / 2), {1, 1, 0}, true,
            seed),
      psi(name + ".psi", std::max<std::size_t>(1, x_channels / 2), 1, {1, 1, 0}, true, seed),
      x_channels_(x_channels),
      g_channels_(g_channels),
      inter_(std::max<std::size_t>(1, x_channels / 2)),
      stride_(stride) {
  if (stride == 0) throw Error(ErrorCode::InvalidArgument, "attention gate stride must be >= 1");
  if (focal_init) {
    check_focal(*focal_init);
    has_focal_ = true;
    focal = Parameter<T>(name + ".focal", {1});
    focal.value[0] = *focal_init;
  }
}

template <typename T>
AttentionGate<T>::AttentionGate(const AGParams<T>& p, std::optional<T> focal_value)
    : AttentionGate("ag", p.x_channels, p.g_channels, p.stride, focal_value, 0) {
  if (p.inter != inter_ || p.theta_weight.size() != theta_x.weight.size() ||
      p.phi_weight.size() != phi_g.weight.size() || p.phi_bias.size() != phi_g.bias.size() ||
      p.psi_weight.size() != psi.weight.size())
    throw Error(ErrorCode::ShapeMismatch, "attention gate parameter sizes");
  theta_x.weight.value = p.theta_weight;
  phi_g.weight.value = p.phi_weight;
  phi_g.bias.value = p.phi_bias;
  psi.weight.value = p.psi_weight;
  psi.bias.value[0] = p.psi_bias;
}

template <typename T>
Tensor<T> AttentionGate<T>::forward(const Tensor<T>& x, const Tensor<T>& g) {
  if (x.channels() != x_channels_ || g.channels() != g_channels_ ||
      x.height() != stride_ * g.height() || x.width() != stride_ * g.width())
    throw Error(ErrorCode::ShapeMismatch, "attention gate: skip " + x.shape_string() + ", gate " +
                                              g.shape_string() + ", stride " +
                                              std::to_string(stride_));
  x_ = x;
  Tensor<T> sum = theta_x.forward(x);
  const Tensor<T> proj_g = phi_g.forward(g);
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += proj_g[i];
  relu_out_ = sum;
  for (auto& v : relu_out_.values()) v = v > T{0} ? v : T{0};
  alpha_ = psi.forward(relu_out_);
  for (auto& v : alpha_.values()) v = sigmoid(v);
  focal_alpha_ = has_focal_ ? focal_layer(alpha_, focal.value[0]) : alpha_;
  upsampled_ = upsample_bilinear(focal_alpha_, x.height(), x.width());

  Tensor<T> out = x;
  const std::size_t plane = x.plane();
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= upsampled_[i];
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> AttentionGate<T>::backward(const Tensor<T>& d_out) {
  require_same_shape(d_out, x_, "attention gate backward");
  const std::size_t plane = x_.plane();
  Tensor<T> d_x = d_out;
  Tensor<T> d_up(1, x_.height(), x_.width());
  for (std::size_t c = 0; c < x_.channels(); ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      d_up[i] += d_out[c * plane + i] * x_[c * plane + i];
      d_x[c * plane + i] *= upsampled_[i];
    }
  Tensor<T> d_alpha = upsample_bilinear_backward(d_up, alpha_.height(), alpha_.width());
  if (has_focal_) {
    const T f = focal.value[0];
    double df = 0.0;
    for (std::size_t i = 0; i < d_alpha.size(); ++i) {
      df += static_cast<double>(d_alpha[i]) * focal_grad_param(alpha_[i], focal_alpha_[i]);
      d_alpha[i] *= focal_grad_coeff(alpha_[i], f);
    }
    focal.grad[0] += static_cast<T>(df);
  }
  for (std::size_t i = 0; i < d_alpha.size(); ++i) d_alpha[i] *= alpha_[i] * (T{1} - alpha_[i]);
  Tensor<T> d_sum = psi.backward(d_alpha);
  for (std::size_t i = 0; i < d_sum.size(); ++i)
    if (!(relu_out_[i] > T{0})) d_sum[i] = T{0};
  const Tensor<T> d_theta = theta_x.backward(d_sum);
  for (std::size_t i = 0; i < d_x.size(); ++i) d_x[i] += d_theta[i];
  Tensor<T> d_g = phi_g.backward(d_sum);
  return {std::move(d_x), std::move(d_g)};
}

template <typename T>
void AttentionGate<T>::collect(std::vector<Parameter<T>*>& out) {
  theta_x.collect(out);
  phi_g.collect(out);
  psi.collect(out);
  if (has_focal_) out.push_back(&focal);
}

// ------------------------------------------------------- functional API

template <typename T>
AttentionResult<T> se_forward(const Tensor<T>& x, const SEParams<T>& params) {
  SEBlock<T> block(params, std::nullopt);
  Tensor<T> out = block.forward(x);
  return {std::move(out), block.coefficients()};
}

template <typename T>
AttentionResult<T> focal_se_forward(const Tensor<T>& x, const SEParams<T>& params, T focal) {
  SEBlock<T> block(params, focal);
  Tensor<T> out = block.forward(x);
  return {std::move(out), block.coefficients()};
}

template <typename T>
AttentionResult<T> ag_forward(const Tensor<T>& x, const Tensor<T>& g, const AGParams<T>& params) {
  AttentionGate<T> gate(params, std::nullopt);
  Tensor<T> out = gate.forward(x, g);
  return {std::move(out), gate.coefficients()};
}

template <typename T>
AttentionResult<T> focal_ag_forward(const Tensor<T>& x, const Tensor<T>& g,
                                    const AGParams<T>& params, T focal) {
  AttentionGate<T> gate(params, focal);
  Tensor<T> out = gate.forward(x, g);
  return {std::move(out), gate.coefficients()};
}

#define FOCALSEG_INSTANTIATE(T)                                                                   \
  template Tensor<T> focal_layer<T>(const Tensor<T>&, T);                                         \
  template struct SEParams<T>;                                                                    \
  template struct AGParams<T>;                                                                    \
  template class SEBlock<T>;                                                                      \
  template class AttentionGate<T>;                                                                \
  template AttentionResult<T> se_forward<T>(const Tensor<T>&, const SEParams<T>&);                \
  template AttentionResult<T> focal_se_forward<T>(const Tensor<T>&, const SEParams<T>&, T);       \
  template AttentionResult<T> ag_forward<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                            const AGParams<T>&);                                  \
  template AttentionResult<T> focal_ag_forward<T>(const Tensor<T>&, const Tensor<T>&,             \
                                                  const AGParams<T>&, T);

FOCALSEG_INSTANTIATE(float)
FOCALSEG_INSTANTIATE(double)
#undef FOCALSEG_INSTANTIATE

}  // namespace focalseg
