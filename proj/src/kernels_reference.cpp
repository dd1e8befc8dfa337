#include "focalseg/kernels.hpp"

#include <algorithm>

namespace focalseg::kernels::reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T sum{};
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
}

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    std::size_t out_channels, ConvGeometry geo, Tensor<T>& out) {
  const std::size_t k = geo.kernel, cin = in.channels();
  const std::size_t ho = geo.out_extent(in.height()), wo = geo.out_extent(in.width());
  out = Tensor<T>(out_channels, ho, wo);
  for (std::size_t o = 0; o < out_channels; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T sum = bias.empty() ? T{} : bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                              static_cast<std::ptrdiff_t>(geo.pad);
              const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                              static_cast<std::ptrdiff_t>(geo.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(in.height()) ||
                  ix >= static_cast<std::ptrdiff_t>(in.width()))
                continue;
              sum += weight[((o * cin + c) * k + ky) * k + kx] *
                     in(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
        out(o, oy, ox) = sum;
      }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, std::size_t out_channels,
                     ConvGeometry geo, const Tensor<T>& d_out, Tensor<T>* d_in,
                     std::span<T> d_weight, std::span<T> d_bias) {
  const std::size_t k = geo.kernel, cin = in.channels();
  const std::size_t ho = d_out.height(), wo = d_out.width();
  if (d_in != nullptr) *d_in = Tensor<T>(cin, in.height(), in.width());
  for (std::size_t o = 0; o < out_channels; ++o)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T g = d_out(o, oy, ox);
        if (!d_bias.empty()) d_bias[o] += g;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                              static_cast<std::ptrdiff_t>(geo.pad);
              const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                              static_cast<std::ptrdiff_t>(geo.pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(in.height()) ||
                  ix >= static_cast<std::ptrdiff_t>(in.width()))
                continue;
              const auto uy = static_cast<std::size_t>(iy), ux = static_cast<std::size_t>(ix);
              const std::size_t widx = ((o * cin + c) * k + ky) * k + kx;
              if (!d_weight.empty()) d_weight[widx] += g * in(c, uy, ux);
              if (d_in != nullptr) (*d_in)(c, uy, ux) += g * weight[widx];
            }
      }
}

template <typename T>
void conv_transpose2x2_forward(const Tensor<T>& in, std::span<const T> weight,
                               std::span<const T> bias, std::size_t out_channels, Tensor<T>& out) {
  const std::size_t cin = in.channels(), h = in.height(), w = in.width();
  out = Tensor<T>(out_channels, 2 * h, 2 * w);
  for (std::size_t o = 0; o < out_channels; ++o)
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        T sum = bias.empty() ? T{} : bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          sum += in(c, oy / 2, ox / 2) * weight[((c * out_channels + o) * 2 + oy % 2) * 2 + ox % 2];
        out(o, oy, ox) = sum;
      }
}

template <typename T>
void conv_transpose2x2_backward(const Tensor<T>& in, std::span<const T> weight,
                                std::size_t out_channels, const Tensor<T>& d_out,
                                Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias) {
  const std::size_t cin = in.channels(), h = in.height(), w = in.width();
  if (d_in != nullptr) *d_in = Tensor<T>(cin, h, w);
  for (std::size_t o = 0; o < out_channels; ++o)
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox) {
        const T g = d_out(o, oy, ox);
        if (!d_bias.empty()) d_bias[o] += g;
        for (std::size_t c = 0; c < cin; ++c) {
          const std::size_t widx = ((c * out_channels + o) * 2 + oy % 2) * 2 + ox % 2;
          if (!d_weight.empty()) d_weight[widx] += g * in(c, oy / 2, ox / 2);
          if (d_in != nullptr) (*d_in)(c, oy / 2, ox / 2) += g * weight[widx];
        }
      }
}

#define FOCALSEG_INSTANTIATE(T)                                                                   \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);  \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>,       \
                                  std::size_t, ConvGeometry, Tensor<T>&);                         \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, std::size_t,             \
                                   ConvGeometry, const Tensor<T>&, Tensor<T>*, std::span<T>,      \
                                   std::span<T>);                                                 \
  template void conv_transpose2x2_forward<T>(const Tensor<T>&, std::span<const T>,                \
                                             std::span<const T>, std::size_t, Tensor<T>&);        \
  template void conv_transpose2x2_backward<T>(const Tensor<T>&, std::span<const T>, std::size_t,  \
                                              const Tensor<T>&, Tensor<T>*, std::span<T>,         \
                                              std::span<T>);

FOCALSEG_INSTANTIATE(float)
FOCALSEG_INSTANTIATE(double)
#undef FOCALSEG_INSTANTIATE

}  // namespace focalseg::kernels::reference
