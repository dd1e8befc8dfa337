#include "focalseg/kernels.hpp"

#include <algorithm>
#include <vector>

namespace focalseg::kernels {
namespace {

constexpr std::size_t kColumnBlock = 512;

template <typename T>
void check_conv_args(const Tensor<T>& in, std::span<const T> weight, std::size_t out_channels,
                     const ConvGeometry& geo) {
  if (weight.size() != out_channels * in.channels() * geo.kernel * geo.kernel)
    throw Error(ErrorCode::ShapeMismatch, "conv2d weight size does not match geometry");
  if (in.height() + 2 * geo.pad < geo.kernel || in.width() + 2 * geo.pad < geo.kernel)
    throw Error(ErrorCode::ShapeMismatch, "conv2d input smaller than kernel");
}

// cols: [(c*k + ky)*k + kx][oy*wo + ox]
template <typename T>
void im2col(const Tensor<T>& in, const ConvGeometry& geo, std::size_t ho, std::size_t wo,
            std::vector<T>& cols) {
  const std::size_t k = geo.kernel;
  const std::size_t n = ho * wo;
  const auto channels = static_cast<std::ptrdiff_t>(in.channels());
  cols.assign(in.channels() * k * k * n, T{});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                          static_cast<std::ptrdiff_t>(geo.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.height())) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                            static_cast<std::ptrdiff_t>(geo.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.width())) continue;
            row[oy * wo + ox] = in(static_cast<std::size_t>(c), static_cast<std::size_t>(iy),
                                   static_cast<std::size_t>(ix));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& cols, const ConvGeometry& geo, std::size_t ho, std::size_t wo,
            Tensor<T>& out) {
  const std::size_t k = geo.kernel;
  const std::size_t n = ho * wo;
  const auto channels = static_cast<std::ptrdiff_t>(out.channels());
  out.fill(T{});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * n;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                          static_cast<std::ptrdiff_t>(geo.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(out.height())) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                            static_cast<std::ptrdiff_t>(geo.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(out.width())) continue;
            out(static_cast<std::size_t>(c), static_cast<std::size_t>(iy),
                static_cast<std::size_t>(ix)) += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{});
  const auto rows = static_cast<std::ptrdiff_t>(m);
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      T* crow = c + static_cast<std::size_t>(i) * n;
      const T* arow = a + static_cast<std::size_t>(i) * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T{}) continue;
        const T* brow = b + p * n;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T sum{};
#pragma omp simd reduction(+ : sum)
      for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
      T& dst = c[static_cast<std::size_t>(i) * n + j];
      dst = accumulate ? dst + sum : sum;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{});
  const auto rows = static_cast<std::ptrdiff_t>(m);
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p * m + static_cast<std::size_t>(i)];
        if (av == T{}) continue;
        const T* brow = b + p * n;
#pragma omp simd
        for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    std::size_t out_channels, ConvGeometry geo, Tensor<T>& out) {
  check_conv_args(in, weight, out_channels, geo);
  const std::size_t ho = geo.out_extent(in.height());
  const std::size_t wo = geo.out_extent(in.width());
  if (!(out.channels() == out_channels && out.height() == ho && out.width() == wo))
    out = Tensor<T>(out_channels, ho, wo);
  const std::size_t kdim = in.channels() * geo.kernel * geo.kernel;
  const std::size_t n = ho * wo;

  if (geo.kernel == 1 && geo.stride == 1 && geo.pad == 0) {
    gemm_nn(out_channels, n, kdim, weight.data(), in.data(), out.data(), false);
  } else {
    std::vector<T> cols;
    im2col(in, geo, ho, wo, cols);
    gemm_nn(out_channels, n, kdim, weight.data(), cols.data(), out.data(), false);
  }
  if (!bias.empty()) {
    for (std::size_t o = 0; o < out_channels; ++o) {
      auto ch = out.channel(o);
      const T bv = bias[o];
      for (auto& v : ch) v += bv;
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, std::size_t out_channels,
                     ConvGeometry geo, const Tensor<T>& d_out, Tensor<T>* d_in,
                     std::span<T> d_weight, std::span<T> d_bias) {
  check_conv_args(in, weight, out_channels, geo);
  const std::size_t ho = geo.out_extent(in.height());
  const std::size_t wo = geo.out_extent(in.width());
  if (d_out.channels() != out_channels || d_out.height() != ho || d_out.width() != wo)
    throw Error(ErrorCode::ShapeMismatch, "conv2d gradient shape");
  const std::size_t kdim = in.channels() * geo.kernel * geo.kernel;
  const std::size_t n = ho * wo;
  const bool pointwise = geo.kernel == 1 && geo.stride == 1 && geo.pad == 0;

  std::vector<T> cols;
  const T* col_data = in.data();
  if (!pointwise) {
    im2col(in, geo, ho, wo, cols);
    col_data = cols.data();
  }
  if (!d_weight.empty()) gemm_nt(out_channels, kdim, n, d_out.data(), col_data, d_weight.data(), true);
  if (!d_bias.empty()) {
    for (std::size_t o = 0; o < out_channels; ++o) {
      T sum{};
      for (T v : d_out.channel(o)) sum += v;
      d_bias[o] += sum;
    }
  }
  if (d_in != nullptr) {
    if (!d_in->same_shape(in)) *d_in = Tensor<T>(in.channels(), in.height(), in.width());
    if (pointwise) {
      gemm_tn(kdim, n, out_channels, weight.data(), d_out.data(), d_in->data(), false);
    } else {
      std::vector<T> d_cols(kdim * n);
      gemm_tn(kdim, n, out_channels, weight.data(), d_out.data(), d_cols.data(), false);
      col2im(d_cols, geo, ho, wo, *d_in);
    }
  }
}

// The transposed 2x2/stride-2 convolution is a GEMM producing out*4 rows,
// scattered to the (2y+dy, 2x+dx) output grid.
template <typename T>
void conv_transpose2x2_forward(const Tensor<T>& in, std::span<const T> weight,
                               std::span<const T> bias, std::size_t out_channels, Tensor<T>& out) {
  const std::size_t cin = in.channels();
  if (weight.size() != cin * out_channels * 4)
    throw Error(ErrorCode::ShapeMismatch, "conv_transpose2x2 weight size");
  const std::size_t n = in.plane();
  const std::size_t rows = out_channels * 4;
  // weight [in][out*4] read as A^T with A = [in x out*4]
  std::vector<T> tmp(rows * n);
  gemm_tn(rows, n, cin, weight.data(), in.data(), tmp.data(), false);
  const std::size_t h = in.height(), w = in.width();
  if (!(out.channels() == out_channels && out.height() == 2 * h && out.width() == 2 * w))
    out = Tensor<T>(out_channels, 2 * h, 2 * w);
  const auto oc = static_cast<std::ptrdiff_t>(out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < oc; ++o) {
    const auto uo = static_cast<std::size_t>(o);
    const T bv = bias.empty() ? T{} : bias[uo];
    for (std::size_t d = 0; d < 4; ++d) {
      const T* src = tmp.data() + (uo * 4 + d) * n;
      const std::size_t dy = d / 2, dx = d % 2;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out(uo, 2 * y + dy, 2 * x + dx) = src[y * w + x] + bv;
    }
  }
}

template <typename T>
void conv_transpose2x2_backward(const Tensor<T>& in, std::span<const T> weight,
                                std::size_t out_channels, const Tensor<T>& d_out,
                                Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias) {
  const std::size_t cin = in.channels();
  const std::size_t h = in.height(), w = in.width(), n = h * w;
  if (d_out.channels() != out_channels || d_out.height() != 2 * h || d_out.width() != 2 * w)
    throw Error(ErrorCode::ShapeMismatch, "conv_transpose2x2 gradient shape");
  const std::size_t rows = out_channels * 4;
  std::vector<T> gathered(rows * n);
  for (std::size_t o = 0; o < out_channels; ++o)
    for (std::size_t d = 0; d < 4; ++d) {
      T* dst = gathered.data() + (o * 4 + d) * n;
      const std::size_t dy = d / 2, dx = d % 2;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = d_out(o, 2 * y + dy, 2 * x + dx);
    }
  if (!d_bias.empty())
    for (std::size_t o = 0; o < out_channels; ++o) {
      T sum{};
      for (T v : d_out.channel(o)) sum += v;
      d_bias[o] += sum;
    }
  // dW[in][out*4] += X[in x n] * G[out*4 x n]^T
  if (!d_weight.empty()) gemm_nt(cin, rows, n, in.data(), gathered.data(), d_weight.data(), true);
  if (d_in != nullptr) {
    if (!d_in->same_shape(in)) *d_in = Tensor<T>(cin, h, w);
    gemm_nn(cin, n, rows, weight.data(), gathered.data(), d_in->data(), false);
  }
}

#define FOCALSEG_INSTANTIATE(T)                                                                   \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);  \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);  \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);  \
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

}  // namespace focalseg::kernels
