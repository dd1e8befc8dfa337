#pragma once

// Dense compute kernels used by the network layers.
//
// `kernels::` holds the OpenMP-parallel implementations (im2col + blocked
// GEMM). `kernels::reference::` holds direct serial loops with the same
// contracts; tests and the benchmark compare the two.
//
// Weight layouts:
//   conv2d            [out][in][k][k]
//   conv_transpose2x2 [in][out][2][2]   (stride 2, no overlap)
// Gradients passed as spans are accumulated into (+=); input gradients are
// overwritten.

#include <cstddef>
#include <span>

#include "focalseg/tensor.hpp"

namespace focalseg::kernels {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

// C[MxN] (+)= A[MxK] * B[KxN]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
// C[MxN] (+)= A[MxK] * B[NxK]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);
// C[MxN] (+)= A[KxM]^T * B[KxN]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    std::size_t out_channels, ConvGeometry geo, Tensor<T>& out);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, std::size_t out_channels,
                     ConvGeometry geo, const Tensor<T>& d_out, Tensor<T>* d_in,
                     std::span<T> d_weight, std::span<T> d_bias);

template <typename T>
void conv_transpose2x2_forward(const Tensor<T>& in, std::span<const T> weight,
                               std::span<const T> bias, std::size_t out_channels, Tensor<T>& out);

template <typename T>
void conv_transpose2x2_backward(const Tensor<T>& in, std::span<const T> weight,
                                std::size_t out_channels, const Tensor<T>& d_out,
                                Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias);

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <typename T>
void conv2d_forward(const Tensor<T>& in, std::span<const T> weight, std::span<const T> bias,
                    std::size_t out_channels, ConvGeometry geo, Tensor<T>& out);

template <typename T>
void conv2d_backward(const Tensor<T>& in, std::span<const T> weight, std::size_t out_channels,
                     ConvGeometry geo, const Tensor<T>& d_out, Tensor<T>* d_in,
                     std::span<T> d_weight, std::span<T> d_bias);

template <typename T>
void conv_transpose2x2_forward(const Tensor<T>& in, std::span<const T> weight,
                               std::span<const T> bias, std::size_t out_channels, Tensor<T>& out);

template <typename T>
void conv_transpose2x2_backward(const Tensor<T>& in, std::span<const T> weight,
                                std::size_t out_channels, const Tensor<T>& d_out,
                                Tensor<T>* d_in, std::span<T> d_weight, std::span<T> d_bias);

}  // namespace reference
}  // namespace focalseg::kernels
