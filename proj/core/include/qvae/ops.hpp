#pragma once

#include <vector>

#include "qvae/tensor.hpp"

namespace qvae {

// Differentiable tensor operations. Binary elementwise ops require exactly
// matching shapes; the only broadcasting anywhere is scalar-by-tensor (the
// explicit *_scalar overloads) and the two named bias ops. Shape mismatches
// throw ShapeError naming both shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Elementwise clamp; gradient passes through inside [lo, hi], zero outside.
Tensor clamp(const Tensor& a, float lo, float hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// [M,K] x [K,N] -> [M,N]. Backward: dA = dC B^T, dB = A^T dC.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: [M,N], bias: [N]; adds bias to every row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// x: [B,C,H,W], bias: [C]; adds bias to every spatial position of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Cross-correlation. input [B,C,H,W], weight [O,C,k,k].
/// Output extent: floor((H + 2*padding - k)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding);

/// Exact adjoint of conv2d with the same geometry. input [B,C,H,W],
/// weight [C,O,k,k]. Output extent: (H-1)*stride - 2*padding + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, int stride,
                        int padding);

/// Per-window maximum over k x k windows with stride s. Extents must divide.
/// Gradient routes to the first argmax of each window.
Tensor maxpool2d(const Tensor& input, int k = 2, int s = 2);

/// Copies into a new shape with the same element count.
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Binary cross-entropy summed over every element:
///   -sum_i [ t_i ln p_i + (1 - t_i) ln(1 - p_i) ]
/// with predictions clamped to [1e-7, 1 - 1e-7] before the logs, so the
/// result is finite for any prediction. Targets carry no gradient.
Tensor bce_sum(const Tensor& prediction, const Tensor& target);

/// Clamp bounds used by bce_sum and by the decoder output.
inline constexpr float kProbEps = 1e-7f;

/// Mean softmax cross-entropy for logits [B,C] against integer labels.
Tensor softmax_cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);

/// argmax per row of a [B,C] tensor.
std::vector<int> argmax_rows(const Tensor& logits);

namespace detail {
// Row-major float GEMM kernels shared by matmul and the conv lowering.
// c must be zero-initialized (the kernels accumulate).
void mm_nn(const float* a, const float* b, float* c, int m, int k, int n);  // c += a.b
void mm_nt(const float* a, const float* b, float* c, int m, int k, int n);  // c += a.b^T, b is [n,k]
void mm_tn(const float* a, const float* b, float* c, int m, int k, int n);  // c += a^T.b, a is [k,m]
}  // namespace detail

}  // namespace qvae
