#pragma once

#include <span>
#include <vector>

#include "ei/tape.hpp"
#include "ei/tensor.hpp"

namespace ei {

// Differentiable primitives. Every op validates shapes (ShapeError names
// both operands), quantizes its output to the active precision and, when
// a tape is recording, registers its backward closure.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// out[i,j] = sum_k x[i,k] * w[k,j] (+ b[j]).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor* b = nullptr);
// out[i,j] = sum_k x[i,k] * w[j,k] (+ b[j]); w stored [out x in].
Tensor linear_t(const Tensor& x, const Tensor& w, const Tensor* b = nullptr);

// Batched matmul over the leading axis: [B,n,p] @ [B,p,q] -> [B,n,q].
Tensor bmm(const Tensor& a, const Tensor& b);
// Second operand transposed in its last two axes: [B,n,p] @ [B,q,p] -> [B,n,q].
Tensor bmm_t(const Tensor& a, const Tensor& b);

// Axis permutation for rank-2 or rank-3 tensors.
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor reshape(const Tensor& x, std::vector<std::int64_t> shape);

Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1);
Tensor concat_rows(std::span<const Tensor> parts);

// out[i,j] = x[i,j] * s[i], s rank-1 of length rows(x).
Tensor row_scale(const Tensor& x, const Tensor& s);

// Max-subtracted softmax along `axis`; rejects non-finite input.
Tensor softmax(const Tensor& x, std::int64_t axis);

// Row-wise layer norm over the last axis of a 2-d tensor.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor gelu(const Tensor& x);

// Mean over axis 0: [n,m] -> [m].
Tensor mean_pool(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

enum class LabelMode { multiclass, multilabel };

// y is a constant label vector (one-hot in multiclass mode, multi-hot in
// multilabel mode); logits is a rank-1 tensor of the same length.
// Multiclass: softmax cross-entropy, d/dlogits = softmax(logits) - y.
// Multilabel: per-class sigmoid cross-entropy averaged over classes.
Tensor cross_entropy(std::span<const double> y, const Tensor& logits,
                     LabelMode mode = LabelMode::multiclass);

namespace debug {
// Deliberately corrupts the gelu backward (test fixture for the
// gradcheck failure path).
void set_backward_fault(bool on);
bool backward_fault();
}  // namespace debug

}  // namespace ei
