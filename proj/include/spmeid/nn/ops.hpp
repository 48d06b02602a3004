#pragma once

// Differentiable primitives. Shapes are (rows, cols); sequences are laid out
// one time step per row.

#include <vector>

#include "spmeid/nn/tensor.hpp"

namespace spmeid::nn {

template <class T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x·W + b with x (n×in), W (in×out), b (1×out); b may be undefined.
template <class T> BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <class T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <class T> BasicTensor<T> scale(const BasicTensor<T>& a, T s);
/// a (n×d) plus row vector v (1×d) on every row.
template <class T> BasicTensor<T> add_rowvec(const BasicTensor<T>& a, const BasicTensor<T>& v);
/// Row vector v (1×d) repeated n times.
template <class T> BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, Eigen::Index n);

template <class T> BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts);
template <class T> BasicTensor<T> slice_cols(const BasicTensor<T>& a, Eigen::Index start, Eigen::Index count);
/// Row-major reinterpretation to (rows × cols); the element count must match.
template <class T> BasicTensor<T> reshape(const BasicTensor<T>& a, Eigen::Index rows, Eigen::Index cols);

template <class T> BasicTensor<T> gelu(const BasicTensor<T>& a);  // tanh approximation
template <class T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <class T> BasicTensor<T> tanh(const BasicTensor<T>& a);

/// Per-row normalisation with affine gamma, beta (1×d).
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(1e-5));

/// Multi-head scaled dot-product attention on packed q, k, v (n×d, heads
/// split along columns). With `causal`, row t attends to rows ≤ t only and the
/// masked weights are exactly zero.
template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v, int n_heads,
                         bool causal);

template <class T> BasicTensor<T> mean_rows(const BasicTensor<T>& a);  // 1×d
template <class T> BasicTensor<T> sum(const BasicTensor<T>& a);        // 1×1
template <class T> BasicTensor<T> sum_squares(const BasicTensor<T>& a);
/// Mean of squared differences over all elements.
template <class T> BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace spmeid::nn
