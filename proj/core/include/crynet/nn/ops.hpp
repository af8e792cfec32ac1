#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "crynet/nn/graph.hpp"

namespace crynet::nn {

// Differentiable primitives. Every op checks shapes (ShapeError) and the
// finiteness of its result (NumericalError).

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);  // elementwise
template <typename T> Var<T> scale(Var<T> a, T factor);

/// a[..., n] + bias[n], broadcasting the bias over all leading axes.
template <typename T> Var<T> add_bias(Var<T> a, Var<T> bias);

/// 2-D product with optional transposes: op(a) * op(b).
template <typename T> Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T> Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);

template <typename T> Var<T> sum(Var<T> a);   // scalar
template <typename T> Var<T> mean(Var<T> a);  // scalar

struct Conv2dSpec {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
};

/// Cross-correlation of x[B, C_in, H, W] with kernels[C_out, C_in, kh, kw]
/// under "same" padding: output spatial size is ceil(H / stride).
template <typename T> Var<T> conv2d(Var<T> x, Var<T> kernels, Conv2dSpec spec = {});

struct BatchNormSpec {
  double eps = 1e-5;
  double momentum = 0.9;  // fraction of the old running statistic kept per update
};

/// Per-channel normalisation of x[B, C, ...]. Train mode normalises by batch
/// statistics and updates the running buffers in place; eval mode uses them.
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Array<T>& running_mean, Array<T>& running_var, Mode mode,
                 BatchNormSpec spec = {});

/// Non-overlapping max pooling of x[B, C, H, W]. Partial windows at the
/// border are kept (ceil mode). Ties route gradient to the first index.
template <typename T> Var<T> maxpool2d(Var<T> x, std::size_t pool_h, std::size_t pool_w);

/// Mean over the batch of -log softmax(logits)[label], optionally weighted
/// per class (normalised by the total weight of the batch).
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels, std::span<const T> class_weights = {});

/// Inverted dropout. Identity in eval mode or when p == 0.
template <typename T> Var<T> dropout(Var<T> x, double p, std::mt19937_64& rng, Mode mode);

/// [B, C, H, W] -> [B, W, C * H]: each time column flattened into one frame vector.
template <typename T> Var<T> to_sequence(Var<T> x);

/// [B, T, F] -> [B, F] mean over the time axis.
template <typename T> Var<T> mean_over_time(Var<T> x);

/// [B, T, F] -> [B, F] at time index t.
template <typename T> Var<T> time_step(Var<T> x, std::size_t t);

/// Stacks equally shaped [B, F] nodes into [B, T, F].
template <typename T> Var<T> stack_time(const std::vector<Var<T>>& steps);

/// Numerically stable logistic function on a plain value.
template <typename T> T stable_sigmoid(T z);

}  // namespace crynet::nn
