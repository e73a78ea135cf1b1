#pragma once

// Differentiable primitives. Spatial operations take either a single feature
// map C×H×W or a batch N×C×H×W and keep the rank of their input.

#include <vector>

#include "osteo/tensor.hpp"

namespace osteo {

enum class PoolMode { max, avg };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Direct convolution, no bias. kernel is C_out×C_in×kh×kw.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1, int padding = 0);

/// Bilinear upsampling with the align-corners-false convention and edge clamping.
/// factor must be 2, 4 or 8.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int factor);

/// Spatial pooling. Global pooling returns C×1×1; otherwise a square window
/// slides with the given stride (0 means stride = window). Max ties resolve to
/// the first index in row-major order.
template <typename T>
Tensor<T> pool_spatial(const Tensor<T>& input, PoolMode mode, bool global, int window = 0, int stride = 0);

/// Reduces the channel axis to 1, keeping H×W.
template <typename T>
Tensor<T> pool_channelwise(const Tensor<T>& input, PoolMode mode);

/// Affine map of a length-D vector (or N×D batch) by D_out×D weights.
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights);
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);
template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Elementwise product/sum with size-1 axes of either side stretched.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& input, T factor);

/// Sum of all elements as a one-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& input);

/// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& input);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs);

template <typename T>
Tensor<T> reshape(const Tensor<T>& input, Shape shape);

/// Per-channel scale/shift plus running statistics. Tensors are shared
/// handles, so a BatchNorm built from model parameters updates them in place.
template <typename T>
struct BatchNorm {
    Tensor<T> scale;
    Tensor<T> shift;
    Tensor<T> running_mean;
    Tensor<T> running_var;
};

/// Training mode normalizes with batch statistics over N·H·W and, when
/// update_running is set, folds them into the running estimates
/// (momentum 0.1, unbiased variance). Eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNorm<T>& state, bool training, bool update_running = true);

}  // namespace osteo
