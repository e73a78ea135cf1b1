#pragma once

#include "osteo/ops.hpp"

namespace osteo {

/// Shared two-layer MLP applied to both pooled channel descriptors.
/// fc1 is hidden×C, fc2 is C×hidden with hidden = C / r. Bias-free.
template <typename T>
struct ChannelAttentionParams {
    Tensor<T> fc1;
    Tensor<T> fc2;
};

/// 7×7 convolution over the [avg; max] channel-pooled descriptor (1×2×7×7).
template <typename T>
struct SpatialAttentionParams {
    Tensor<T> kernel;
};

inline constexpr int kSpatialAttentionKernel = 7;

enum class ChannelMapForm {
    /// g(MLP(avg) + MLP(max))
    standard,
    /// g(MLP(avg)) + MLP(max): sigmoid on the average branch only. Not bounded to (0,1).
    literal,
};

struct CbamOptions {
    ChannelMapForm form = ChannelMapForm::standard;
    /// Forces both maps to exactly 1 so the block passes its input through.
    bool identity = false;
};

template <typename T>
struct CbamOutput {
    Tensor<T> refined;      // T
    Tensor<T> channel_map;  // C×1×1 (or N×C×1×1)
    Tensor<T> spatial_map;  // 1×H×W (or N×1×H×W)
};

/// Number of trainable scalars in a CBAM block over `channels` with ratio r.
std::size_t cbam_parameter_count(std::size_t channels, std::size_t reduction);

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& features, const ChannelAttentionParams<T>& params,
                            ChannelMapForm form = ChannelMapForm::standard);

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& features, const SpatialAttentionParams<T>& params);

/// Channel attention then spatial attention, each applied by broadcast
/// multiplication: P^c = Map_c(P)⊗P, T = Map_s(P^c)⊗P^c.
template <typename T>
CbamOutput<T> cbam_forward(const Tensor<T>& features, const ChannelAttentionParams<T>& channel,
                           const SpatialAttentionParams<T>& spatial, const CbamOptions& options = {});

}  // namespace osteo
