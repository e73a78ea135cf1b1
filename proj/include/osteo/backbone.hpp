#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "osteo/attention.hpp"
#include "osteo/ops.hpp"

namespace osteo {

inline constexpr int kNumStages = 4;
inline constexpr int kNumGrades = 5;

/// Shape of the multi-resolution network. Branch j (1-based) runs at
/// 1/2^{j-1} of the stage-1 resolution, which is itself 1/4 of the input
/// after the two stride-2 stem convolutions.
struct NetworkConfig {
    int input_channels = 3;
    int input_size = 224;
    int base_width = 18;
    std::vector<int> widths;  // per branch; empty means base_width·2^{j-1}
    std::array<int, kNumStages> blocks_per_stage{1, 1, 2, 2};
    int head_width = 256;
    int num_classes = kNumGrades;
    bool use_cbam = true;
    int cbam_reduction = 16;
    ChannelMapForm channel_map_form = ChannelMapForm::standard;

    int branch_width(int branch) const;
    /// Spatial size of branch j at stage entry.
    int branch_size(int branch) const;
    void validate() const;

    /// key=value lines; stable across runs and used for the checkpoint hash.
    std::string canonical() const;
    static NetworkConfig from_canonical(const std::string& text);

    /// Desk-scale configuration: C_1 = 8, 64×64 input.
    static NetworkConfig toy();
};

std::uint64_t config_hash(const NetworkConfig& config);

enum class ParamKind { conv, dense_weight, dense_bias, bn_scale, bn_shift, bn_mean, bn_var };

struct ParamSpec {
    std::string name;
    Shape shape;
    ParamKind kind;
    std::size_t fan_in;
    bool trainable;
};

/// Every tensor the configuration owns, in initialization order.
std::vector<ParamSpec> describe_parameters(const NetworkConfig& config);

template <typename T>
struct ModelParams {
    NetworkConfig config;
    std::map<std::string, Tensor<T>> parameters;  // trainable
    std::map<std::string, Tensor<T>> buffers;     // batchnorm running statistics

    Tensor<T>& parameter(const std::string& name);
    const Tensor<T>& parameter(const std::string& name) const;
    Tensor<T>& buffer(const std::string& name);
    std::size_t parameter_count() const;
    void zero_grad();
    ModelParams clone() const;
};

/// He-uniform convolution/dense weights, zero biases, unit-scale zero-shift
/// batchnorm, running statistics mean 0 / variance 1.
template <typename T>
ModelParams<T> build_network(const NetworkConfig& config, std::uint64_t seed);

struct ForwardOptions {
    bool training = false;
    bool update_running_stats = true;
    /// Replaces both CBAM maps by ones (parameters stay in place).
    bool identity_attention = false;
};

/// Residual blocks applied to each branch independently.
template <typename T>
std::vector<Tensor<T>> stage_forward(ModelParams<T>& params, int stage, const std::vector<Tensor<T>>& features,
                                     const ForwardOptions& options);

/// All-to-all exchange: output j sums the identity (k = j), strided 3×3
/// chains (k < j) and upsample + 1×1 (k > j), followed by ReLU.
template <typename T>
std::vector<Tensor<T>> fuse(ModelParams<T>& params, int stage, const std::vector<Tensor<T>>& features,
                            const ForwardOptions& options);

/// Creates branch `branch` (2..4) from the current lowest-resolution branch.
template <typename T>
Tensor<T> new_branch(ModelParams<T>& params, int branch, const std::vector<Tensor<T>>& features,
                     const ForwardOptions& options);

template <typename T>
struct HeadOutput {
    Tensor<T> logits;
    Tensor<T> merged;    // pre-attention map
    Tensor<T> attended;  // post-attention map (== merged without CBAM)
    Tensor<T> channel_map;
    Tensor<T> spatial_map;
};

template <typename T>
HeadOutput<T> head_forward(ModelParams<T>& params, const std::vector<Tensor<T>>& features,
                           const ForwardOptions& options);

template <typename T>
struct ForwardResult {
    Tensor<T> logits;
    /// "stem", "stage<i>.branch<j>", "merged", "attended".
    std::map<std::string, Tensor<T>> features;
};

/// Images are C×S×S or N×C×S×S; logits are 5 or N×5.
template <typename T>
ForwardResult<T> forward(ModelParams<T>& params, const Tensor<T>& images, const ForwardOptions& options);

}  // namespace osteo
