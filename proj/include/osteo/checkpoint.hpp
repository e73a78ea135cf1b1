#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "osteo/backbone.hpp"

namespace osteo {

/// Per-parameter momentum buffers, keyed like ModelParams::parameters.
template <typename T>
struct OptimizerState {
    std::map<std::string, std::vector<T>> momentum;
    bool operator==(const OptimizerState&) const = default;
};

struct Checkpoint {
    ModelParams<float> params;
    OptimizerState<float> optimizer;
    int epoch = 0;  // completed epochs
    std::string rng_state;
    double best_val_accuracy = -1.0;
};

inline constexpr std::string_view kCheckpointMagic = "OSTEOCKPT1";

enum class HashPolicy { fail, warn };

/// Container layout, all integers little-endian:
///   magic "OSTEOCKPT1" | u32 tensor count |
///   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
///               u8 dtype tag, raw payload |
///   u64 config hash.
/// Tensors are the network config text, run metadata, parameters, batchnorm
/// buffers and momentum buffers, in a fixed order.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes, HashPolicy policy = HashPolicy::fail,
                                  std::vector<std::string>* warnings = nullptr);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, HashPolicy policy = HashPolicy::fail,
                           std::vector<std::string>* warnings = nullptr);

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u8 = 3, u64 = 4 };

}  // namespace osteo
