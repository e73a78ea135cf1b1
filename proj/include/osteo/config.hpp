#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "osteo/backbone.hpp"
#include "osteo/train.hpp"

namespace osteo {

/// Everything `osteo train` needs, read from an INI file:
///
///   [data]    manifest = path (relative to the config file), threads
///   [model]   preset = full|toy, input_size, base_width, head_width,
///             blocks = 1,1,2,2, cbam = on|off, cbam_reduction, cbam_form
///   [train]   learning_rate, momentum, epochs, batch_size, seed,
///             checkpoint_every
///   [augment] enabled, flip_probability, rotation_degrees, brightness, contrast
///   [loss]    type = ordinal|cross_entropy, penalty = "r0; r1; r2; r3; r4"
///
/// Unknown sections or keys are rejected.
struct RunConfig {
    std::filesystem::path manifest;
    NetworkConfig network;
    TrainConfig train;
    bool seed_given = false;
};

RunConfig parse_run_config(std::istream& is, const std::filesystem::path& base_dir, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace osteo
