#pragma once

#include <filesystem>
#include <string>

#include "osteo/backbone.hpp"

namespace osteo::check {

inline NetworkConfig tiny_config() {
    NetworkConfig c;
    c.input_size = 32;
    c.base_width = 2;
    c.head_width = 8;
    c.cbam_reduction = 4;
    c.blocks_per_stage = {1, 1, 1, 1};
    return c;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("osteo_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace osteo::check
