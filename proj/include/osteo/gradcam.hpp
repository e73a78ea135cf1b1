#pragma once

#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "osteo/backbone.hpp"

namespace osteo {

struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, in [0,1]
    std::string layer;
    int target_class = 0;

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Layer names accepted by gradcam(): "merged" (pre-attention), "attended",
/// "stem" and "stage<i>.branch<j>".
std::vector<std::string> gradcam_layers(const NetworkConfig& config);

/// Class activation map for one C×S×S image, computed in eval mode. Parameter
/// gradients are cleared afterwards; values and buffers are not touched.
Heatmap gradcam(ModelParams<float>& params, const Tensor<float>& image, int target_class,
                const std::string& layer = "merged");

/// Heatmap resized to width×height with bilinear interpolation.
cv::Mat resample(const Heatmap& heatmap, int width, int height);

/// 256-entry blue→red lookup, BGR.
const std::vector<cv::Vec3b>& heatmap_colormap();

/// BGR blend of the colormapped heatmap over a grayscale image (CV_8U or
/// [0,1] CV_64F): (1−α)·base + α·colormap.
cv::Mat render_overlay(const Heatmap& heatmap, const cv::Mat& image, double alpha);

}  // namespace osteo
