#pragma once

#include <filesystem>

#include <opencv2/core.hpp>

#include "osteo/metrics.hpp"

namespace osteo {

/// 5×5 grid, rows = true grade, columns = predicted grade, cell shade from
/// the row-normalized count (white → dark blue), count printed per cell.
cv::Mat confusion_image(const ConfusionMatrix& cm);

void render_confusion(const ConfusionMatrix& cm, const std::filesystem::path& path);

}  // namespace osteo
