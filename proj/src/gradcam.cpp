#include "osteo/gradcam.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <opencv2/imgproc.hpp>

namespace osteo {

namespace {

struct Anchor {
    double t;
    std::array<double, 3> rgb;
};

// Piecewise-linear blue→cyan→green→yellow→red.
constexpr std::array<Anchor, 5> kAnchors{{
    {0.00, {0.0, 0.0, 0.5}},
    {0.25, {0.0, 0.5, 1.0}},
    {0.50, {0.2, 0.9, 0.4}},
    {0.75, {1.0, 0.8, 0.0}},
    {1.00, {0.6, 0.0, 0.0}},
}};

cv::Mat to_u8_gray(const cv::Mat& image) {
    if (image.empty()) throw DataError("overlay base image is empty");
    if (image.channels() != 1) throw DataError("overlay base image must be grayscale");
    if (image.type() == CV_8U) return image;
    if (image.type() == CV_64F) {
        cv::Mat out;
        image.convertTo(out, CV_8U, 255.0);
        return out;
    }
    throw DataError("overlay base image must be 8-bit or double");
}

}  // namespace

std::vector<std::string> gradcam_layers(const NetworkConfig& config) {
    std::vector<std::string> names{"merged", "attended", "stem"};
    for (int i = 1; i <= kNumStages; ++i)
        for (int j = 1; j <= i; ++j) names.push_back("stage" + std::to_string(i) + ".branch" + std::to_string(j));
    (void)config;
    return names;
}

Heatmap gradcam(ModelParams<float>& params, const Tensor<float>& image, int target_class, const std::string& layer) {
    if (target_class < 0 || target_class >= params.config.num_classes) {
        throw ConfigError("target class " + std::to_string(target_class) + " out of range");
    }
    if (image.rank() != 3) throw DimensionError("gradcam expects one C×H×W image, got " + shape_string(image.shape()));
    const auto names = gradcam_layers(params.config);
    if (std::find(names.begin(), names.end(), layer) == names.end()) {
        throw LookupError("unknown Grad-CAM layer '" + layer + "'");
    }

    params.zero_grad();
    auto result = forward(params, image, ForwardOptions{false, false, false});
    auto it = result.features.find(layer);
    if (it == result.features.end()) throw LookupError("layer '" + layer + "' not produced by the forward pass");
    const auto& fmap = it->second;
    if (fmap.rank() != 3) throw DimensionError("Grad-CAM layer must be C×H×W");

    std::vector<float> seed(result.logits.numel(), 0.0f);
    seed[static_cast<std::size_t>(target_class)] = 1.0f;
    backward(result.logits, &seed);

    const std::size_t C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2), HW = H * W;
    const auto act = fmap.data();
    const auto grad = fmap.grad();
    Heatmap hm;
    hm.height = static_cast<int>(H);
    hm.width = static_cast<int>(W);
    hm.layer = layer;
    hm.target_class = target_class;
    hm.values.assign(HW, 0.0);
    if (!grad.empty()) {
        for (std::size_t c = 0; c < C; ++c) {
            double w = 0.0;
            for (std::size_t i = 0; i < HW; ++i) w += grad[c * HW + i];
            w /= static_cast<double>(HW);
            if (w == 0.0) continue;
            for (std::size_t i = 0; i < HW; ++i) hm.values[i] += w * act[c * HW + i];
        }
    }
    double peak = 0.0;
    for (auto& v : hm.values) {
        v = std::max(v, 0.0);
        peak = std::max(peak, v);
    }
    if (peak > 0.0) {
        for (auto& v : hm.values) v /= peak;
    } else {
        std::fill(hm.values.begin(), hm.values.end(), 0.0);
    }
    params.zero_grad();
    return hm;
}

cv::Mat resample(const Heatmap& heatmap, int width, int height) {
    if (width <= 0 || height <= 0) throw DataError("resample target size must be positive");
    cv::Mat src(heatmap.height, heatmap.width, CV_64F);
    std::copy(heatmap.values.begin(), heatmap.values.end(), src.begin<double>());
    cv::Mat out;
    cv::resize(src, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    return out;
}

const std::vector<cv::Vec3b>& heatmap_colormap() {
    static const std::vector<cv::Vec3b> lut = [] {
        std::vector<cv::Vec3b> table(256);
        for (int i = 0; i < 256; ++i) {
            const double t = i / 255.0;
            std::size_t k = 0;
            while (k + 2 < kAnchors.size() && t > kAnchors[k + 1].t) ++k;
            const auto& a = kAnchors[k];
            const auto& b = kAnchors[k + 1];
            const double f = (t - a.t) / (b.t - a.t);
            std::array<std::uint8_t, 3> rgb{};
            for (int c = 0; c < 3; ++c) {
                rgb[c] = static_cast<std::uint8_t>(std::lround(255.0 * (a.rgb[c] + f * (b.rgb[c] - a.rgb[c]))));
            }
            table[i] = cv::Vec3b(rgb[2], rgb[1], rgb[0]);
        }
        return table;
    }();
    return lut;
}

cv::Mat render_overlay(const Heatmap& heatmap, const cv::Mat& image, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("overlay alpha must lie in [0,1]");
    const cv::Mat base = to_u8_gray(image);
    if (heatmap.values.empty()) throw DataError("heatmap is empty");
    const cv::Mat heat = resample(heatmap, base.cols, base.rows);
    const auto& lut = heatmap_colormap();
    cv::Mat out(base.rows, base.cols, CV_8UC3);
    for (int y = 0; y < base.rows; ++y) {
        for (int x = 0; x < base.cols; ++x) {
            const double h = std::clamp(heat.at<double>(y, x), 0.0, 1.0);
            const auto& col = lut[static_cast<std::size_t>(std::lround(h * 255.0))];
            const double g = base.at<std::uint8_t>(y, x);
            cv::Vec3b px;
            for (int c = 0; c < 3; ++c) {
                px[c] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * g + alpha * col[c]));
            }
            out.at<cv::Vec3b>(y, x) = px;
        }
    }
    return out;
}

}  // namespace osteo
