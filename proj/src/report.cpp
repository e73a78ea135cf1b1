#include "osteo/report.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "osteo/data.hpp"
#include "osteo/error.hpp"

namespace osteo {

namespace {

constexpr int kCell = 64;
constexpr int kMargin = 40;
const cv::Vec3d kLight{255, 255, 255};
const cv::Vec3d kDark{110, 40, 8};  // BGR dark blue

}  // namespace

cv::Mat confusion_image(const ConfusionMatrix& cm) {
    constexpr int K = ConfusionMatrix::K;
    const int side = kMargin + K * kCell;
    cv::Mat img(side, side, CV_8UC3, cv::Scalar(255, 255, 255));
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    for (int t = 0; t < K; ++t) {
        std::int64_t row_total = 0;
        for (int p = 0; p < K; ++p) row_total += cm.at(p, t);
        for (int p = 0; p < K; ++p) {
            const auto n = cm.at(p, t);
            const double f = row_total > 0 ? static_cast<double>(n) / static_cast<double>(row_total) : 0.0;
            const cv::Vec3d c = kLight + f * (kDark - kLight);
            const cv::Point tl(kMargin + p * kCell, kMargin + t * kCell);
            cv::rectangle(img, cv::Rect(tl.x, tl.y, kCell, kCell), cv::Scalar(c[0], c[1], c[2]), cv::FILLED);
            cv::rectangle(img, cv::Rect(tl.x, tl.y, kCell, kCell), cv::Scalar(160, 160, 160), 1);
            const auto text = std::to_string(n);
            int base = 0;
            const auto sz = cv::getTextSize(text, font, 0.45, 1, &base);
            const cv::Scalar ink = f > 0.5 ? cv::Scalar(255, 255, 255) : cv::Scalar(0, 0, 0);
            cv::putText(img, text, {tl.x + (kCell - sz.width) / 2, tl.y + (kCell + sz.height) / 2}, font, 0.45, ink,
                        1, cv::LINE_8);
        }
        cv::putText(img, std::to_string(t), {kMargin / 2 - 5, kMargin + t * kCell + kCell / 2 + 5}, font, 0.45,
                    cv::Scalar(0, 0, 0), 1, cv::LINE_8);
        cv::putText(img, std::to_string(t), {kMargin + t * kCell + kCell / 2 - 5, kMargin / 2 + 5}, font, 0.45,
                    cv::Scalar(0, 0, 0), 1, cv::LINE_8);
    }
    cv::putText(img, "T\\P", {2, 14}, font, 0.35, cv::Scalar(0, 0, 0), 1, cv::LINE_8);
    return img;
}

void render_confusion(const ConfusionMatrix& cm, const std::filesystem::path& path) {
    write_image(path, confusion_image(cm));
}

}  // namespace osteo
