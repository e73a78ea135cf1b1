#include "osteo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <fstream>

#include "osteo/backbone.hpp"

namespace osteo {

namespace {

std::mt19937_64 record_rng(std::uint64_t seed, int grade, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(grade), static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
}

// Box–Muller on the raw engine keeps images identical across standard libraries.
double gaussian(std::mt19937_64& rng) {
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

cv::Mat to_u8(const cv::Mat& img) {
    cv::Mat out(img.rows, img.cols, CV_8U);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            const double v = std::clamp(img.at<double>(y, x), 0.0, 1.0);
            out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return out;
}

}  // namespace

PhantomParams sample_phantom_params(int grade, std::mt19937_64& rng) {
    if (grade < 0 || grade >= kNumGrades) throw DataError("phantom grade out of range");
    PhantomParams p;
    p.grade = grade;
    p.gap = 0.20 - 0.035 * grade + (2.0 * uniform01(rng) - 1.0) * 0.008;
    p.blob = 0.05 + 0.15 * grade + (2.0 * uniform01(rng) - 1.0) * 0.03;
    return p;
}

cv::Mat render_phantom(const PhantomParams& params, int size, std::mt19937_64& rng) {
    if (size < 8) throw ConfigError("phantom size must be at least 8");
    const double S = size;
    const double centre = 0.5 * S + (2.0 * uniform01(rng) - 1.0) * 0.02 * S;
    const double half_gap = 0.5 * params.gap * S;
    const double left = 0.18 * S, right = 0.82 * S;
    const double blob_radius = 0.06 * S;
    cv::Mat img(size, size, CV_64F);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double xc = (x + 0.5 - 0.5 * S) / S;
            double v = 0.12;
            if (x + 0.5 >= left && x + 0.5 <= right) {
                // Femoral condyles curve down toward the gap, the tibial plateau is flat.
                const double femur_edge = centre - half_gap - 0.6 * xc * xc * S;
                const double tibia_edge = centre + half_gap;
                if (y + 0.5 < femur_edge) v = 0.62 + 0.1 * (femur_edge - y) / S;
                else if (y + 0.5 > tibia_edge) v = 0.58 + 0.1 * (y - tibia_edge) / S;
            }
            for (double bx : {left, right}) {
                const double dx = x + 0.5 - bx, dy = y + 0.5 - centre;
                v += params.blob * std::exp(-(dx * dx + dy * dy) / (2.0 * blob_radius * blob_radius));
            }
            img.at<double>(y, x) = v + 0.04 * gaussian(rng);
        }
    }
    return to_u8(img);
}

SyntheticDataset synth_dataset(const std::filesystem::path& out_dir, int n_per_grade, std::uint64_t seed,
                               int image_size) {
    if (n_per_grade < 1) throw ConfigError("n_per_grade must be at least 1");
    SyntheticDataset ds;
    ds.manifest.base_dir = out_dir;
    for (int g = 0; g < kNumGrades; ++g) {
        for (int k = 0; k < n_per_grade; ++k) {
            auto rng = record_rng(seed, g, k);
            const auto params = sample_phantom_params(g, rng);
            const std::string rel = "grade_" + std::to_string(g) + "/img_" + std::to_string(k) + ".png";
            write_image(out_dir / rel, render_phantom(params, image_size, rng));
            GradeRecord r;
            r.path = rel;
            r.kl_grade = g;
            ds.manifest.records.push_back(r);
            ds.params.push_back(params);
        }
    }
    save_manifest(ds.manifest, out_dir / "manifest.csv");
    return ds;
}

cv::Mat render_planted(int grade, int size, std::mt19937_64& rng) {
    const int S = size;
    const int side = std::max(2, S / 4);
    const int jitter = std::max(1, S / 16);
    cv::Mat img(S, S, CV_64F);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) img.at<double>(y, x) = gaussian(rng);
    if (grade == 4) {
        const int x0 = static_cast<int>(uniform01(rng) * jitter);
        const int y0 = static_cast<int>(uniform01(rng) * jitter);
        for (int y = y0; y < y0 + side; ++y)
            for (int x = x0; x < x0 + side; ++x) img.at<double>(y, x) += 3.0;
    }
    return img;
}

ImageSet planted_feature_images(int n_per_class, std::uint64_t seed, int image_size, int channels) {
    if (n_per_class < 1) throw ConfigError("n_per_class must be at least 1");
    if (image_size < 16) throw ConfigError("planted images need size >= 16");
    const auto S = static_cast<std::size_t>(image_size);
    ImageSet set;
    for (int g : {0, 4}) {
        for (int k = 0; k < n_per_class; ++k) {
            auto rng = record_rng(seed ^ 0xA5A5A5A5ULL, g, k);
            const cv::Mat img = render_planted(g, image_size, rng);
            Tensor<float> t(Shape{static_cast<std::size_t>(channels), S, S});
            auto& v = t.values();
            for (std::size_t c = 0; c < static_cast<std::size_t>(channels); ++c)
                for (std::size_t y = 0; y < S; ++y)
                    for (std::size_t x = 0; x < S; ++x)
                        v[(c * S + y) * S + x] = static_cast<float>(img.at<double>(static_cast<int>(y), static_cast<int>(x)));
            set.images.push_back(std::move(t));
            set.grades.push_back(g);
            set.paths.push_back("grade_" + std::to_string(g) + "/img_" + std::to_string(k));
        }
    }
    return set;
}

DatasetManifest planted_feature_dataset(const std::filesystem::path& out_dir, int n_per_class, std::uint64_t seed,
                                        int image_size) {
    if (n_per_class < 1) throw ConfigError("n_per_class must be at least 1");
    if (image_size < 16) throw ConfigError("planted images need size >= 16");
    DatasetManifest m;
    m.base_dir = out_dir;
    for (int g : {0, 4}) {
        for (int k = 0; k < n_per_class; ++k) {
            auto rng = record_rng(seed ^ 0xA5A5A5A5ULL, g, k);
            cv::Mat img = render_planted(g, image_size, rng);
            img = 0.35 + 0.08 * img;
            const std::string rel = "grade_" + std::to_string(g) + "/img_" + std::to_string(k) + ".png";
            write_image(out_dir / rel, to_u8(img));
            GradeRecord r;
            r.path = rel;
            r.kl_grade = g;
            m.records.push_back(r);
        }
    }
    save_manifest(m, out_dir / "manifest.csv");
    return m;
}

}  // namespace osteo
