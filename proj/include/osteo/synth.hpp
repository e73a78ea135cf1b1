#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <opencv2/core.hpp>

#include "osteo/data.hpp"
#include "osteo/train.hpp"

namespace osteo {

/// Generative parameters of one knee phantom, in units of the image side.
struct PhantomParams {
    int grade = 0;
    double gap = 0.0;   // joint-space width / image size
    double blob = 0.0;  // osteophyte blob amplitude
};

/// Joint gap shrinks and osteophyte intensity grows with grade; each
/// draw is jittered within a band that keeps adjacent grades disjoint.
PhantomParams sample_phantom_params(int grade, std::mt19937_64& rng);

/// 8-bit grayscale phantom: femur above, tibia below, dark joint gap between,
/// osteophyte blobs at the gap margins, additive Gaussian noise.
cv::Mat render_phantom(const PhantomParams& params, int size, std::mt19937_64& rng);

struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<PhantomParams> params;  // parallel to manifest.records
};

/// Writes `grade_<g>/img_<k>.png` under out_dir plus `manifest.csv`.
SyntheticDataset synth_dataset(const std::filesystem::path& out_dir, int n_per_grade, std::uint64_t seed,
                               int image_size = 128);

/// Unit-variance Gaussian noise; grade-4 images add +3 over a square of side
/// S/4 anchored in the top-left corner (offset by up to S/16 pixels).
cv::Mat render_planted(int grade, int size, std::mt19937_64& rng);

/// Two-class localization task (grades 0 and 4) as ready-to-use tensors, so no
/// per-image normalization is applied on top of the generator.
ImageSet planted_feature_images(int n_per_class, std::uint64_t seed, int image_size = 64, int channels = 3);

/// The same images written as 8-bit PNGs with a manifest.
DatasetManifest planted_feature_dataset(const std::filesystem::path& out_dir, int n_per_class, std::uint64_t seed,
                                        int image_size = 64);

}  // namespace osteo
