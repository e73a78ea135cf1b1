#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "osteo/tensor.hpp"

namespace osteo {

enum class Split { unassigned, train, test, val };
enum class Laterality { left, right };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct GradeRecord {
    std::string path;
    int kl_grade = 0;
    Split split = Split::unassigned;
    std::optional<Laterality> laterality;
    std::string patient_id;

    bool operator==(const GradeRecord&) const = default;
};

/// Records in file order plus the directory their relative paths resolve against.
struct DatasetManifest {
    std::vector<GradeRecord> records;
    std::filesystem::path base_dir;

    std::size_t count(Split split, int grade) const;
    std::size_t split_size(Split split) const;
    std::size_t grade_total(int grade) const;
    std::vector<std::size_t> indices(Split split) const;
    std::filesystem::path resolve(const GradeRecord& record) const;
};

/// CSV with header `path,kl_grade[,split][,laterality][,patient_id]`.
DatasetManifest parse_manifest(std::istream& is, const std::string& source);
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, std::ostream& os);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// train:test:val weights, e.g. "7:2:1".
struct SplitRatios {
    double train = 7.0;
    double test = 2.0;
    double val = 1.0;

    static SplitRatios parse(const std::string& text);
};

struct SplitOptions {
    bool group_by_patient = false;
    bool strict = false;
};

struct SplitResult {
    DatasetManifest manifest;
    std::vector<std::string> warnings;
};

/// Largest-remainder allocation of n items over the three ratios.
std::array<std::size_t, 3> allocate_split(std::size_t n, const SplitRatios& ratios);

/// Per-grade proportional split. Membership depends only on the record set and
/// the seed; output keeps manifest order.
SplitResult stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed,
                             const SplitOptions& options = {});

/// 8- or 16-bit grayscale decoded into [0,1] doubles (CV_64F).
cv::Mat read_grayscale(const std::filesystem::path& path);
/// Writes CV_8U/CV_16U gray or CV_8UC3 color; format follows the extension.
void write_image(const std::filesystem::path& path, const cv::Mat& image);

/// Bilinear resize to size×size, per-image zero mean / unit variance
/// (variance floored at 1e-6), replicated to `channels`.
Tensor<float> normalize_image(const cv::Mat& gray, int size, int channels);
Tensor<float> load_image(const std::filesystem::path& path, int size, int channels = 3);

struct AugmentationPolicy {
    bool enabled = false;
    double flip_probability = 0.5;
    double rotation_degrees = 10.0;
    double brightness = 0.1;
    double contrast = 0.1;

    void validate() const;
};

/// Flip, rotation (bilinear, edge-clamped), brightness/contrast jitter.
/// A disabled policy returns the input untouched and draws nothing.
Tensor<float> augment(const Tensor<float>& image, const AugmentationPolicy& policy, std::mt19937_64& rng);

Tensor<float> flip_horizontal(const Tensor<float>& image);
Tensor<float> rotate(const Tensor<float>& image, double degrees);

/// Fisher–Yates shuffle driven directly by the 64-bit engine, so results do
/// not depend on the standard library's distribution implementations.
void shuffle_indices(std::vector<std::size_t>& indices, std::mt19937_64& rng);
double uniform01(std::mt19937_64& rng);

}  // namespace osteo
