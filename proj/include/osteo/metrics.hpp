#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace osteo {

/// Contingency counts, indexed [predicted][true].
struct ConfusionMatrix {
    static constexpr int K = 5;
    std::array<std::array<std::int64_t, K>, K> counts{};

    std::int64_t total() const;
    std::int64_t at(int predicted, int truth) const { return counts[predicted][truth]; }
    std::array<std::int64_t, K> predicted_histogram() const;
    std::array<std::int64_t, K> true_histogram() const;
    ConfusionMatrix transposed() const;

    /// CSV with rows = true grade, columns = predicted grade.
    void write_csv(std::ostream& os) const;
    static ConfusionMatrix read_csv(std::istream& is, const std::string& source = "confusion csv");

    bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricsReport {
    double accuracy = 0.0;
    double mae = 0.0;
    double qwk = 0.0;
    /// Recall per true grade; 0 for grades with no samples.
    std::array<double, ConfusionMatrix::K> per_class_accuracy{};
    std::int64_t samples = 0;

    void write_csv(std::ostream& os) const;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted);

double accuracy(const ConfusionMatrix& cm);

double mae(std::span<const int> truth, std::span<const int> predicted);

/// Quadratic weighted kappa with w = (p − p̂)²/(K − 1)² and the expected
/// matrix scaled to the same total as the observed one.
double qwk(const ConfusionMatrix& cm);

std::array<double, ConfusionMatrix::K> per_class_accuracy(const ConfusionMatrix& cm);

MetricsReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted);

/// Index of the largest probability; ties go to the lower grade.
int argmax_grade(std::span<const double> probabilities);
int argmax_grade(std::span<const float> probabilities);

}  // namespace osteo
