#pragma once

#include <array>
#include <span>
#include <string>

#include "osteo/tensor.hpp"

namespace osteo {

/// Misclassification weights c[u][v]: row u is the predicted grade, column v
/// the true grade.
class PenaltyMatrix {
public:
    static constexpr int kSize = 5;
    using Grid = std::array<std::array<double, kSize>, kSize>;

    /// Validates: non-negative, unit diagonal, and each column non-decreasing
    /// with distance from the diagonal.
    explicit PenaltyMatrix(const Grid& grid);

    static PenaltyMatrix all_ones();

    double operator()(int predicted, int truth) const { return grid_[predicted][truth]; }
    const Grid& grid() const { return grid_; }

    /// Rows separated by ';', entries by whitespace or ','.
    static PenaltyMatrix parse(const std::string& text);
    std::string to_string() const;

private:
    Grid grid_;
};

PenaltyMatrix default_penalty_matrix();

/// Sum over u of c[u][v]·q_u with q_u = p_u (u ≠ v) and q_v = 1 − p_v.
double ordinal_loss(std::span<const double> probabilities, int truth, const PenaltyMatrix& penalty);

/// −log p_v with the log argument clamped at 1e-12.
double cross_entropy_loss(std::span<const double> probabilities, int truth);

/// Batch forms over softmax outputs (5 or N×5), mean-reduced and differentiable.
template <typename T>
Tensor<T> ordinal_loss(const Tensor<T>& probabilities, std::span<const int> truth, const PenaltyMatrix& penalty);

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probabilities, std::span<const int> truth);

}  // namespace osteo
