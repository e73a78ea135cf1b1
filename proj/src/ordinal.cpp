#include "osteo/ordinal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <vector>

namespace osteo {

namespace {

constexpr double kLogClamp = 1e-12;

void check_grade(int v) {
    if (v < 0 || v >= PenaltyMatrix::kSize) {
        throw DataError("grade " + std::to_string(v) + " outside 0.." + std::to_string(PenaltyMatrix::kSize - 1));
    }
}

template <typename T>
std::size_t rows_of(const Tensor<T>& p, std::size_t labels, const char* op) {
    const bool ok = (p.rank() == 1 && p.dim(0) == PenaltyMatrix::kSize) ||
                    (p.rank() == 2 && p.dim(1) == PenaltyMatrix::kSize);
    if (!ok) throw DimensionError(std::string(op) + ": probabilities must be 5 or N×5, got " + shape_string(p.shape()));
    const std::size_t n = p.rank() == 2 ? p.dim(0) : 1;
    if (labels != n) {
        throw DimensionError(std::string(op) + ": " + std::to_string(labels) + " labels for " + std::to_string(n) +
                             " rows");
    }
    return n;
}

}  // namespace

PenaltyMatrix::PenaltyMatrix(const Grid& grid) : grid_(grid) {
    for (int u = 0; u < kSize; ++u) {
        for (int v = 0; v < kSize; ++v) {
            if (!(grid_[u][v] >= 0.0) || !std::isfinite(grid_[u][v])) {
                throw ConfigError("penalty matrix entries must be finite and non-negative");
            }
        }
        if (grid_[u][u] != 1.0) throw ConfigError("penalty matrix diagonal must be 1");
    }
    for (int v = 0; v < kSize; ++v) {
        for (int u = 0; u < kSize; ++u) {
            for (int w = 0; w < kSize; ++w) {
                if (std::abs(u - v) > std::abs(w - v) && grid_[u][v] < grid_[w][v]) {
                    throw ConfigError("penalty matrix column " + std::to_string(v) +
                                      " decreases away from the diagonal");
                }
            }
        }
    }
}

PenaltyMatrix PenaltyMatrix::all_ones() {
    Grid g;
    for (auto& row : g) row.fill(1.0);
    return PenaltyMatrix(g);
}

PenaltyMatrix PenaltyMatrix::parse(const std::string& text) {
    Grid g{};
    std::stringstream rows(text);
    std::string row;
    int r = 0;
    while (std::getline(rows, row, ';')) {
        std::replace(row.begin(), row.end(), ',', ' ');
        if (row.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        if (r >= kSize) throw ConfigError("penalty matrix has more than 5 rows");
        std::istringstream cells(row);
        int c = 0;
        std::string cell;
        while (cells >> cell) {
            if (c >= kSize) throw ConfigError("penalty matrix row " + std::to_string(r) + " has more than 5 entries");
            char* end = nullptr;
            g[r][c] = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0') throw ConfigError("penalty matrix: bad number '" + cell + "'");
            ++c;
        }
        if (c != kSize) throw ConfigError("penalty matrix row " + std::to_string(r) + " needs 5 entries");
        ++r;
    }
    if (r != kSize) throw ConfigError("penalty matrix needs 5 rows");
    return PenaltyMatrix(g);
}

std::string PenaltyMatrix::to_string() const {
    std::ostringstream os;
    for (int u = 0; u < kSize; ++u) {
        if (u) os << "; ";
        for (int v = 0; v < kSize; ++v) os << (v ? " " : "") << grid_[u][v];
    }
    return os.str();
}

PenaltyMatrix default_penalty_matrix() {
    return PenaltyMatrix({{
        {1, 3, 6, 7, 9},
        {4, 1, 4, 5, 7},
        {6, 4, 1, 3, 5},
        {9, 7, 4, 1, 4},
        {11, 9, 7, 5, 1},
    }});
}

double ordinal_loss(std::span<const double> p, int truth, const PenaltyMatrix& penalty) {
    check_grade(truth);
    if (p.size() != PenaltyMatrix::kSize) throw DimensionError("ordinal_loss: expected 5 probabilities");
    double loss = 0.0;
    for (int u = 0; u < PenaltyMatrix::kSize; ++u) {
        const double q = u == truth ? 1.0 - p[u] : p[u];
        loss += penalty(u, truth) * q;
    }
    return loss;
}

double cross_entropy_loss(std::span<const double> p, int truth) {
    check_grade(truth);
    if (p.size() != PenaltyMatrix::kSize) throw DimensionError("cross_entropy_loss: expected 5 probabilities");
    return -std::log(std::max(p[truth], kLogClamp));
}

template <typename T>
Tensor<T> ordinal_loss(const Tensor<T>& probabilities, std::span<const int> truth, const PenaltyMatrix& penalty) {
    const std::size_t n = rows_of(probabilities, truth.size(), "ordinal_loss");
    constexpr int K = PenaltyMatrix::kSize;
    std::vector<int> labels(truth.begin(), truth.end());
    for (int v : labels) check_grade(v);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int v = labels[i];
        for (int u = 0; u < K; ++u) {
            const T p = probabilities[i * K + u];
            total += static_cast<T>(penalty(u, v)) * (u == v ? T(1) - p : p);
        }
    }
    auto out = Tensor<T>::scalar(total / static_cast<T>(n));
    check_finite(out, "ordinal_loss");
    out.record({probabilities}, [probabilities, labels, penalty, n](const TensorImpl<T>& self) mutable {
        if (!probabilities.requires_grad()) return;
        auto& g = probabilities.grad_buffer();
        const T scale = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int v = labels[i];
            for (int u = 0; u < K; ++u) {
                const T c = static_cast<T>(penalty(u, v));
                g[i * K + u] += (u == v ? -c : c) * scale;
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& probabilities, std::span<const int> truth) {
    const std::size_t n = rows_of(probabilities, truth.size(), "cross_entropy_loss");
    constexpr int K = PenaltyMatrix::kSize;
    std::vector<int> labels(truth.begin(), truth.end());
    for (int v : labels) check_grade(v);
    const T clamp = static_cast<T>(kLogClamp);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total -= std::log(std::max(probabilities[i * K + labels[i]], clamp));
    auto out = Tensor<T>::scalar(total / static_cast<T>(n));
    check_finite(out, "cross_entropy_loss");
    out.record({probabilities}, [probabilities, labels, n, clamp](const TensorImpl<T>& self) mutable {
        if (!probabilities.requires_grad()) return;
        auto& g = probabilities.grad_buffer();
        const T scale = self.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const T p = probabilities[i * K + labels[i]];
            if (p > clamp) g[i * K + labels[i]] -= scale / p;
        }
    });
    return out;
}

template Tensor<float> ordinal_loss<float>(const Tensor<float>&, std::span<const int>, const PenaltyMatrix&);
template Tensor<double> ordinal_loss<double>(const Tensor<double>&, std::span<const int>, const PenaltyMatrix&);
template Tensor<float> cross_entropy_loss<float>(const Tensor<float>&, std::span<const int>);
template Tensor<double> cross_entropy_loss<double>(const Tensor<double>&, std::span<const int>);

}  // namespace osteo
