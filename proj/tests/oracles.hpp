#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <vector>

// Reference implementations written straight from the definitions, sharing
// no code with the library.

namespace osteo::oracle {

inline const std::array<std::array<double, 5>, 5> kPenalty{{
    {1, 3, 6, 7, 9},
    {4, 1, 4, 5, 7},
    {6, 4, 1, 3, 5},
    {9, 7, 4, 1, 4},
    {11, 9, 7, 5, 1},
}};

/// Σ_u c[u][v]·q_u, q_u = p_u off the truth and 1 − p_v on it.
inline double ordinal_loss(const std::vector<double>& p, int v,
                           const std::array<std::array<double, 5>, 5>& c = kPenalty) {
    double total = 0.0;
    for (int u = 0; u < 5; ++u) {
        const double q = (u == v) ? 1.0 - p[static_cast<std::size_t>(u)] : p[static_cast<std::size_t>(u)];
        total += c[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] * q;
    }
    return total;
}

inline double accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
    int hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

inline double mae(const std::vector<int>& truth, const std::vector<int>& pred) {
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
    return s / static_cast<double>(truth.size());
}

/// Observed and chance disagreement summed over sample pairs directly:
/// Σ_n w(pred_n, true_n) against (1/N)·Σ_n Σ_m w(pred_n, true_m).
inline double qwk(const std::vector<int>& truth, const std::vector<int>& pred) {
    auto w = [](int a, int b) { return (a - b) * (a - b) / 16.0; };
    const std::size_t n = truth.size();
    double observed = 0.0, expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) observed += w(pred[i], truth[i]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) expected += w(pred[i], truth[j]);
    expected /= static_cast<double>(n);
    return 1.0 - observed / expected;
}

}  // namespace osteo::oracle
