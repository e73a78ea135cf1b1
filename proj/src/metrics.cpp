#include "osteo/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

#include "osteo/error.hpp"

namespace osteo {

namespace {

constexpr int K = ConfusionMatrix::K;

void check_labels(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) {
        throw DataError("label sequences differ in length: " + std::to_string(truth.size()) + " vs " +
                        std::to_string(predicted.size()));
    }
    if (truth.empty()) throw DataError("no labels to evaluate");
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= K || predicted[i] < 0 || predicted[i] >= K) {
            throw DataError("grade out of range at index " + std::to_string(i));
        }
    }
}

template <typename V>
int argmax_impl(std::span<const V> p) {
    if (p.empty()) throw DataError("argmax of an empty distribution");
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i) {
        if (p[i] > p[best]) best = i;
    }
    return best;
}

}  // namespace

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (const auto& row : counts)
        for (auto c : row) n += c;
    return n;
}

std::array<std::int64_t, K> ConfusionMatrix::predicted_histogram() const {
    std::array<std::int64_t, K> h{};
    for (int p = 0; p < K; ++p)
        for (int t = 0; t < K; ++t) h[p] += counts[p][t];
    return h;
}

std::array<std::int64_t, K> ConfusionMatrix::true_histogram() const {
    std::array<std::int64_t, K> h{};
    for (int p = 0; p < K; ++p)
        for (int t = 0; t < K; ++t) h[t] += counts[p][t];
    return h;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
    ConfusionMatrix m;
    for (int p = 0; p < K; ++p)
        for (int t = 0; t < K; ++t) m.counts[t][p] = counts[p][t];
    return m;
}

void ConfusionMatrix::write_csv(std::ostream& os) const {
    os << "true\\predicted";
    for (int p = 0; p < K; ++p) os << ",pred_" << p;
    os << '\n';
    for (int t = 0; t < K; ++t) {
        os << "true_" << t;
        for (int p = 0; p < K; ++p) os << ',' << counts[p][t];
        os << '\n';
    }
}

ConfusionMatrix ConfusionMatrix::read_csv(std::istream& is, const std::string& source) {
    ConfusionMatrix m;
    std::string line;
    if (!std::getline(is, line)) throw DataError(source + ": empty file");
    for (int t = 0; t < K; ++t) {
        if (!std::getline(is, line)) throw DataError(source + ": expected 5 data rows, got " + std::to_string(t));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        for (int p = 0; p < K; ++p) {
            if (!std::getline(ss, cell, ',')) {
                throw DataError(source + ":" + std::to_string(t + 2) + ": expected 5 counts");
            }
            char* end = nullptr;
            const long long v = std::strtoll(cell.c_str(), &end, 10);
            if (end == cell.c_str() || *end != '\0' || v < 0) {
                throw DataError(source + ":" + std::to_string(t + 2) + ": bad count '" + cell + "'");
            }
            m.counts[p][t] = v;
        }
    }
    return m;
}

void MetricsReport::write_csv(std::ostream& os) const {
    os << "metric,value\n";
    os << "samples," << samples << '\n';
    os << "accuracy," << accuracy << '\n';
    os << "mae," << mae << '\n';
    os << "qwk," << qwk << '\n';
    for (int g = 0; g < K; ++g) os << "accuracy_grade_" << g << ',' << per_class_accuracy[g] << '\n';
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted) {
    check_labels(truth, predicted);
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < truth.size(); ++i) ++cm.counts[predicted[i]][truth[i]];
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    const auto n = cm.total();
    if (n == 0) throw DataError("accuracy of an empty confusion matrix");
    std::int64_t diag = 0;
    for (int g = 0; g < K; ++g) diag += cm.counts[g][g];
    return static_cast<double>(diag) / static_cast<double>(n);
}

double mae(std::span<const int> truth, std::span<const int> predicted) {
    check_labels(truth, predicted);
    std::int64_t err = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) err += std::abs(truth[i] - predicted[i]);
    return static_cast<double>(err) / static_cast<double>(truth.size());
}

double qwk(const ConfusionMatrix& cm) {
    const auto n = cm.total();
    if (n == 0) throw DataError("kappa of an empty confusion matrix");
    const auto hp = cm.predicted_histogram();
    const auto ht = cm.true_histogram();
    const double denom_w = static_cast<double>((K - 1) * (K - 1));
    double observed = 0.0, expected = 0.0;
    for (int p = 0; p < K; ++p) {
        for (int t = 0; t < K; ++t) {
            const double w = static_cast<double>((p - t) * (p - t)) / denom_w;
            observed += w * static_cast<double>(cm.counts[p][t]);
            expected += w * static_cast<double>(hp[p]) * static_cast<double>(ht[t]) / static_cast<double>(n);
        }
    }
    if (expected == 0.0) {
        throw UndefinedKappaError("kappa undefined: both raters put all mass on a single identical grade");
    }
    return 1.0 - observed / expected;
}

std::array<double, K> per_class_accuracy(const ConfusionMatrix& cm) {
    std::array<double, K> out{};
    const auto ht = cm.true_histogram();
    for (int g = 0; g < K; ++g) {
        out[g] = ht[g] ? static_cast<double>(cm.counts[g][g]) / static_cast<double>(ht[g]) : 0.0;
    }
    return out;
}

MetricsReport evaluate_predictions(std::span<const int> truth, std::span<const int> predicted) {
    const auto cm = confusion(truth, predicted);
    MetricsReport r;
    r.samples = cm.total();
    r.accuracy = accuracy(cm);
    r.mae = mae(truth, predicted);
    try {
        r.qwk = qwk(cm);
    } catch (const UndefinedKappaError&) {
        // Every sample sits on one grade for both raters: perfect agreement.
        r.qwk = 1.0;
    }
    r.per_class_accuracy = per_class_accuracy(cm);
    return r;
}

int argmax_grade(std::span<const double> p) { return argmax_impl(p); }
int argmax_grade(std::span<const float> p) { return argmax_impl(p); }

}  // namespace osteo
