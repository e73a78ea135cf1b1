#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "osteo/error.hpp"
#include "osteo/metrics.hpp"

using namespace osteo;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n) {
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(rng() % 5);
    return v;
}

ConfusionMatrix diagonal(std::array<std::int64_t, 5> d) {
    ConfusionMatrix cm;
    for (int i = 0; i < 5; ++i) cm.counts[i][i] = d[static_cast<std::size_t>(i)];
    return cm;
}

}  // namespace

TEST(Confusion, Counting) {
    auto cm = confusion(std::vector<int>{0}, std::vector<int>{0});
    EXPECT_EQ(cm.at(0, 0), 1);
    EXPECT_EQ(cm.total(), 1);
    std::mt19937_64 rng(41);
    auto t = random_labels(rng, 300), p = random_labels(rng, 300);
    cm = confusion(t, p);
    EXPECT_EQ(cm.total(), 300);
    auto th = cm.true_histogram(), ph = cm.predicted_histogram();
    for (int g = 0; g < 5; ++g) {
        EXPECT_EQ(th[static_cast<std::size_t>(g)], std::count(t.begin(), t.end(), g));
        EXPECT_EQ(ph[static_cast<std::size_t>(g)], std::count(p.begin(), p.end(), g));
    }
}

TEST(Confusion, Errors) {
    EXPECT_THROW(confusion(std::vector<int>{0, 1}, std::vector<int>{0}), DataError);
    EXPECT_THROW(confusion(std::vector<int>{}, std::vector<int>{}), DataError);
    EXPECT_THROW(confusion(std::vector<int>{5}, std::vector<int>{0}), DataError);
    EXPECT_THROW(accuracy(ConfusionMatrix{}), DataError);
    EXPECT_THROW(qwk(ConfusionMatrix{}), DataError);
}

TEST(Confusion, CsvRoundTrip) {
    std::mt19937_64 rng(42);
    auto cm = confusion(random_labels(rng, 50), random_labels(rng, 50));
    std::stringstream ss;
    cm.write_csv(ss);
    EXPECT_EQ(ConfusionMatrix::read_csv(ss), cm);
    std::stringstream bad("header\n1,2,3\n");
    EXPECT_THROW(ConfusionMatrix::read_csv(bad), DataError);
}

TEST(Accuracy, Examples) {
    EXPECT_EQ(accuracy(diagonal({3, 1, 2, 0, 4})), 1.0);
    EXPECT_EQ(accuracy(confusion(std::vector<int>{0, 1, 2}, std::vector<int>{1, 2, 3})), 0.0);
    auto cm = diagonal({2, 0, 0, 0, 0});
    cm.counts[3][1] = 2;
    EXPECT_EQ(accuracy(cm), 0.5);
}

TEST(Mae, Examples) {
    EXPECT_EQ(mae(std::vector<int>{1, 2}, std::vector<int>{1, 2}), 0.0);
    EXPECT_EQ(mae(std::vector<int>{0, 1, 2}, std::vector<int>{0, 2, 4}), 1.0);
    EXPECT_EQ(mae(std::vector<int>(7, 0), std::vector<int>(7, 4)), 4.0);
}

TEST(Qwk, Examples) {
    EXPECT_EQ(qwk(diagonal({3, 1, 2, 0, 4})), 1.0);
    EXPECT_DOUBLE_EQ(qwk(confusion(std::vector<int>{0, 4}, std::vector<int>{4, 0})), -1.0);
    EXPECT_THROW(qwk(diagonal({0, 0, 6, 0, 0})), UndefinedKappaError);
}

TEST(Qwk, MatchesBruteForce) {
    std::mt19937_64 rng(43);
    for (int i = 0; i < 50; ++i) {
        auto t = random_labels(rng, 200), p = random_labels(rng, 200);
        for (auto& x : p)
            if (rng() % 2) x = t[static_cast<std::size_t>(&x - p.data())];
        EXPECT_NEAR(qwk(confusion(t, p)), oracle::qwk(t, p), 1e-9);
        EXPECT_NEAR(accuracy(confusion(t, p)), oracle::accuracy(t, p), 1e-12);
        EXPECT_NEAR(mae(t, p), oracle::mae(t, p), 1e-12);
    }
}

TEST(Qwk, SymmetricUnderTranspose) {
    std::mt19937_64 rng(44);
    auto cm = confusion(random_labels(rng, 120), random_labels(rng, 120));
    EXPECT_NEAR(qwk(cm), qwk(cm.transposed()), 1e-12);
}

TEST(Qwk, OneOffDiagonalPerturbationIsOrdinal) {
    const auto base = diagonal({10, 10, 10, 10, 10});
    double previous = qwk(base);
    for (int d = 1; d <= 4; ++d) {
        auto cm = base;
        cm.counts[0][0] -= 1;
        cm.counts[d][0] += 1;
        const double k = qwk(cm);
        EXPECT_LT(k, previous) << "distance " << d;
        previous = k;
    }
}

TEST(Metrics, OrderInvariant) {
    std::mt19937_64 rng(45);
    auto t = random_labels(rng, 80), p = random_labels(rng, 80);
    const auto a = evaluate_predictions(t, p);
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> t2, p2;
    for (auto i : idx) {
        t2.push_back(t[i]);
        p2.push_back(p[i]);
    }
    const auto b = evaluate_predictions(t2, p2);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_DOUBLE_EQ(a.mae, b.mae);
    EXPECT_DOUBLE_EQ(a.qwk, b.qwk);
}

TEST(Metrics, ReportFields) {
    auto r = evaluate_predictions(std::vector<int>{0, 0, 1, 2}, std::vector<int>{0, 1, 1, 2});
    EXPECT_EQ(r.samples, 4);
    EXPECT_EQ(r.accuracy, 0.75);
    EXPECT_EQ(r.per_class_accuracy[0], 0.5);
    EXPECT_EQ(r.per_class_accuracy[1], 1.0);
    EXPECT_EQ(r.per_class_accuracy[3], 0.0);
    // A single shared grade leaves kappa undefined; the report records agreement.
    EXPECT_EQ(evaluate_predictions(std::vector<int>{2, 2}, std::vector<int>{2, 2}).qwk, 1.0);
    std::stringstream ss;
    r.write_csv(ss);
    EXPECT_NE(ss.str().find("accuracy"), std::string::npos);
}

TEST(Argmax, TiesGoLow) {
    EXPECT_EQ(argmax_grade(std::vector<double>{0.1, 0.4, 0.4, 0.1, 0.0}), 1);
    EXPECT_EQ(argmax_grade(std::vector<float>{0.f, 0.f, 0.f, 0.f, 1.f}), 4);
    EXPECT_THROW(argmax_grade(std::vector<double>{}), DataError);
}
