#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "osteo/attention.hpp"

using namespace osteo;
using osteo::check::grad_check;
using osteo::check::random_tensor;
using osteo::check::weighted_sum;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Fixture {
    std::size_t C = 8, H = 5, W = 6, r = 4;
    std::mt19937_64 rng{21};
    Tensor<double> P = random_tensor({C, H, W}, rng);
    ChannelAttentionParams<double> ch{random_tensor({C / r, C}, rng), random_tensor({C, C / r}, rng)};
    SpatialAttentionParams<double> sp{random_tensor({1, 2, 7, 7}, rng, -0.3, 0.3)};
};

// Plain loops over the feature map, independent of the tensor ops.
std::vector<double> reference_channel_map(const Fixture& f, bool literal = false) {
    const auto C = f.C, HW = f.H * f.W, hidden = f.C / f.r;
    std::vector<double> avg(C, 0.0), mx(C, -1e300);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
            avg[c] += f.P[c * HW + i] / static_cast<double>(HW);
            mx[c] = std::max(mx[c], f.P[c * HW + i]);
        }
    auto mlp = [&](const std::vector<double>& d) {
        std::vector<double> h(hidden, 0.0), o(C, 0.0);
        for (std::size_t j = 0; j < hidden; ++j) {
            for (std::size_t c = 0; c < C; ++c) h[j] += f.ch.fc1[j * C + c] * d[c];
            h[j] = std::max(0.0, h[j]);
        }
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < hidden; ++j) o[c] += f.ch.fc2[c * hidden + j] * h[j];
        return o;
    };
    auto a = mlp(avg), m = mlp(mx);
    std::vector<double> out(C);
    for (std::size_t c = 0; c < C; ++c) out[c] = literal ? sig(a[c]) + m[c] : sig(a[c] + m[c]);
    return out;
}

std::vector<double> reference_spatial_map(const Tensor<double>& P, const Tensor<double>& kernel) {
    const auto C = P.dim(0), H = P.dim(1), W = P.dim(2);
    std::vector<double> avg(H * W, 0.0), mx(H * W, -1e300);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) {
            avg[i] += P[c * H * W + i] / static_cast<double>(C);
            mx[i] = std::max(mx[i], P[c * H * W + i]);
        }
    std::vector<double> out(H * W);
    for (int y = 0; y < static_cast<int>(H); ++y)
        for (int x = 0; x < static_cast<int>(W); ++x) {
            double s = 0.0;
            for (int dy = -3; dy <= 3; ++dy)
                for (int dx = -3; dx <= 3; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<int>(H) || xx >= static_cast<int>(W)) continue;
                    const std::size_t k = static_cast<std::size_t>((dy + 3) * 7 + dx + 3);
                    const std::size_t i = static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx);
                    s += kernel[k] * avg[i] + kernel[49 + k] * mx[i];
                }
            out[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = sig(s);
        }
    return out;
}

}  // namespace

TEST(ChannelAttention, ShapeAndRange) {
    Fixture f;
    auto m = channel_attention(f.P, f.ch);
    EXPECT_EQ(m.shape(), (Shape{f.C, 1, 1}));
    for (auto v : m.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(ChannelAttention, ZeroWeightsGiveHalf) {
    Fixture f;
    f.ch.fc1 = Tensor<double>::zeros(f.ch.fc1.shape());
    f.ch.fc2 = Tensor<double>::zeros(f.ch.fc2.shape());
    auto m = channel_attention(f.P, f.ch);
    for (auto v : m.values()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttention, MatchesReference) {
    Fixture f;
    auto m = channel_attention(f.P, f.ch);
    auto ref = reference_channel_map(f);
    for (std::size_t c = 0; c < f.C; ++c) EXPECT_NEAR(m[c], ref[c], 1e-12);
}

TEST(ChannelAttention, LiteralFormMatchesReference) {
    Fixture f;
    auto m = channel_attention(f.P, f.ch, ChannelMapForm::literal);
    auto ref = reference_channel_map(f, true);
    for (std::size_t c = 0; c < f.C; ++c) EXPECT_NEAR(m[c], ref[c], 1e-12);
}

TEST(ChannelAttention, InvariantToSpatialPermutation) {
    Fixture f;
    auto before = channel_attention(f.P, f.ch);
    std::mt19937_64 rng(5);
    std::vector<std::size_t> perm(f.H * f.W);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor<double> Q(f.P.shape());
    for (std::size_t c = 0; c < f.C; ++c)
        for (std::size_t i = 0; i < perm.size(); ++i) Q[c * perm.size() + i] = f.P[c * perm.size() + perm[i]];
    auto after = channel_attention(Q, f.ch);
    for (std::size_t c = 0; c < f.C; ++c) EXPECT_NEAR(before[c], after[c], 1e-14);
}

TEST(ChannelAttention, RejectsChannelMismatch) {
    Fixture f;
    EXPECT_THROW(channel_attention(Tensor<double>::ones({4, 3, 3}), f.ch), DimensionError);
}

TEST(SpatialAttention, ShapeAndZeroKernel) {
    Fixture f;
    EXPECT_EQ(spatial_attention(f.P, f.sp).shape(), (Shape{1, f.H, f.W}));
    SpatialAttentionParams<double> zero{Tensor<double>::zeros({1, 2, 7, 7})};
    auto m = spatial_attention(f.P, zero);
    for (auto v : m.values()) EXPECT_EQ(v, 0.5);
    SpatialAttentionParams<double> bad{Tensor<double>::zeros({1, 2, 5, 5})};
    EXPECT_THROW(spatial_attention(f.P, bad), DimensionError);
}

TEST(SpatialAttention, MatchesReference) {
    Fixture f;
    auto m = spatial_attention(f.P, f.sp);
    auto ref = reference_spatial_map(f.P, f.sp.kernel);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(m[i], ref[i], 1e-12);
}

TEST(SpatialAttention, InvariantToChannelPermutation) {
    Fixture f;
    auto before = spatial_attention(f.P, f.sp);
    const std::size_t HW = f.H * f.W;
    Tensor<double> Q(f.P.shape());
    for (std::size_t c = 0; c < f.C; ++c)
        for (std::size_t i = 0; i < HW; ++i) Q[c * HW + i] = f.P[(f.C - 1 - c) * HW + i];
    auto after = spatial_attention(Q, f.sp);
    for (std::size_t i = 0; i < HW; ++i) EXPECT_NEAR(before[i], after[i], 1e-14);
}

TEST(Cbam, IdentityBypassReturnsInput) {
    Fixture f;
    CbamOptions o;
    o.identity = true;
    auto out = cbam_forward(f.P, f.ch, f.sp, o);
    EXPECT_EQ(out.refined.values(), f.P.values());
}

TEST(Cbam, ChannelThenSpatial) {
    Fixture f;
    auto out = cbam_forward(f.P, f.ch, f.sp);
    auto mc = reference_channel_map(f);
    const std::size_t HW = f.H * f.W;
    Tensor<double> Pc(f.P.shape());
    for (std::size_t c = 0; c < f.C; ++c)
        for (std::size_t i = 0; i < HW; ++i) Pc[c * HW + i] = mc[c] * f.P[c * HW + i];
    auto ms = reference_spatial_map(Pc, f.sp.kernel);
    for (std::size_t c = 0; c < f.C; ++c)
        for (std::size_t i = 0; i < HW; ++i) EXPECT_NEAR(out.refined[c * HW + i], ms[i] * Pc[c * HW + i], 1e-12);
    EXPECT_EQ(out.channel_map.shape(), (Shape{f.C, 1, 1}));
    EXPECT_EQ(out.spatial_map.shape(), (Shape{1, f.H, f.W}));
}

TEST(Cbam, OutputStrictlyInsideInputMagnitude) {
    Fixture f;
    auto out = cbam_forward(f.P, f.ch, f.sp);
    for (std::size_t i = 0; i < f.P.numel(); ++i) {
        if (f.P[i] != 0.0) EXPECT_LT(std::abs(out.refined[i]), std::abs(f.P[i]));
    }
}

TEST(Cbam, VanishesAsLogitsGoToMinusInfinity) {
    Fixture f;
    f.sp.kernel = Tensor<double>({1, 2, 7, 7}, -50.0);
    auto P = Tensor<double>({f.C, f.H, f.W}, 1.0);
    auto out = cbam_forward(P, f.ch, f.sp);
    for (auto v : out.refined.values()) EXPECT_LT(std::abs(v), 1e-100);
}

TEST(Cbam, BatchedEqualsPerSample) {
    Fixture f;
    std::mt19937_64 rng(8);
    auto Q = random_tensor({f.C, f.H, f.W}, rng);
    auto batch = concat_channels<double>({f.P, Q});
    auto b = cbam_forward(reshape(batch, {2, f.C, f.H, f.W}), f.ch, f.sp);
    auto one = cbam_forward(f.P, f.ch, f.sp), two = cbam_forward(Q, f.ch, f.sp);
    for (std::size_t i = 0; i < f.P.numel(); ++i) {
        EXPECT_NEAR(b.refined[i], one.refined[i], 1e-14);
        EXPECT_NEAR(b.refined[f.P.numel() + i], two.refined[i], 1e-14);
    }
}

TEST(Cbam, GradientMatchesFiniteDifferences) {
    Fixture f;
    auto r = grad_check({f.P, f.ch.fc1, f.ch.fc2, f.sp.kernel},
                        [&] { return weighted_sum(cbam_forward(f.P, f.ch, f.sp).refined); });
    EXPECT_LT(r.relative_error, 1e-4);
}

TEST(Cbam, ParameterCount) {
    EXPECT_EQ(cbam_parameter_count(64, 16), 2u * 64 * 4 + 98);
    EXPECT_EQ(cbam_parameter_count(256, 16), 2u * 256 * 16 + 98);
}
