#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eitdiff/core/rng.hpp"
#include "eitdiff/metrics/metrics.hpp"
#include "eitdiff/phantom/noise.hpp"

using namespace eitdiff;

namespace {

PixelImage image(int n, std::vector<double> v) {
    PixelImage img(n);
    img.values = std::move(v);
    return img;
}

PixelImage random_image(int n, Rng& rng, double offset = 0.0) {
    PixelImage img(n);
    for (auto& v : img.values) v = offset + standard_normal(rng);
    return img;
}

} // namespace

TEST(Re, Identities) {
    Rng rng = make_rng(1);
    const auto x = random_image(16, rng);
    EXPECT_EQ(re(x, x), 0.0);
    PixelImage twice = x;
    for (auto& v : twice.values) v *= 2;
    EXPECT_DOUBLE_EQ(re(twice, x), 1.0);
}

TEST(Re, HandCase) {
    // all four pixel centres of a 2x2 grid lie in the unit disk
    EXPECT_DOUBLE_EQ(re(image(2, {1, 0, 0, 0}), image(2, {2, 0, 0, 0})), 0.5);
    EXPECT_THROW(re(image(2, {1, 0, 0, 0}), image(2, {0, 0, 0, 0})), ContractError);
}

TEST(Re, IgnoresPixelsOutsideTheDisk) {
    PixelImage truth(8), recon(8);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            truth.at(r, c) = 1.0;
            recon.at(r, c) = truth.in_disk(r, c) ? 1.0 : 100.0;
        }
    EXPECT_EQ(re(recon, truth), 0.0);
    EXPECT_EQ(mse(recon, truth), 0.0);
}

TEST(Ssim, SelfSimilarity) {
    Rng rng = make_rng(2);
    const auto x = random_image(12, rng, 3.0);
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);

    // squared-variance form, a = b: 4 m^2 var / ((2 m^2)(2 var^2)), evaluated directly
    std::vector<double> in;
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 12; ++c)
            if (x.in_disk(r, c)) in.push_back(x.at(r, c));
    const double m = std::accumulate(in.begin(), in.end(), 0.0) / static_cast<double>(in.size());
    double var = 0.0;
    for (double v : in) var += (v - m) * (v - m);
    var /= static_cast<double>(in.size());
    const double expected = 4 * m * m * var / ((2 * m * m + 1e-12) * (2 * var * var + 1e-12));
    EXPECT_NEAR(ssim_squared_var(x, x), expected, 1e-12 * std::abs(expected));
    EXPECT_NEAR(ssim_squared_var(x, x), 1.0 / var, 1e-9 / var);
}

TEST(Ssim, NegatedZeroMeanIsNotPositive) {
    // in-disk values k - (n-1)/2 are exact in binary and sum to exactly zero
    PixelImage x(10);
    std::vector<std::size_t> disk;
    for (int r = 0; r < 10; ++r)
        for (int c = 0; c < 10; ++c)
            if (x.in_disk(r, c)) disk.push_back(static_cast<std::size_t>(r * 10 + c));
    for (std::size_t k = 0; k < disk.size(); ++k)
        x.values[disk[k]] = static_cast<double>(k) - 0.5 * static_cast<double>(disk.size() - 1);
    PixelImage neg = x;
    for (auto& v : neg.values) v = -v;
    EXPECT_LE(ssim(x, neg), 0.0);
    EXPECT_LE(ssim_squared_var(x, neg), 0.0);
}

TEST(Ssim, HandCaseThreeByThree) {
    // a = 1..9, b = 2a; every 3x3 pixel centre is inside the disk.
    // means 5, 10; variances 20/3, 80/3; covariance 40/3
    // global form: 4*5*10*(40/3) / (125 * 100/3) = 0.64
    // squared-variance form: (8000/3) / (125 * 6800/9) = 24/850
    std::vector<double> a(9), b(9);
    for (int i = 0; i < 9; ++i) {
        a[static_cast<std::size_t>(i)] = i + 1;
        b[static_cast<std::size_t>(i)] = 2.0 * (i + 1);
    }
    EXPECT_NEAR(ssim(image(3, a), image(3, b)), 0.64, 1e-12);
    EXPECT_NEAR(ssim(image(3, b), image(3, a)), 0.64, 1e-12);
    EXPECT_NEAR(ssim_squared_var(image(3, a), image(3, b)), 24.0 / 850.0, 1e-12);
    EXPECT_NEAR(ssim_squared_var(image(3, b), image(3, a)), 24.0 / 850.0, 1e-12);
}

TEST(Psnr, Cases) {
    Rng rng = make_rng(4);
    const auto x = random_image(8, rng);
    EXPECT_TRUE(std::isinf(psnr(x, x)) && psnr(x, x) > 0);
    PixelImage off = x;
    for (auto& v : off.values) v += 0.597;
    EXPECT_NEAR(psnr(off, x), 0.0, 1e-12); // MSE = MAX^2
    EXPECT_NEAR(psnr(image(2, {0.1, 0.1, 0.1, 0.1}), image(2, {0, 0, 0, 0}), 1.0), 20.0, 1e-12);
}

TEST(Dr, Cases) {
    Rng rng = make_rng(5);
    const auto x = random_image(8, rng);
    EXPECT_DOUBLE_EQ(dr(x, x), 1.0);
    PixelImage twice = x;
    for (auto& v : twice.values) v *= 2;
    EXPECT_DOUBLE_EQ(dr(twice, x), 2.0);
    EXPECT_DOUBLE_EQ(dr(image(2, {1, 3, 2, 5}), image(2, {0, 1, 2, 0})), 2.0); // (5-1)/(2-0)
    EXPECT_THROW(dr(x, image(8, std::vector<double>(64, 0.3))), ContractError);
}

TEST(Cc, Cases) {
    Rng rng = make_rng(6);
    const auto x = random_image(8, rng);
    EXPECT_DOUBLE_EQ(cc(x, x), 1.0);
    PixelImage neg = x;
    for (auto& v : neg.values) v = -v;
    EXPECT_DOUBLE_EQ(cc(neg, x), -1.0);
    // a = 1,2,3,4; b = 1,3,2,5: cov sum 5.5, sum sq 5 and 8.75
    EXPECT_NEAR(cc(image(2, {1, 2, 3, 4}), image(2, {1, 3, 2, 5})), 5.5 / std::sqrt(5.0 * 8.75), 1e-15);
}

TEST(Mse, Cases) {
    Rng rng = make_rng(7);
    const auto x = random_image(8, rng);
    EXPECT_EQ(mse(x, x), 0.0);
    PixelImage off = x;
    for (auto& v : off.values) v += 0.25; // exact in binary
    EXPECT_NEAR(mse(off, x), 0.0625, 1e-15);
    EXPECT_DOUBLE_EQ(mse(image(2, {1, 2, 3, 4}), image(2, {0, 2, 5, 4})), 1.25); // (1 + 4) / 4
}

TEST(MeasureSnr, Cases) {
    const MeasurementFrame clean{{1.0, -2.0, 3.0, 0.5}, FrameKind::time_difference};
    EXPECT_TRUE(std::isinf(measure_snr(clean, clean)));
    MeasurementFrame noisy = clean;
    // noise with the same RMS as the clean frame: a permuted copy
    const std::vector<double> noise{-2.0, 0.5, 1.0, 3.0};
    for (std::size_t i = 0; i < 4; ++i) noisy.values[i] += noise[i];
    EXPECT_NEAR(measure_snr(clean, noisy), 0.0, 1e-12);
}

TEST(MeasureSnr, CalibrationRoundTrip) {
    Rng rng = make_rng(8);
    MeasurementFrame clean{std::vector<double>(208), FrameKind::time_difference};
    for (auto& v : clean.values) v = 1e-3 * standard_normal(rng);
    double acc = 0.0;
    for (int k = 0; k < 100; ++k) acc += measure_snr(clean, add_noise_snr(clean, 30.0, rng));
    EXPECT_NEAR(acc / 100, 30.0, 0.3);
}

// Property: applying one pixel permutation (within the disk) to both images
// leaves re, mse, cc and dr unchanged.
TEST(MetricProperties, PermutationConsistency) {
    Rng rng = make_rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_image(12, rng), b = random_image(12, rng, 0.5);
        std::vector<std::size_t> disk;
        for (int r = 0; r < 12; ++r)
            for (int c = 0; c < 12; ++c)
                if (a.in_disk(r, c)) disk.push_back(static_cast<std::size_t>(r * 12 + c));
        auto perm = disk;
        std::shuffle(perm.begin(), perm.end(), rng);
        PixelImage pa = a, pb = b;
        for (std::size_t k = 0; k < disk.size(); ++k) {
            pa.values[disk[k]] = a.values[perm[k]];
            pb.values[disk[k]] = b.values[perm[k]];
        }
        EXPECT_NEAR(re(pa, pb), re(a, b), 1e-12);
        EXPECT_NEAR(mse(pa, pb), mse(a, b), 1e-12);
        EXPECT_NEAR(cc(pa, pb), cc(a, b), 1e-12);
        EXPECT_EQ(dr(pa, pb), dr(a, b));
    }
}

TEST(MetricProperties, Ranges) {
    Rng rng = make_rng(10);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = random_image(10, rng, trial % 3 - 1.0), b = random_image(10, rng, 0.2 * trial - 3);
        EXPECT_GE(re(a, b), 0.0);
        EXPECT_GE(mse(a, b), 0.0);
        EXPECT_GE(cc(a, b), -1.0);
        EXPECT_LE(cc(a, b), 1.0 + 1e-9);
        EXPECT_GE(ssim(a, b), -1.0);
        EXPECT_LE(ssim(a, b), 1.0 + 1e-9);
    }
}

TEST(MetricProperties, AggregateIsArithmeticMeanAndRepeatable) {
    Rng rng = make_rng(11);
    std::vector<MetricRow> rows;
    for (int k = 0; k < 7; ++k) {
        const auto a = random_image(8, rng);
        const auto b = random_image(8, rng, 1.0);
        rows.push_back(evaluate_image(a, b));
    }
    const auto agg = aggregate(rows);
    double re_sum = 0.0, cc_sum = 0.0;
    for (const auto& r : rows) {
        re_sum += r.re;
        cc_sum += r.cc;
    }
    EXPECT_EQ(agg.re, re_sum / 7.0);
    EXPECT_EQ(agg.cc, cc_sum / 7.0);

    Rng again = make_rng(11);
    const auto a = random_image(8, again);
    const auto b = random_image(8, again, 1.0);
    const auto r2 = evaluate_image(a, b);
    EXPECT_EQ(r2.re, rows[0].re);
    EXPECT_EQ(r2.ssim, rows[0].ssim);
    EXPECT_EQ(r2.psnr, rows[0].psnr);
}
