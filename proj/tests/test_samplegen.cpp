#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "ascl/error.h"
#include "ascl/samplegen.h"
#include "test_util.h"

using namespace ascl;
using ascl::fixtures::random_mat;

namespace {

Mat sequential_rows(std::size_t rows, std::size_t cols) {
    Mat m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = static_cast<double>(r + 1) + 0.01 * static_cast<double>(c);
    return m;
}

std::vector<std::size_t> zero_rows(const Mat& m) {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < m.rows(); ++r)
        if (std::ranges::all_of(m.row(r), [](double v) { return v == 0.0; })) out.push_back(r);
    return out;
}

TextFeatures text(const std::string& id, const std::string& parent, std::size_t rows, double base) {
    Mat w(rows, 2);
    for (std::size_t r = 0; r < rows; ++r) w(r, 0) = base + static_cast<double>(r);
    return {id, parent, w};
}

} // namespace

TEST(GaussianNoise, TinySigmaIsNearIdentity) {
    Rng rng(1);
    const Mat w = random_mat(5, 4, rng);
    EXPECT_LT(max_abs_diff(gaussian_noise(w, 1e-12, 3), w), 5e-12);
}

TEST(GaussianNoise, SeededAndStatisticallyCorrect) {
    const Mat w(100, 100, 0.5);
    const Mat a = gaussian_noise(w, 0.1, 17);
    EXPECT_EQ(a, gaussian_noise(w, 0.1, 17));
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a.values()[i] - 0.5;
    mean /= static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) sq += std::pow(a.values()[i] - 0.5 - mean, 2);
    const double sd = std::sqrt(sq / static_cast<double>(a.size()));
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(TokenShuffle, TwoRowsSwap) {
    const Mat w = sequential_rows(2, 3);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Mat out = token_shuffle(w, s);
        EXPECT_TRUE(std::ranges::equal(out.row(0), w.row(1)));
        EXPECT_TRUE(std::ranges::equal(out.row(1), w.row(0)));
    }
}

TEST(TokenShuffle, TooShortThrows) { EXPECT_THROW(token_shuffle(Mat(1, 3, 1.0), 1), DegenerateInput); }

TEST(TokenShuffle, PreservesRowsAndColumnSums) {
    Rng rng(2);
    const Mat w = random_mat(6, 4, rng);
    const Mat out = token_shuffle(w, 99);
    std::vector<std::vector<double>> a, b;
    for (std::size_t r = 0; r < 6; ++r) {
        a.emplace_back(w.row(r).begin(), w.row(r).end());
        b.emplace_back(out.row(r).begin(), out.row(r).end());
    }
    std::ranges::sort(a);
    std::ranges::sort(b);
    EXPECT_EQ(a, b);
    const auto ma = column_mean(w), mb = column_mean(out);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(ma[c], mb[c], 1e-15);
}

TEST(TokenShuffle, NonIdentityPermutationsUniform) {
    const Mat w = sequential_rows(3, 1);
    std::map<std::vector<double>, int> counts;
    const int draws = 10000;
    for (int s = 0; s < draws; ++s) {
        const Mat out = token_shuffle(w, static_cast<std::uint64_t>(s));
        counts[{out(0, 0), out(1, 0), out(2, 0)}]++;
    }
    EXPECT_EQ(counts.size(), 5u);
    EXPECT_EQ(counts.count({1.0, 2.0, 3.0}), 0u);
    for (const auto& [perm, n] : counts) EXPECT_NEAR(n / double(draws), 0.2, 0.02);
}

TEST(Cutoff, ExactlyCutCountRowsOrColumnsZeroed) {
    const Mat w = sequential_rows(5, 6);
    for (std::uint64_t s = 0; s < 30; ++s) {
        const Mat t = token_cutoff(w, 2, s);
        const auto zr = zero_rows(t);
        EXPECT_EQ(zr.size(), 2u);
        for (std::size_t r = 0; r < 5; ++r)
            if (!std::ranges::count(zr, r)) EXPECT_TRUE(std::ranges::equal(t.row(r), w.row(r)));
        EXPECT_LE(frobenius_norm(t), frobenius_norm(w));

        const Mat f = feature_cutoff(w, 3, s);
        const auto zc = zero_rows(transpose(f));
        EXPECT_EQ(zc.size(), 3u);
        EXPECT_LE(frobenius_norm(f), frobenius_norm(w));
    }
}

TEST(Cutoff, LeavesOneRowAtMaximum) {
    const Mat w = sequential_rows(4, 3);
    EXPECT_EQ(zero_rows(token_cutoff(w, 3, 5)).size(), 3u);
}

TEST(Cutoff, ZeroedIndicesVaryWithSeed) {
    const Mat w = sequential_rows(8, 3);
    std::set<std::vector<std::size_t>> patterns;
    for (std::uint64_t s = 0; s < 20; ++s) patterns.insert(zero_rows(token_cutoff(w, 1, s)));
    EXPECT_GT(patterns.size(), 3u);
}

TEST(Cutoff, OutOfRangeThrows) {
    const Mat w = sequential_rows(3, 4);
    EXPECT_THROW(token_cutoff(w, 3, 1), ConfigError);
    EXPECT_THROW(token_cutoff(w, 0, 1), ConfigError);
    EXPECT_THROW(feature_cutoff(w, 4, 1), ConfigError);
}

TEST(Dropout, TinyProbabilityKeepsEverything) { EXPECT_EQ(dropout_noise(Mat(10, 10, 2.0), 1e-9, 1), Mat(10, 10, 2.0)); }

TEST(Dropout, FractionAndNoRescale) {
    const Mat w(200, 200, 2.0);
    const Mat out = dropout_noise(w, 0.3, 8);
    EXPECT_EQ(out, dropout_noise(w, 0.3, 8));
    std::size_t zeros = 0;
    for (double v : out.values()) {
        if (v == 0.0) ++zeros;
        else EXPECT_EQ(v, 2.0);
    }
    EXPECT_NEAR(zeros / double(out.size()), 0.3, 0.02);
}

TEST(Mixture, SingletonEqualsStrategy) {
    Rng rng(3);
    const Mat w = random_mat(4, 5, rng);
    NoiseStrategy p;
    for (std::uint64_t s = 0; s < 10; ++s) {
        EXPECT_EQ(mixture(w, {NoiseKind::Gaussian}, p, s), gaussian_noise(w, p.sigma, s));
        EXPECT_EQ(mixture(w, {NoiseKind::Dropout}, p, s), dropout_noise(w, p.drop_prob, s));
    }
}

TEST(Mixture, UniformChoice) {
    std::vector<int> counts(5, 0);
    for (std::uint64_t s = 0; s < 10000; ++s) counts[mixture_choice(5, s)]++;
    for (int n : counts) EXPECT_NEAR(n / 10000.0, 0.2, 0.02);
}

TEST(Mixture, EmptyListThrows) {
    EXPECT_THROW(mixture(Mat(2, 2, 1.0), {}, NoiseStrategy{}, 1), ConfigError);
}

TEST(Mixture, DistanceDistributionIsAMixture) {
    // Gaussian noise moves W by about sigma * sqrt(96) ~ 1; shuffle, cutoff and
    // dropout move it much further.
    Rng rng(4);
    const Mat w = random_mat(6, 16, rng);
    NoiseStrategy p;
    std::size_t small = 0, large = 0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        const double d = frobenius_norm(mixture(w, p.mixture, p, s) - w);
        (d < 1.5 ? small : large)++;
    }
    EXPECT_GT(small, 50u);
    EXPECT_GT(large, 50u);
}

TEST(Strategies, Validation) {
    NoiseStrategy n;
    n.sigma = 0.0;
    EXPECT_THROW(n.validate(), ConfigError);
    n = {};
    n.drop_prob = 1.0;
    EXPECT_THROW(n.validate(), ConfigError);
    n = {};
    n.mixture.push_back(NoiseKind::Mixture);
    EXPECT_THROW(n.validate(), ConfigError);
    PositiveStrategy p;
    p.truncate_ratio = 1.0;
    EXPECT_THROW(p.validate(), ConfigError);
    EXPECT_EQ(parse_noise_kind("token_cutoff"), NoiseKind::TokenCutoff);
    EXPECT_THROW(parse_noise_kind("salt"), ConfigError);
}

TEST(Concat, JoinsInOrder) {
    const TextFeatures a = text("a", "img", 3, 0.0), b = text("b", "img", 4, 10.0);
    const TextFeatures out = concat_positive(a, b, 16);
    ASSERT_EQ(out.word_count(), 7u);
    EXPECT_EQ(out.parent_image, "img");
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(out.words(r, 0), a.words(r, 0));
    for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(out.words(3 + r, 0), b.words(r, 0));
    EXPECT_FALSE(concat_positive(b, a, 16).words == out.words);
}

TEST(Concat, ClipsToMaximum) {
    const TextFeatures a = text("a", "img", 10, 0.0), b = text("b", "img", 10, 100.0);
    const TextFeatures out = concat_positive(a, b, 12);
    ASSERT_EQ(out.word_count(), 12u);
    EXPECT_EQ(out.words(11, 0), 101.0);
}

TEST(Concat, PairingErrors) {
    EXPECT_THROW(concat_positive(text("a", "x", 2, 0), text("b", "y", 2, 0), 16), PairingError);
    EXPECT_THROW(concat_positive(text("a", "x", 2, 0), text("a", "x", 2, 0), 16), PairingError);
}

TEST(Truncate, KeepsCeilingPrefix) {
    const TextFeatures t = text("t", "img", 8, 0.0);
    const TextFeatures half = truncate_positive(t, 0.5);
    ASSERT_EQ(half.word_count(), 4u);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_TRUE(std::ranges::equal(half.words.row(r), t.words.row(r)));
    EXPECT_EQ(truncate_positive(text("u", "img", 3, 0.0), 0.99).word_count(), 3u);
    EXPECT_EQ(truncate_positive(t, 0.01).word_count(), 1u);
    EXPECT_EQ(half.parent_image, "img");
}

TEST(Generators, PureFunctionsOfSeed) {
    Rng rng(6);
    const Mat w = random_mat(5, 7, rng);
    NoiseStrategy p;
    for (NoiseKind k : {NoiseKind::Gaussian, NoiseKind::Shuffle, NoiseKind::TokenCutoff, NoiseKind::FeatureCutoff,
                        NoiseKind::Dropout, NoiseKind::Mixture}) {
        p.kind = k;
        const Mat a = apply_noise(w, p, 77);
        EXPECT_EQ(a, apply_noise(w, p, 77));
        EXPECT_TRUE(a.same_shape(w));
    }
}
