#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "ascl/error.h"
#include "ascl/matcher.h"
#include "ascl/samplegen.h"
#include "oracles.h"
#include "test_util.h"

using namespace ascl;
using ascl::fixtures::random_image;
using ascl::fixtures::random_mat;
using ascl::fixtures::random_params;
using ascl::fixtures::random_text;

namespace {

MatcherSettings no_pe() {
    MatcherSettings s;
    s.positional_encoding = false;
    return s;
}

Mat permute_rows(const Mat& m, const std::vector<std::size_t>& perm) {
    Mat out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) std::ranges::copy(m.row(perm[r]), out.row(r).begin());
    return out;
}

// Gradient of score(...).total w.r.t. every parameter matrix, by ScoreTape and
// by central differences; returns the worst relative error.
double score_gradient_error(const ImageFeatures& img, const Mat& words, ModelParams params) {
    ModelParams grads = zeros_like(params);
    ScoreTape tape(params);
    tape.forward(img, words);
    tape.backward(1.0, grads);
    std::vector<Mat*> analytic;
    visit_params(grads, [&](std::string_view, Mat& g) { analytic.push_back(&g); });
    double worst = 0.0;
    std::size_t i = 0;
    visit_params(params, [&](std::string_view, Mat& p) {
        const Mat numeric = finite_diff_grad(
            [&](const Mat& v) {
                const Mat saved = p;
                p = v;
                const double s = ScoreTape(params).forward(img, words).total;
                p = saved;
                return s;
            },
            p, 1e-4);
        worst = std::max(worst, max_relative_error(*analytic[i++], numeric));
    });
    return worst;
}

} // namespace

TEST(CrossAttend, SingleKeyRowCollapses) {
    Rng rng(1);
    const ModelParams p = random_params(8, 2, 3);
    const Mat out = cross_attend(random_mat(5, 8, rng), random_mat(1, 8, rng), p.i2t);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_TRUE(std::ranges::equal(out.row(i), out.row(0)));
}

TEST(CrossAttend, SingleHeadIdentityReducesToAttention) {
    Rng rng(2);
    const CrossAttentionParams p{Mat::identity(6), Mat::identity(6), random_mat(6, 6, rng), 1};
    const Mat x = random_mat(3, 6, rng), y = random_mat(4, 6, rng);
    const Mat expected = matmul(sdp_attention(x, y, y), p.out_proj);
    EXPECT_LT(max_abs_diff(cross_attend(x, y, p), expected), 1e-12);
}

TEST(CrossAttend, ConvexCombinationOfValuesWithIdentityOutput) {
    Rng rng(3);
    const CrossAttentionParams p{random_mat(4, 4, rng), Mat::identity(4), Mat::identity(4), 1};
    const Mat y = random_mat(5, 4, rng);
    const Mat out = cross_attend(random_mat(3, 4, rng), y, p);
    for (std::size_t c = 0; c < 4; ++c) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t j = 0; j < 5; ++j) {
            lo = std::min(lo, y(j, c));
            hi = std::max(hi, y(j, c));
        }
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_GE(out(i, c), lo - 1e-12);
            EXPECT_LE(out(i, c), hi + 1e-12);
        }
    }
}

TEST(CrossAttend, MatchesPerHeadOracle) {
    Rng rng(4);
    for (int t = 0; t < 20; ++t) {
        const ModelParams p = random_params(8, 2, 100 + t);
        const Mat x = random_mat(3, 8, rng), y = random_mat(4, 8, rng);
        const Mat expected = oracle::mat_of(oracle::cross_attend(oracle::rows_of(x), oracle::rows_of(y), p.i2t));
        EXPECT_LT(max_abs_diff(cross_attend(x, y, p.i2t), expected), 1e-10);
    }
}

TEST(CrossAttend, ShapeMismatch) {
    const ModelParams p = random_params(8, 2, 1);
    EXPECT_THROW(cross_attend(Mat(2, 7), Mat(2, 8), p.i2t), ShapeError);
}

TEST(PositionalEncoding, MatchesSinusoidalFormula) {
    const Mat pe = positional_encoding(7, 10, 0.3);
    EXPECT_LT(max_abs_diff(pe, oracle::mat_of(oracle::positional(7, 10, 0.3))), 1e-14);
    for (std::size_t c = 0; c < 10; c += 2) EXPECT_EQ(pe(0, c), 0.0);
}

TEST(Fuse, LambdaOneIgnoresGlobalVector) {
    Rng rng(5);
    const ModelParams p = random_params(8, 2, 7, {}, 1.0);
    ImageFeatures img = random_image(3, 8, rng);
    const TextFeatures txt = random_text(4, 8, rng);
    const FusedPair a = fuse(img, txt, p);
    for (double& g : img.global) g = rng.normal();
    EXPECT_EQ(fuse(img, txt, p).image_global, a.image_global);
}

TEST(Fuse, LambdaZeroIgnoresAttendedImage) {
    Rng rng(6);
    ModelParams p = random_params(8, 2, 8, {}, 0.0);
    const ImageFeatures img = random_image(3, 8, rng);
    const TextFeatures txt = random_text(4, 8, rng);
    const FusedPair a = fuse(img, txt, p);
    p.global.region_proj = random_mat(8, 8, rng);
    p.t2i.out_proj = random_mat(8, 8, rng);
    EXPECT_EQ(fuse(img, txt, p).image_global, a.image_global);
}

TEST(Fuse, Shapes) {
    Rng rng(7);
    const ModelParams p = random_params(8, 4, 9);
    const FusedPair f = fuse(random_image(3, 8, rng), random_text(5, 8, rng), p);
    EXPECT_EQ(f.attended_text.rows(), 3u);
    EXPECT_EQ(f.attended_image.rows(), 5u);
    EXPECT_EQ(f.image_global.size(), 8u);
    EXPECT_EQ(f.text_global.size(), 8u);
}

TEST(Score, ForcedCopiesGiveUnitLocalScore) {
    Rng rng(8);
    ModelParams p = random_params(4, 1, 2, no_pe());
    for (CrossAttentionParams* dir : {&p.i2t, &p.t2i}) {
        dir->key_proj = Mat::identity(4);
        dir->out_proj = Mat::identity(4);
    }
    const ImageFeatures img = random_image(1, 4, rng);
    const TextFeatures txt{"t", "img", img.regions};
    EXPECT_NEAR(score(img, txt, p).local, 1.0, 1e-12);
}

TEST(Score, CombinesWithU1) {
    Rng rng(9);
    for (double u1 : {0.0, 0.3, 0.8, 1.0}) {
        MatcherSettings s;
        s.u1 = u1;
        const PairScore sc = score(random_image(3, 8, rng), random_text(4, 8, rng), random_params(8, 2, 4, s));
        EXPECT_NEAR(sc.total, u1 * sc.local + (1 - u1) * sc.global, 1e-15);
    }
    // 0.8 * 0.5 + 0.2 * 1.0
    EXPECT_NEAR(0.8 * 0.5 + (1 - 0.8) * 1.0, 0.6, 1e-15);
}

TEST(Score, MatchesScalarOracle) {
    Rng rng(10);
    for (int t = 0; t < 30; ++t) {
        MatcherSettings s;
        s.positional_encoding = t % 2 == 0;
        s.tie_directions = t % 3 == 0;
        s.cross_fusion = t % 5 != 0;
        const ModelParams p = random_params(8, 2, 50 + t, s, rng.uniform());
        const ImageFeatures img = random_image(1 + rng.index(0, 4), 8, rng);
        const TextFeatures txt = random_text(1 + rng.index(0, 5), 8, rng);
        const PairScore got = score(img, txt, p);
        const oracle::Score want = oracle::score(img, txt.words, p);
        EXPECT_NEAR(got.local, want.local, 1e-10);
        EXPECT_NEAR(got.global, want.global, 1e-10);
        EXPECT_NEAR(got.total, want.total, 1e-10);
    }
}

TEST(Score, ComponentsBounded) {
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
        const PairScore s = score(random_image(3, 8, rng), random_text(1 + rng.index(0, 6), 8, rng), random_params(8, 2, t));
        EXPECT_GE(s.local, -1.0);
        EXPECT_LE(s.local, 1.0);
        EXPECT_GE(s.global, -1.0);
        EXPECT_LE(s.global, 1.0);
    }
}

TEST(Score, ZeroWordVectorIsDegenerate) {
    Rng rng(12);
    EXPECT_THROW(score(random_image(2, 8, rng), TextFeatures{"t", "img", Mat(3, 8)}, random_params(8, 2, 1, no_pe())),
                 DegenerateVector);
}

TEST(Score, RegionPermutationInvariant) {
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
        const ModelParams p = random_params(8, 2, t);
        const ImageFeatures img = random_image(5, 8, rng);
        const TextFeatures txt = random_text(4, 8, rng);
        ImageFeatures perm = img;
        perm.regions = permute_rows(img.regions, {4, 2, 0, 3, 1});
        EXPECT_NEAR(score(perm, txt, p).total, score(img, txt, p).total, 1e-10);
    }
}

TEST(Score, WordPermutationInvariantWithoutPositions) {
    Rng rng(14);
    for (int t = 0; t < 20; ++t) {
        const ModelParams p = random_params(8, 2, t, no_pe());
        const ImageFeatures img = random_image(3, 8, rng);
        const TextFeatures txt = random_text(5, 8, rng);
        TextFeatures perm = txt;
        perm.words = permute_rows(txt.words, {1, 4, 3, 0, 2});
        EXPECT_NEAR(score(img, perm, p).total, score(img, txt, p).total, 1e-10);
    }
}

TEST(Score, ShuffleChangesScoreWithPositions) {
    Rng rng(15);
    bool changed = false;
    for (std::uint64_t seed = 0; seed < 20 && !changed; ++seed) {
        const ModelParams p = random_params(8, 2, seed);
        const ImageFeatures img = random_image(3, 8, rng);
        TextFeatures txt = random_text(5, 8, rng);
        const double before = score(img, txt, p).total;
        txt.words = token_shuffle(txt.words, seed);
        changed = std::abs(score(img, txt, p).total - before) > 1e-3;
    }
    EXPECT_TRUE(changed);
}

TEST(ScoreMatrix, EqualsIndependentScores) {
    Rng rng(16);
    const ModelParams p = random_params(8, 2, 3);
    std::vector<ImageFeatures> imgs;
    std::vector<TextFeatures> txts;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_image(3, 8, rng));
    for (int j = 0; j < 4; ++j) txts.push_back(random_text(2 + j, 8, rng));
    const Mat s = score_matrix(imgs, txts, p);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s(i, j), score(imgs[i], txts[j], p).total);
    EXPECT_EQ(score_matrix(imgs, txts, p, 3), s);
    const Mat one = score_matrix(std::span(imgs).first(1), std::span(txts).first(1), p);
    EXPECT_EQ(one.rows(), 1u);
    EXPECT_EQ(one(0, 0), score(imgs[0], txts[0], p).total);
}

TEST(Backward, WithoutForwardIsStateError) {
    const ModelParams p = random_params(8, 2, 1);
    ModelParams g = zeros_like(p);
    ScoreTape tape(p);
    EXPECT_THROW(tape.backward(1.0, g), StateError);
}

TEST(Backward, MatchesFiniteDifferences) {
    Rng rng(17);
    for (int t = 0; t < 12; ++t) {
        MatcherSettings s;
        s.positional_encoding = t % 2 == 0;
        s.tie_directions = t % 3 == 1;
        s.cross_fusion = t % 4 != 3;
        s.learn_fusion_weight = true;
        s.u1 = rng.uniform();
        const ModelParams p = random_params(8, 2, 200 + t, s, rng.uniform());
        const ImageFeatures img = random_image(3, 8, rng);
        const Mat words = random_mat(4, 8, rng);
        EXPECT_LE(score_gradient_error(img, words, p), 1e-4) << "case " << t;
    }
}

TEST(Backward, U1OneLeavesGlobalProjectionsWithoutGradient) {
    Rng rng(18);
    MatcherSettings s;
    s.u1 = 1.0;
    s.learn_fusion_weight = true;
    const ModelParams p = random_params(8, 2, 5, s);
    ModelParams g = zeros_like(p);
    ScoreTape tape(p);
    tape.forward(random_image(3, 8, rng), random_mat(4, 8, rng));
    tape.backward(1.0, g);
    EXPECT_EQ(frobenius_norm(g.global.text_proj), 0.0);
    EXPECT_EQ(frobenius_norm(g.global.region_proj), 0.0);
    EXPECT_EQ(frobenius_norm(g.global.image_proj), 0.0);
    EXPECT_EQ(frobenius_norm(g.global.fusion_weight), 0.0);
    EXPECT_GT(frobenius_norm(g.i2t.out_proj), 0.0);
}

TEST(Backward, U1ZeroRemovesLocalPath) {
    // With u1 = 0 and lambda = 0 only W_g and X_g^T G remain, so the
    // text-to-image attention and X_v get no gradient.
    Rng rng(19);
    MatcherSettings s;
    s.u1 = 0.0;
    const ModelParams p = random_params(8, 2, 6, s, 0.0);
    ModelParams g = zeros_like(p);
    ScoreTape tape(p);
    tape.forward(random_image(3, 8, rng), random_mat(4, 8, rng));
    tape.backward(1.0, g);
    EXPECT_EQ(frobenius_norm(g.t2i.query_proj) + frobenius_norm(g.t2i.key_proj) + frobenius_norm(g.t2i.out_proj), 0.0);
    EXPECT_EQ(frobenius_norm(g.global.region_proj), 0.0);
    EXPECT_GT(frobenius_norm(g.i2t.query_proj), 0.0);
}

TEST(BatchScorer, AgreesWithTapesAndIsThreadDeterministic) {
    Rng rng(20);
    const ModelParams p = random_params(8, 2, 9);
    std::vector<ImageFeatures> imgs;
    std::vector<Mat> texts;
    for (int i = 0; i < 3; ++i) imgs.push_back(random_image(3, 8, rng));
    for (int j = 0; j < 3; ++j) texts.push_back(random_mat(2 + j, 8, rng));
    std::vector<const ImageFeatures*> ip;
    std::vector<const Mat*> tp;
    for (auto& i : imgs) ip.push_back(&i);
    for (auto& t : texts) tp.push_back(&t);
    const Mat d = random_mat(3, 3, rng);

    auto run = [&](unsigned threads) {
        BatchScorer scorer(p, ip, threads);
        const std::size_t b = scorer.add_block(tp);
        scorer.backward(b, d);
        return std::make_pair(scorer.scores(b), scorer.gradients());
    };
    const auto [scores, grads] = run(1);
    ModelParams expected = zeros_like(p);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            ScoreTape tape(p, CosineMode::Clamped);
            EXPECT_NEAR(tape.forward(imgs[i], texts[j]).total, scores(i, j), 1e-14);
            tape.backward(d(i, j), expected);
        }
    }
    std::vector<const Mat*> want;
    visit_params(expected, [&](std::string_view, const Mat& m) { want.push_back(&m); });
    std::size_t k = 0;
    visit_params(grads, [&](std::string_view, const Mat& m) { EXPECT_LT(max_abs_diff(m, *want[k++]), 1e-12); });

    const auto a = run(3);
    const auto b = run(3);
    std::vector<Mat> ga, gb;
    visit_params(a.second, [&](std::string_view, const Mat& m) { ga.push_back(m); });
    visit_params(b.second, [&](std::string_view, const Mat& m) { gb.push_back(m); });
    EXPECT_EQ(ga, gb);
    EXPECT_EQ(a.first, scores);
}

TEST(Params, InitValidatesHeads) {
    EXPECT_THROW(ModelParams::init(8, 3, 0.5, {}, 1), ConfigError);
    EXPECT_THROW(ModelParams::init(8, 2, 1.5, {}, 1), ConfigError);
    std::vector<std::string> names;
    const ModelParams p = random_params(8, 2, 1);
    visit_params(p, [&](std::string_view n, const Mat&) { names.emplace_back(n); });
    EXPECT_EQ(names.size(), 10u);
    EXPECT_EQ(names.front(), "i2t.query");
    EXPECT_EQ(names.back(), "global.lambda");
}
