#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ascl/error.h"
#include "ascl/numerics.h"
#include "test_util.h"

using namespace ascl;
using ascl::fixtures::random_mat;

TEST(Mat, RejectsNonFiniteData) {
    EXPECT_THROW(Mat(1, 2, std::vector<double>{1.0, std::nan("")}), NumericError);
    EXPECT_THROW(Mat(1, 1, std::vector<double>{std::numeric_limits<double>::infinity()}), NumericError);
    EXPECT_THROW(Mat(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
}

TEST(Matmul, ShapeMismatchThrows) {
    EXPECT_THROW(matmul(Mat(2, 3), Mat(2, 3)), ShapeError);
    EXPECT_THROW(matmul_tn(Mat(2, 3), Mat(3, 3)), ShapeError);
    EXPECT_THROW(matmul_nt(Mat(2, 3), Mat(2, 4)), ShapeError);
}

TEST(Matmul, VariantsAgree) {
    Rng rng(3);
    const Mat a = random_mat(4, 3, rng);
    const Mat b = random_mat(4, 5, rng);
    const Mat c = random_mat(6, 3, rng);
    EXPECT_LT(max_abs_diff(matmul_tn(a, b), matmul(transpose(a), b)), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(a, c), matmul(a, transpose(c))), 1e-12);
    Mat acc(3, 5, 1.0);
    add_matmul_tn(acc, a, b);
    EXPECT_LT(max_abs_diff(acc, matmul_tn(a, b) + Mat(3, 5, 1.0)), 1e-12);
}

TEST(Cosine, Examples) {
    const std::vector<double> e1{1, 0}, e2{0, 1}, d{1, 1};
    EXPECT_DOUBLE_EQ(cosine(e1, e1), 1.0);
    EXPECT_DOUBLE_EQ(cosine(e1, e2), 0.0);
    EXPECT_NEAR(cosine(d, e1), 0.7071067811865475, 1e-15);
}

TEST(Cosine, ZeroNormThrows) {
    const std::vector<double> z{0, 0}, x{1, 2};
    EXPECT_THROW(cosine(z, x), DegenerateVector);
    EXPECT_THROW(cosine(x, z), DegenerateVector);
}

TEST(Cosine, BoundedAndScaleInvariant) {
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x(7), y(7);
        for (auto& v : x) v = rng.normal();
        for (auto& v : y) v = rng.normal();
        const double c = cosine(x, y);
        EXPECT_GE(c, -1.0);
        EXPECT_LE(c, 1.0);
        const double a = 0.01 + 10.0 * rng.uniform(), b = 0.01 + 10.0 * rng.uniform();
        auto xs = x, ys = y;
        for (auto& v : xs) v *= a;
        for (auto& v : ys) v *= b;
        EXPECT_NEAR(cosine(xs, ys), c, 1e-12);
    }
    const std::vector<double> x{1e-3, 2e-3, -1.0};
    EXPECT_LE(cosine(x, x), 1.0);
}

TEST(Softmax, Examples) {
    const Mat s = softmax_rows(Mat{{0, 0, 0}}, 1.0);
    for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    for (double c : {-50.0, 0.0, 3.0, 700.0}) {
        const Mat r = softmax_rows(Mat{{c, c + std::log(2.0)}}, 1.0);
        EXPECT_NEAR(r(0, 0), 1.0 / 3.0, 1e-12);
        EXPECT_NEAR(r(0, 1), 2.0 / 3.0, 1e-12);
    }
    const Mat t = softmax_rows(Mat{{1, 2}}, 0.5);
    EXPECT_NEAR(t(0, 0), 0.11920292, 1e-8);
    EXPECT_NEAR(t(0, 1), 0.88079708, 1e-8);
}

TEST(Softmax, NonPositiveTemperatureThrows) {
    EXPECT_THROW(softmax_rows(Mat{{1, 2}}, 0.0), ConfigError);
    EXPECT_THROW(softmax_rows(Mat{{1, 2}}, -1.0), ConfigError);
}

TEST(Softmax, RowsSumToOneShiftInvariantMonotone) {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const Mat logits = random_mat(4, 6, rng, 5.0);
        const double tau = 0.05 + rng.uniform();
        const Mat s = softmax_rows(logits, tau);
        Mat shifted = logits;
        for (std::size_t r = 0; r < 4; ++r) {
            const double c = rng.normal(0.0, 100.0);
            for (double& v : shifted.row(r)) v += c;
        }
        EXPECT_LT(max_abs_diff(softmax_rows(shifted, tau), s), 1e-12);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                sum += s(r, c);
                for (std::size_t c2 = 0; c2 < 6; ++c2)
                    if (logits(r, c) < logits(r, c2)) EXPECT_LE(s(r, c), s(r, c2));
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Attention, SingleKeyCopiesValue) {
    Rng rng(1);
    const Mat q = random_mat(5, 4, rng);
    const Mat k = random_mat(1, 4, rng);
    const Mat v = random_mat(1, 3, rng);
    const Mat out = sdp_attention(q, k, v);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out(i, c), v(0, c));
}

TEST(Attention, ZeroQueryAveragesValues) {
    Rng rng(2);
    const Mat k = random_mat(4, 3, rng);
    const Mat v = random_mat(4, 2, rng);
    const Mat out = sdp_attention(Mat(3, 3), k, v);
    const auto mean = column_mean(v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out(i, c), mean[c], 1e-14);
}

TEST(Attention, MatchesBruteForce) {
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        const Mat q = random_mat(2, 3, rng), k = random_mat(2, 3, rng), v = random_mat(2, 3, rng);
        const Mat out = sdp_attention(q, k, v);
        for (std::size_t i = 0; i < 2; ++i) {
            double w[2], z = 0.0;
            for (std::size_t j = 0; j < 2; ++j) {
                double s = 0.0;
                for (std::size_t a = 0; a < 3; ++a) s += q(i, a) * k(j, a);
                w[j] = std::exp(s / std::sqrt(3.0));
                z += w[j];
            }
            for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out(i, c), (w[0] * v(0, c) + w[1] * v(1, c)) / z, 1e-12);
        }
    }
}

TEST(Attention, ShapeErrors) {
    EXPECT_THROW(sdp_attention(Mat(2, 3), Mat(2, 4), Mat(2, 3)), ShapeError);
    EXPECT_THROW(sdp_attention(Mat(2, 3), Mat(2, 3), Mat(3, 3)), ShapeError);
}

TEST(Attention, PermutationProperties) {
    Rng rng(9);
    const Mat q = random_mat(3, 4, rng), k = random_mat(5, 4, rng), v = random_mat(5, 2, rng);
    const Mat out = sdp_attention(q, k, v);
    const std::vector<std::size_t> perm_kv{3, 0, 4, 1, 2}, perm_q{2, 0, 1};
    Mat kp(5, 4), vp(5, 2), qp(3, 4);
    for (std::size_t i = 0; i < 5; ++i) {
        std::ranges::copy(k.row(perm_kv[i]), kp.row(i).begin());
        std::ranges::copy(v.row(perm_kv[i]), vp.row(i).begin());
    }
    for (std::size_t i = 0; i < 3; ++i) std::ranges::copy(q.row(perm_q[i]), qp.row(i).begin());
    EXPECT_LT(max_abs_diff(sdp_attention(q, kp, vp), out), 1e-12);
    const Mat outq = sdp_attention(qp, k, v);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(outq(i, c), out(perm_q[i], c), 1e-12);
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
    Rng rng(13);
    for (int t = 0; t < 10; ++t) {
        const std::size_t nq = 1 + rng.index(0, 7), nk = 1 + rng.index(0, 7), d = 1 + rng.index(0, 7),
                          dv = 1 + rng.index(0, 7);
        const Mat q = random_mat(nq, d, rng), k = random_mat(nk, d, rng), v = random_mat(nk, dv, rng);
        const Mat up = random_mat(nq, dv, rng);
        auto loss = [&](const Mat& qq, const Mat& kk, const Mat& vv) {
            const Mat o = sdp_attention(qq, kk, vv);
            double s = 0.0;
            for (std::size_t i = 0; i < o.size(); ++i) s += o.values()[i] * up.values()[i];
            return s;
        };
        const AttentionGrads g = sdp_attention_backward(q, k, v, up);
        EXPECT_LE(max_relative_error(g.dq, finite_diff_grad([&](const Mat& x) { return loss(x, k, v); }, q, 1e-4)), 1e-4);
        EXPECT_LE(max_relative_error(g.dk, finite_diff_grad([&](const Mat& x) { return loss(q, x, v); }, k, 1e-4)), 1e-4);
        EXPECT_LE(max_relative_error(g.dv, finite_diff_grad([&](const Mat& x) { return loss(q, k, x); }, v, 1e-4)), 1e-4);
    }
}

TEST(Adam, ZeroGradientLeavesParamUnchanged) {
    Mat p{{1.5, -2.0}};
    const Mat before = p;
    AdamState s(p);
    for (long t = 1; t <= 5; ++t) adam_step(p, Mat(1, 2), s, {}, t);
    EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Mat p{{3.0}};
    AdamState s(p);
    AdamConfig c;
    c.lr = 0.1;
    adam_step(p, Mat{{1.0}}, s, c, 1);
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    EXPECT_NEAR(p(0, 0), 3.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, IdenticalInputsGiveIdenticalTrajectories) {
    Mat a{{0.5, 0.1}}, b{{0.5, 0.1}};
    AdamState sa(a), sb(b);
    for (long t = 1; t <= 20; ++t) {
        const Mat g{{std::sin(double(t)), std::cos(double(t))}};
        adam_step(a, g, sa, {}, t);
        adam_step(b, g, sb, {}, t);
    }
    EXPECT_EQ(a, b);
}

TEST(Adam, RejectsBadInputs) {
    Mat p(2, 2);
    AdamState s(p);
    EXPECT_THROW(adam_step(p, Mat(2, 3), s, {}, 1), ShapeError);
    EXPECT_THROW(adam_step(p, Mat(2, 2), s, {}, 0), ConfigError);
}

TEST(FiniteDiff, SquaredNorm) {
    const Mat x{{1.0, 2.0}};
    const Mat g = finite_diff_grad([](const Mat& m) { return dot(m.values(), m.values()); }, x, 1e-5);
    EXPECT_NEAR(g(0, 0), 2.0, 1e-6);
    EXPECT_NEAR(g(0, 1), 4.0, 1e-6);
}

TEST(FiniteDiff, ConstantHasZeroGradient) {
    const Mat g = finite_diff_grad([](const Mat&) { return 4.2; }, Mat(2, 3, 1.0), 1e-4);
    EXPECT_EQ(g, Mat(2, 3));
}

TEST(FiniteDiff, NonFiniteValueThrows) {
    EXPECT_THROW(finite_diff_grad([](const Mat& m) { return std::log(m(0, 0)); }, Mat{{0.0}}, 1e-4), NumericError);
}
