#include "ascl/loss.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ascl/error.h"

namespace ascl {

namespace {

// -log softmax(logits)[0] and its gradient with respect to every logit.
double neg_log_first(const std::vector<double>& logits, std::vector<double>& grad) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    grad.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        grad[k] = std::exp(logits[k] - mx);
        sum += grad[k];
    }
    for (double& g : grad) g /= sum;
    grad[0] -= 1.0;
    return -(logits[0] - mx - std::log(sum));
}

} // namespace

Mat alpha_gate(const Mat& generated, std::span<const double> positive) {
    if (generated.rows() != positive.size()) throw ShapeError("alpha_gate: one positive score per row required");
    Mat alpha(generated.rows(), generated.cols(), 1.0);
    for (std::size_t i = 0; i < generated.rows(); ++i)
        for (std::size_t n = 0; n < generated.cols(); ++n)
            if (generated(i, n) > positive[i]) alpha(i, n) = 0.0;
    return alpha;
}

LossResult loss_asym1(const LossInputs& in) {
    if (!(in.temperature > 0.0)) throw ConfigError("loss: temperature must be > 0");
    const std::size_t n = in.scores.rows();
    if (n == 0 || in.scores.cols() != n) throw ShapeError("loss: scores must be a non-empty square matrix");
    if (in.generated && in.generated->rows() != n) throw ShapeError("loss: generated scores need one row per pair");

    const double inv_t = 1.0 / in.temperature;
    LossResult r;
    r.d_scores = Mat(n, n);
    if (in.generated) {
        std::vector<double> pos(n);
        for (std::size_t i = 0; i < n; ++i) pos[i] = in.scores(i, i);
        r.alpha = alpha_gate(*in.generated, pos);
        r.d_generated = Mat(in.generated->rows(), in.generated->cols());
    }

    const double w = 1.0 / static_cast<double>(n);
    std::vector<double> logits;
    std::vector<double> grad;
    for (std::size_t i = 0; i < n; ++i) {
        // Text i against every in-batch image.
        logits.assign(1, in.scores(i, i) * inv_t);
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) logits.push_back(in.scores(k, i) * inv_t);
        r.value += w * neg_log_first(logits, grad);
        r.d_scores(i, i) += w * grad[0] * inv_t;
        for (std::size_t k = 0, slot = 1; k < n; ++k)
            if (k != i) r.d_scores(k, i) += w * grad[slot++] * inv_t;

        // Image i against every in-batch text and the surviving generated ones.
        logits.assign(1, in.scores(i, i) * inv_t);
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) logits.push_back(in.scores(i, k) * inv_t);
        std::vector<std::size_t> kept;
        if (in.generated) {
            for (std::size_t g = 0; g < in.generated->cols(); ++g) {
                if (r.alpha(i, g) != 0.0) {
                    logits.push_back((*in.generated)(i, g) * inv_t);
                    kept.push_back(g);
                }
            }
        }
        r.value += w * neg_log_first(logits, grad);
        r.d_scores(i, i) += w * grad[0] * inv_t;
        std::size_t slot = 1;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) r.d_scores(i, k) += w * grad[slot++] * inv_t;
        for (std::size_t g : kept) r.d_generated(i, g) += w * grad[slot++] * inv_t;
    }
    return r;
}

LossResult loss_asym23(const LossInputs& inputs) { return loss_asym1(inputs); }

double loss_total(double asym1, double asym23) { return 0.5 * asym1 + 0.5 * asym23; }

LossResult triplet_loss(const Mat& scores, double margin) {
    if (!(margin > 0.0)) throw ConfigError("triplet_loss: margin must be > 0");
    const std::size_t n = scores.rows();
    if (n == 0 || scores.cols() != n) throw ShapeError("triplet_loss: scores must be a non-empty square matrix");
    LossResult r;
    r.d_scores = Mat(n, n);
    if (n == 1) return r;
    const double w = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        // Hardest text for image i; first index wins ties.
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && scores(i, j) > scores(i, best)) best = j;
        const double row_violation = scores(i, best) - scores(i, i) + margin;
        if (row_violation > 0.0) {
            r.value += w * row_violation;
            r.d_scores(i, best) += w;
            r.d_scores(i, i) -= w;
        }
        // Hardest image for text i.
        best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && scores(j, i) > scores(best, i)) best = j;
        const double col_violation = scores(best, i) - scores(i, i) + margin;
        if (col_violation > 0.0) {
            r.value += w * col_violation;
            r.d_scores(best, i) += w;
            r.d_scores(i, i) -= w;
        }
    }
    return r;
}

} // namespace ascl
