#pragma once

#include <optional>

#include "ascl/numerics.h"

namespace ascl {

// alpha(i, n) = 0 iff generated(i, n) > positive(i); ties keep the negative.
Mat alpha_gate(const Mat& generated, std::span<const double> positive);

// Score arrays for one asymmetry-sensitive InfoNCE term.
//   scores(i, j):    image i vs in-batch text j; the diagonal holds the positives
//   generated(i, n): image i vs generated negative n (optional, N x N)
struct LossInputs {
    Mat scores;
    std::optional<Mat> generated;
    double temperature = 0.05;
};

struct LossResult {
    double value = 0.0;
    Mat d_scores;
    Mat d_generated;  // empty when no generated negatives were given
    Mat alpha;        // empty when no generated negatives were given
};

// Mean over pairs i of
//   -log e^{p/t} / (e^{p/t} + sum_{n!=i} e^{S(n,i)/t})
//   -log e^{p/t} / (e^{p/t} + sum_{n!=i} e^{S(i,n)/t} + sum_n alpha(i,n) e^{G(i,n)/t})
// with p = S(i,i). The gate is treated as a constant in the gradient.
LossResult loss_asym1(const LossInputs& inputs);

// Same objective on (image, generated positive) scores with negatives made by
// noising the generated positives.
LossResult loss_asym23(const LossInputs& inputs);

double loss_total(double asym1, double asym23);

// Hardest-negative hinge in both directions, averaged over pairs:
//   mean_i [max_{j!=i} S(i,j) - S(i,i) + m]_+ + [max_{j!=i} S(j,i) - S(i,i) + m]_+
LossResult triplet_loss(const Mat& scores, double margin);

} // namespace ascl
