#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ascl/datastore.h"
#include "ascl/numerics.h"

namespace ascl {

// Negative generators for redundant-text asymmetry operate on word-embedding
// matrices; positives (concatenated / truncated captions) operate on whole
// TextFeatures. Every generator is a pure function of its inputs and seed.

enum class NoiseKind { Gaussian, Shuffle, TokenCutoff, FeatureCutoff, Dropout, Mixture };

const char* noise_kind_name(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseStrategy {
    NoiseKind kind = NoiseKind::Mixture;
    double sigma = 0.1;          // Gaussian
    double drop_prob = 0.1;      // Dropout
    std::size_t cut_count = 1;   // Token/FeatureCutoff
    // Candidates for Mixture; never contains Mixture itself.
    std::vector<NoiseKind> mixture = {NoiseKind::Gaussian, NoiseKind::Shuffle, NoiseKind::TokenCutoff,
                                      NoiseKind::FeatureCutoff, NoiseKind::Dropout};

    void validate() const;
};

enum class PositiveKind { Concat, Truncate, Alternate };

const char* positive_kind_name(PositiveKind kind);
PositiveKind parse_positive_kind(const std::string& name);

struct PositiveStrategy {
    PositiveKind kind = PositiveKind::Alternate;
    double truncate_ratio = 0.5;
    std::size_t max_words = 64;

    void validate() const;
};

Mat gaussian_noise(const Mat& words, double sigma, std::uint64_t seed);
// Uniform non-identity row permutation; needs at least 2 rows.
Mat token_shuffle(const Mat& words, std::uint64_t seed);
Mat token_cutoff(const Mat& words, std::size_t cut_count, std::uint64_t seed);
Mat feature_cutoff(const Mat& words, std::size_t cut_count, std::uint64_t seed);
// Elementwise zeroing with probability p; survivors are not rescaled.
Mat dropout_noise(const Mat& words, double p, std::uint64_t seed);
// Draws one strategy uniformly from `candidates`, then applies it.
Mat mixture(const Mat& words, const std::vector<NoiseKind>& candidates, const NoiseStrategy& params,
            std::uint64_t seed);
// Index into `candidates` that mixture() would pick for `seed`.
std::size_t mixture_choice(std::size_t candidates, std::uint64_t seed);

// Dispatches on strategy.kind.
Mat apply_noise(const Mat& words, const NoiseStrategy& strategy, std::uint64_t seed);

TextFeatures concat_positive(const TextFeatures& a, const TextFeatures& b, std::size_t max_words);
// Keeps the first ceil(ratio * L) word rows.
TextFeatures truncate_positive(const TextFeatures& text, double ratio);

} // namespace ascl
