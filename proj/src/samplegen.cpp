#include "ascl/samplegen.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ascl/error.h"
#include "ascl/rng.h"

namespace ascl {

namespace {

struct NamedNoise {
    NoiseKind kind;
    const char* name;
};

constexpr NamedNoise kNoiseNames[] = {
    {NoiseKind::Gaussian, "gaussian"},          {NoiseKind::Shuffle, "shuffle"},
    {NoiseKind::TokenCutoff, "token_cutoff"},   {NoiseKind::FeatureCutoff, "feature_cutoff"},
    {NoiseKind::Dropout, "dropout"},            {NoiseKind::Mixture, "mixture"},
};

// k distinct indices from [0, n), partial Fisher-Yates.
std::vector<std::size_t> pick_distinct(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[rng.index(i, n - 1)]);
    idx.resize(k);
    return idx;
}

} // namespace

const char* noise_kind_name(NoiseKind kind) {
    for (const auto& n : kNoiseNames)
        if (n.kind == kind) return n.name;
    return "?";
}

NoiseKind parse_noise_kind(const std::string& name) {
    for (const auto& n : kNoiseNames)
        if (name == n.name) return n.kind;
    throw ConfigError("unknown noise kind '" + name + "'");
}

void NoiseStrategy::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("noise.sigma must be > 0");
    if (!(drop_prob > 0.0 && drop_prob < 1.0)) throw ConfigError("noise.p must lie in (0, 1)");
    if (cut_count < 1) throw ConfigError("noise.cut_count must be >= 1");
    if (kind == NoiseKind::Mixture) {
        if (mixture.empty()) throw ConfigError("noise.mixture must not be empty");
        if (std::find(mixture.begin(), mixture.end(), NoiseKind::Mixture) != mixture.end()) {
            throw ConfigError("noise.mixture cannot contain 'mixture'");
        }
    }
}

const char* positive_kind_name(PositiveKind kind) {
    switch (kind) {
    case PositiveKind::Concat: return "concat";
    case PositiveKind::Truncate: return "truncate";
    case PositiveKind::Alternate: return "alternate";
    }
    return "?";
}

PositiveKind parse_positive_kind(const std::string& name) {
    if (name == "concat") return PositiveKind::Concat;
    if (name == "truncate") return PositiveKind::Truncate;
    if (name == "alternate") return PositiveKind::Alternate;
    throw ConfigError("unknown positive kind '" + name + "'");
}

void PositiveStrategy::validate() const {
    if (!(truncate_ratio > 0.0 && truncate_ratio < 1.0)) throw ConfigError("positive.truncate_ratio must lie in (0, 1)");
    if (max_words < 1) throw ConfigError("positive.max_words must be >= 1");
}

Mat gaussian_noise(const Mat& words, double sigma, std::uint64_t seed) {
    if (!(sigma > 0.0)) throw ConfigError("gaussian_noise: sigma must be > 0");
    Rng rng(seed);
    Mat out = words;
    for (double& v : out.values()) v += rng.normal(0.0, sigma);
    return out;
}

Mat token_shuffle(const Mat& words, std::uint64_t seed) {
    const std::size_t l = words.rows();
    if (l < 2) throw DegenerateInput("token_shuffle: need at least 2 word rows");
    Rng rng(seed);
    std::vector<std::size_t> perm(l);
    bool identity = true;
    while (identity) {
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = l; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(0, i - 1)]);
        for (std::size_t i = 0; i < l && identity; ++i) identity = perm[i] == i;
    }
    Mat out(l, words.cols());
    for (std::size_t i = 0; i < l; ++i) std::ranges::copy(words.row(perm[i]), out.row(i).begin());
    return out;
}

Mat token_cutoff(const Mat& words, std::size_t cut_count, std::uint64_t seed) {
    if (cut_count < 1 || cut_count >= words.rows()) {
        throw ConfigError("token_cutoff: cut_count " + std::to_string(cut_count) + " out of range for " +
                          std::to_string(words.rows()) + " rows");
    }
    Rng rng(seed);
    Mat out = words;
    for (std::size_t r : pick_distinct(words.rows(), cut_count, rng)) std::ranges::fill(out.row(r), 0.0);
    return out;
}

Mat feature_cutoff(const Mat& words, std::size_t cut_count, std::uint64_t seed) {
    if (cut_count < 1 || cut_count >= words.cols()) {
        throw ConfigError("feature_cutoff: cut_count " + std::to_string(cut_count) + " out of range for " +
                          std::to_string(words.cols()) + " columns");
    }
    Rng rng(seed);
    Mat out = words;
    for (std::size_t c : pick_distinct(words.cols(), cut_count, rng))
        for (std::size_t r = 0; r < out.rows(); ++r) out(r, c) = 0.0;
    return out;
}

Mat dropout_noise(const Mat& words, double p, std::uint64_t seed) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("dropout_noise: p must lie in (0, 1)");
    Rng rng(seed);
    Mat out = words;
    for (double& v : out.values())
        if (rng.bernoulli(p)) v = 0.0;
    return out;
}

std::size_t mixture_choice(std::size_t candidates, std::uint64_t seed) {
    if (candidates == 0) throw ConfigError("mixture: empty strategy list");
    Rng rng(derive_seed(seed, {0x313}));
    return rng.index(0, candidates - 1);
}

Mat mixture(const Mat& words, const std::vector<NoiseKind>& candidates, const NoiseStrategy& params,
            std::uint64_t seed) {
    const NoiseKind chosen = candidates[mixture_choice(candidates.size(), seed)];
    if (chosen == NoiseKind::Mixture) throw ConfigError("mixture: nested mixture");
    NoiseStrategy single = params;
    single.kind = chosen;
    return apply_noise(words, single, seed);
}

Mat apply_noise(const Mat& words, const NoiseStrategy& s, std::uint64_t seed) {
    switch (s.kind) {
    case NoiseKind::Gaussian: return gaussian_noise(words, s.sigma, seed);
    case NoiseKind::Shuffle: return token_shuffle(words, seed);
    case NoiseKind::TokenCutoff: return token_cutoff(words, s.cut_count, seed);
    case NoiseKind::FeatureCutoff: return feature_cutoff(words, s.cut_count, seed);
    case NoiseKind::Dropout: return dropout_noise(words, s.drop_prob, seed);
    case NoiseKind::Mixture: return mixture(words, s.mixture, s, seed);
    }
    throw ConfigError("apply_noise: unknown strategy");
}

TextFeatures concat_positive(const TextFeatures& a, const TextFeatures& b, std::size_t max_words) {
    if (a.parent_image != b.parent_image) {
        throw PairingError("concat_positive: '" + a.text_id + "' and '" + b.text_id + "' describe different images");
    }
    if (a.text_id == b.text_id) throw PairingError("concat_positive: caption '" + a.text_id + "' paired with itself");
    if (a.dim() != b.dim()) throw ShapeError("concat_positive: dimension mismatch");
    if (max_words < 1) throw ConfigError("concat_positive: max_words must be >= 1");
    const std::size_t rows = std::min(a.word_count() + b.word_count(), max_words);
    Mat words(rows, a.dim());
    for (std::size_t r = 0; r < rows; ++r) {
        const auto src = r < a.word_count() ? a.words.row(r) : b.words.row(r - a.word_count());
        std::ranges::copy(src, words.row(r).begin());
    }
    return {a.text_id + "+" + b.text_id, a.parent_image, std::move(words)};
}

TextFeatures truncate_positive(const TextFeatures& text, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("truncate_positive: ratio must lie in (0, 1]");
    const auto keep = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(text.word_count())));
    if (keep < 1) throw DegenerateInput("truncate_positive: '" + text.text_id + "' would lose every word");
    Mat words(keep, text.dim());
    for (std::size_t r = 0; r < keep; ++r) std::ranges::copy(text.words.row(r), words.row(r).begin());
    return {text.text_id + "[:" + std::to_string(keep) + "]", text.parent_image, std::move(words)};
}

} // namespace ascl
