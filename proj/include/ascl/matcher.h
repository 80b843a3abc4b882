#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ascl/datastore.h"
#include "ascl/numerics.h"

namespace ascl {

// Multi-head cross attention: Y* = Concat(head_1..head_H) Z^O with
// head_h = Att(X Zq_h, Y Zk_h, Y Zk_h). The per-head D x D/H projections are
// stored side by side as the column blocks of one D x D matrix.
struct CrossAttentionParams {
    Mat query_proj;  // D x D
    Mat key_proj;    // D x D, shared by keys and values
    Mat out_proj;    // D x D
    std::size_t heads = 1;

    std::size_t dim() const noexcept { return query_proj.rows(); }
    std::size_t head_dim() const noexcept { return dim() / heads; }
};

struct GlobalProjectionParams {
    Mat text_proj;      // X_w
    Mat region_proj;    // X_v
    Mat image_proj;     // X_g
    Mat fusion_weight;  // 1 x 1, lambda in [0, 1]

    double lambda() const { return fusion_weight(0, 0); }
};

struct MatcherSettings {
    double u1 = 0.8;
    bool positional_encoding = true;
    double pe_scale = 0.1;
    bool tie_directions = false;
    // false replaces both cross-attention passes with plain mean pooling.
    bool cross_fusion = true;
    bool learn_fusion_weight = false;
};

struct ModelParams {
    CrossAttentionParams i2t;
    CrossAttentionParams t2i;
    GlobalProjectionParams global;
    MatcherSettings settings;

    std::size_t dim() const noexcept { return i2t.dim(); }

    // Gaussian init with std init_scale / sqrt(D) for every matrix.
    static ModelParams init(std::size_t dim, std::size_t heads, double lambda, const MatcherSettings& settings,
                            std::uint64_t seed, double init_scale = 1.0);

    void validate() const;
};

// Same structure as `like`, every matrix zeroed.
ModelParams zeros_like(const ModelParams& like);
// dst += src, matrix by matrix.
void accumulate(ModelParams& dst, const ModelParams& src);

// Visits every learnable matrix with a stable name ("i2t.query", ...).
void visit_params(ModelParams& params, const std::function<void(std::string_view, Mat&)>& fn);
void visit_params(const ModelParams& params, const std::function<void(std::string_view, const Mat&)>& fn);

// Sinusoidal position table (rows x dim) times `scale`.
Mat positional_encoding(std::size_t rows, std::size_t dim, double scale);

Mat cross_attend(const Mat& x, const Mat& y, const CrossAttentionParams& params);

struct PairScore {
    double local = 0.0;
    double global = 0.0;
    double total = 0.0;
};

struct FusedPair {
    Mat attended_text;    // W*, K x D
    Mat attended_image;   // V*, L x D
    std::vector<double> image_global;  // V_g
    std::vector<double> text_global;   // W_g
};

FusedPair fuse(const ImageFeatures& image, const TextFeatures& text, const ModelParams& params);
PairScore score(const ImageFeatures& image, const TextFeatures& text, const ModelParams& params);
// (i, j) = score(images[i], texts[j]).total
Mat score_matrix(std::span<const ImageFeatures> images, std::span<const TextFeatures> texts, const ModelParams& params,
                 unsigned threads = 1);

// Per-entity projections shared by every pair the entity takes part in.
struct PreparedImage {
    Mat regions;                    // V
    Mat i2t_query;                  // V Zq (i2t)
    Mat t2i_key;                    // V Zk (t2i)
    std::vector<double> global_proj;  // X_g^T G
    std::vector<double> global;       // G
    std::vector<double> region_mean;
};

struct PreparedText {
    Mat words;                      // W as given
    Mat input;                      // W plus positional encoding
    Mat i2t_key;                    // input Zk (i2t)
    Mat t2i_query;                  // input Zq (t2i)
    std::vector<double> word_mean;
};

PreparedImage prepare_image(const ImageFeatures& image, const ModelParams& params);
PreparedText prepare_text(const Mat& words, const ModelParams& params);

struct DirectionCache {
    std::vector<Mat> weights;  // per head, queries x keys
    Mat context;               // concatenated head outputs
    Mat output;                // context Z^O
};

struct PairCache {
    DirectionCache i2t;
    DirectionCache t2i;
    std::vector<double> text_mean;      // mean of W*
    std::vector<double> image_mean;     // mean of V*
    std::vector<double> image_global1;  // X_v^T mean(V*)
    std::vector<double> image_global;   // V_g
    std::vector<double> text_global;    // W_g
    PairScore score;
};

enum class CosineMode {
    Strict,   // zero norm raises DegenerateVector
    Clamped,  // norms floored at 1e-12 (training)
};

PairScore forward_pair(const PreparedImage& image, const PreparedText& text, const ModelParams& params,
                       CosineMode mode, PairCache* cache);

// Gradient sink for pair backward passes: model-level accumulators plus
// per-entity buffers for the projected queries/keys, folded into the
// projection gradients by finish().
struct GradAccumulator {
    ModelParams grads;
    std::vector<Mat> image_i2t_query;
    std::vector<Mat> image_t2i_key;
    std::vector<Mat> text_i2t_key;
    std::vector<Mat> text_t2i_query;

    GradAccumulator(const ModelParams& params, std::span<const PreparedImage> images,
                    std::span<const PreparedText> texts);

    void merge(const GradAccumulator& other);
    // Folds entity buffers into grads (honouring tied directions).
    void finish(const ModelParams& params, std::span<const PreparedImage> images, std::span<const PreparedText> texts);
};

void backward_pair(const PreparedImage& image, std::size_t image_slot, const PreparedText& text,
                   std::size_t text_slot, const ModelParams& params, const PairCache& cache, double d_score,
                   GradAccumulator& acc);

// Single-pair forward/backward with a retained cache.
class ScoreTape {
public:
    ScoreTape(const ModelParams& params, CosineMode mode = CosineMode::Strict);

    PairScore forward(const ImageFeatures& image, const Mat& words);
    // Adds d(total)/d(params) * d_score into grads. Throws StateError without
    // a preceding forward().
    void backward(double d_score, ModelParams& grads);

private:
    const ModelParams* params_;
    CosineMode mode_;
    std::vector<PreparedImage> image_;
    std::vector<PreparedText> text_;
    std::unique_ptr<PairCache> cache_;
};

// Batched scoring for training: one set of prepared images against blocks of
// prepared texts, with caches kept for backward.
class BatchScorer {
public:
    BatchScorer(const ModelParams& params, std::span<const ImageFeatures* const> images, unsigned threads = 1);

    // Registers a block of texts; returns its id. Forward is computed eagerly:
    // scores(block)(i, j) = S(image i, text j).
    std::size_t add_block(std::span<const Mat* const> texts);
    const Mat& scores(std::size_t block) const { return blocks_.at(block).scores; }

    // d_scores has the block's shape. Accumulated; call gradients() at the end.
    void backward(std::size_t block, const Mat& d_scores);
    ModelParams gradients();

    std::size_t image_count() const noexcept { return images_.size(); }

private:
    struct Block {
        std::size_t first_text;
        std::size_t count;
        Mat scores;
        std::vector<PairCache> caches;
    };

    const ModelParams* params_;
    unsigned threads_;
    std::vector<PreparedImage> images_;
    std::vector<PreparedText> texts_;
    std::vector<Block> blocks_;
    std::vector<GradAccumulator> partial_;
};

// Runs fn(begin, end, worker) over [0, n) split into `threads` contiguous
// chunks; worker index == chunk index.
void parallel_chunks(std::size_t n, unsigned threads, const std::function<void(std::size_t, std::size_t, unsigned)>& fn);

} // namespace ascl
