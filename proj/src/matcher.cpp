#include "ascl/matcher.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "ascl/error.h"
#include "ascl/rng.h"

namespace ascl {

namespace {

constexpr double kNormFloor = 1e-12;

Mat random_mat(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (double& v : m.values()) v = rng.normal(0.0, stddev);
    return m;
}

CrossAttentionParams random_cross(std::size_t dim, std::size_t heads, double stddev, Rng& rng) {
    CrossAttentionParams p;
    p.query_proj = random_mat(dim, dim, stddev, rng);
    p.key_proj = random_mat(dim, dim, stddev, rng);
    p.out_proj = random_mat(dim, dim, stddev, rng);
    p.heads = heads;
    return p;
}

const CrossAttentionParams& t2i_params(const ModelParams& p) {
    return p.settings.tie_directions ? p.i2t : p.t2i;
}

CrossAttentionParams& t2i_grads(ModelParams& g, const ModelParams& p) {
    return p.settings.tie_directions ? g.i2t : g.t2i;
}

// Cosine with its norms; `mode` decides how zero norms are handled.
struct CosineTerm {
    double value;
    double nx;
    double ny;
};

CosineTerm cosine_term(std::span<const double> x, std::span<const double> y, CosineMode mode) {
    double nx = norm(x);
    double ny = norm(y);
    if (mode == CosineMode::Strict) {
        if (nx == 0.0 || ny == 0.0) throw DegenerateVector("score: zero-norm vector in cosine");
    } else {
        nx = std::max(nx, kNormFloor);
        ny = std::max(ny, kNormFloor);
    }
    return {dot(x, y) / (nx * ny), nx, ny};
}

// out += scale * d cos(x, y) / dy
void add_cosine_grad_y(std::span<double> out, std::span<const double> x, std::span<const double> y,
                       const CosineTerm& c, double scale) {
    const double a = scale / (c.nx * c.ny);
    const double b = (norm(y) >= kNormFloor) ? scale * c.value / (c.ny * c.ny) : 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * x[i] - b * y[i];
}

// Query rows attend over key rows; keys double as values.
void attend_forward(const Mat& query, const Mat& keys, const CrossAttentionParams& p, DirectionCache& cache) {
    const std::size_t m = query.rows();
    const std::size_t n = keys.rows();
    const std::size_t d = p.dim();
    const std::size_t hd = p.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    cache.weights.assign(p.heads, Mat(m, n));
    cache.context = Mat(m, d);
    std::vector<double> logits(n);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t c0 = h * hd;
        Mat& w = cache.weights[h];
        for (std::size_t i = 0; i < m; ++i) {
            const double* q = query.row(i).data() + c0;
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                const double* k = keys.row(j).data() + c0;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) s += q[c] * k[c];
                logits[j] = s * scale;
                mx = std::max(mx, logits[j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                w(i, j) = std::exp(logits[j] - mx);
                sum += w(i, j);
            }
            double* ctx = cache.context.row(i).data() + c0;
            for (std::size_t j = 0; j < n; ++j) {
                w(i, j) /= sum;
                const double a = w(i, j);
                const double* k = keys.row(j).data() + c0;
                for (std::size_t c = 0; c < hd; ++c) ctx[c] += a * k[c];
            }
        }
    }
    cache.output = matmul(cache.context, p.out_proj);
}

// Given d(output), accumulates d(out_proj) and the gradients w.r.t. the
// projected queries and keys.
void attend_backward(const Mat& query, const Mat& keys, const CrossAttentionParams& p, const DirectionCache& cache,
                     const Mat& d_output, Mat& d_out_proj, Mat& d_query, Mat& d_keys) {
    const std::size_t m = query.rows();
    const std::size_t n = keys.rows();
    const std::size_t hd = p.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    add_matmul_tn(d_out_proj, cache.context, d_output);
    const Mat d_context = matmul_nt(d_output, p.out_proj);

    std::vector<double> d_w(n);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const std::size_t c0 = h * hd;
        const Mat& w = cache.weights[h];
        for (std::size_t i = 0; i < m; ++i) {
            const double* dctx = d_context.row(i).data() + c0;
            double inner = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double* k = keys.row(j).data() + c0;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) s += dctx[c] * k[c];
                d_w[j] = s;
                inner += w(i, j) * s;
            }
            const double* q = query.row(i).data() + c0;
            double* dq = d_query.row(i).data() + c0;
            for (std::size_t j = 0; j < n; ++j) {
                const double a = w(i, j);
                const double dl = a * (d_w[j] - inner) * scale;
                const double* k = keys.row(j).data() + c0;
                double* dk = d_keys.row(j).data() + c0;
                for (std::size_t c = 0; c < hd; ++c) {
                    dq[c] += dl * k[c];
                    dk[c] += dl * q[c] + a * dctx[c];
                }
            }
        }
    }
}

void add_outer(Mat& out, std::span<const double> u, std::span<const double> v) {
    for (std::size_t a = 0; a < u.size(); ++a) {
        const double ua = u[a];
        if (ua == 0.0) continue;
        double* row = out.row(a).data();
        for (std::size_t b = 0; b < v.size(); ++b) row[b] += ua * v[b];
    }
}

// y = A x for square A.
std::vector<double> matvec(const Mat& a, std::span<const double> x) {
    std::vector<double> y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
    return y;
}

} // namespace

void parallel_chunks(std::size_t n, unsigned threads, const std::function<void(std::size_t, std::size_t, unsigned)>& fn) {
    threads = std::max(1u, threads);
    if (threads == 1 || n < 2) {
        fn(0, n, 0);
        return;
    }
    const std::size_t per = (n + threads - 1) / threads;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t begin = std::min(n, t * per);
        const std::size_t end = std::min(n, begin + per);
        pool.emplace_back([&, begin, end, t] { fn(begin, end, t); });
    }
    for (auto& th : pool) th.join();
}

ModelParams ModelParams::init(std::size_t dim, std::size_t heads, double lambda, const MatcherSettings& settings,
                              std::uint64_t seed, double init_scale) {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
        throw ConfigError("heads (" + std::to_string(heads) + ") must divide dim (" + std::to_string(dim) + ")");
    }
    Rng rng(derive_seed(seed, {0x1417}));
    const double stddev = init_scale / std::sqrt(static_cast<double>(dim));
    ModelParams p;
    p.i2t = random_cross(dim, heads, stddev, rng);
    p.t2i = random_cross(dim, heads, stddev, rng);
    p.global.text_proj = random_mat(dim, dim, stddev, rng);
    p.global.region_proj = random_mat(dim, dim, stddev, rng);
    p.global.image_proj = random_mat(dim, dim, stddev, rng);
    p.global.fusion_weight = Mat(1, 1, lambda);
    p.settings = settings;
    p.validate();
    return p;
}

void ModelParams::validate() const {
    const std::size_t d = dim();
    auto square = [d](const Mat& m, const char* name) {
        if (m.rows() != d || m.cols() != d) throw ShapeError(std::string(name) + " must be D x D");
        m.check_finite(name);
    };
    for (const auto* c : {&i2t, &t2i}) {
        if (c->heads == 0 || d % c->heads != 0) throw ConfigError("heads must divide dim");
        square(c->query_proj, "query projection");
        square(c->key_proj, "key projection");
        square(c->out_proj, "output projection");
    }
    if (i2t.heads != t2i.heads) throw ConfigError("both attention directions need the same head count");
    square(global.text_proj, "text projection");
    square(global.region_proj, "region projection");
    square(global.image_proj, "image projection");
    if (global.fusion_weight.rows() != 1 || global.fusion_weight.cols() != 1) throw ShapeError("fusion weight is 1x1");
    const double lambda = global.lambda();
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("fusion weight lambda must lie in [0, 1]");
    if (!(settings.u1 >= 0.0 && settings.u1 <= 1.0)) throw ConfigError("u1 must lie in [0, 1]");
}

void accumulate(ModelParams& dst, const ModelParams& src) {
    std::vector<const Mat*> from;
    visit_params(src, [&](std::string_view, const Mat& m) { from.push_back(&m); });
    std::size_t i = 0;
    visit_params(dst, [&](std::string_view, Mat& m) { m += *from[i++]; });
}

ModelParams zeros_like(const ModelParams& like) {
    ModelParams z = like;
    visit_params(z, [](std::string_view, Mat& m) { m.set_zero(); });
    return z;
}

void visit_params(ModelParams& p, const std::function<void(std::string_view, Mat&)>& fn) {
    fn("i2t.query", p.i2t.query_proj);
    fn("i2t.key", p.i2t.key_proj);
    fn("i2t.out", p.i2t.out_proj);
    fn("t2i.query", p.t2i.query_proj);
    fn("t2i.key", p.t2i.key_proj);
    fn("t2i.out", p.t2i.out_proj);
    fn("global.text", p.global.text_proj);
    fn("global.region", p.global.region_proj);
    fn("global.image", p.global.image_proj);
    fn("global.lambda", p.global.fusion_weight);
}

void visit_params(const ModelParams& p, const std::function<void(std::string_view, const Mat&)>& fn) {
    visit_params(const_cast<ModelParams&>(p), [&](std::string_view name, Mat& m) { fn(name, m); });
}

Mat positional_encoding(std::size_t rows, std::size_t dim, double scale) {
    Mat pe(rows, dim);
    for (std::size_t pos = 0; pos < rows; ++pos) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) * freq;
            pe(pos, i) = scale * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

Mat cross_attend(const Mat& x, const Mat& y, const CrossAttentionParams& params) {
    const std::size_t d = params.dim();
    if (x.cols() != d || y.cols() != d) throw ShapeError("cross_attend: inputs must have D columns");
    if (params.heads == 0 || d % params.heads != 0) throw ConfigError("cross_attend: heads must divide D");
    if (y.rows() == 0) throw ShapeError("cross_attend: no key rows");
    DirectionCache cache;
    attend_forward(matmul(x, params.query_proj), matmul(y, params.key_proj), params, cache);
    return cache.output;
}

PreparedImage prepare_image(const ImageFeatures& image, const ModelParams& params) {
    const std::size_t d = params.dim();
    if (image.dim() != d || image.global.size() != d) {
        throw ShapeError("image '" + image.image_id + "' dimension does not match the model");
    }
    PreparedImage p;
    p.regions = image.regions;
    p.global = image.global;
    p.region_mean = column_mean(image.regions);
    p.global_proj = matvec_t(params.global.image_proj, image.global);
    if (params.settings.cross_fusion) {
        p.i2t_query = matmul(image.regions, params.i2t.query_proj);
        p.t2i_key = matmul(image.regions, t2i_params(params).key_proj);
    }
    return p;
}

PreparedText prepare_text(const Mat& words, const ModelParams& params) {
    if (words.cols() != params.dim()) throw ShapeError("text dimension does not match the model");
    if (words.rows() == 0) throw ShapeError("text has no words");
    PreparedText p;
    p.words = words;
    p.word_mean = column_mean(words);
    if (params.settings.cross_fusion) {
        p.input = words;
        if (params.settings.positional_encoding) {
            p.input += positional_encoding(words.rows(), words.cols(), params.settings.pe_scale);
        }
        p.i2t_key = matmul(p.input, params.i2t.key_proj);
        p.t2i_query = matmul(p.input, t2i_params(params).query_proj);
    }
    return p;
}

PairScore forward_pair(const PreparedImage& image, const PreparedText& text, const ModelParams& params,
                       CosineMode mode, PairCache* cache) {
    PairCache local;
    PairCache& c = cache ? *cache : local;
    const std::size_t k = image.regions.rows();
    const std::size_t l = text.words.rows();
    const std::size_t d = params.dim();

    if (params.settings.cross_fusion) {
        attend_forward(image.i2t_query, text.i2t_key, params.i2t, c.i2t);
        attend_forward(text.t2i_query, image.t2i_key, t2i_params(params), c.t2i);
        c.text_mean = column_mean(c.i2t.output);
        c.image_mean = column_mean(c.t2i.output);
    } else {
        c.i2t = {};
        c.t2i = {};
        c.text_mean = text.word_mean;
        c.image_mean = image.region_mean;
    }

    double local_score = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const auto attended = params.settings.cross_fusion ? c.i2t.output.row(i) : std::span<const double>(c.text_mean);
        local_score += cosine_term(image.regions.row(i), attended, mode).value / (2.0 * static_cast<double>(k));
    }
    for (std::size_t j = 0; j < l; ++j) {
        const auto attended = params.settings.cross_fusion ? c.t2i.output.row(j) : std::span<const double>(c.image_mean);
        local_score += cosine_term(text.words.row(j), attended, mode).value / (2.0 * static_cast<double>(l));
    }

    const double lambda = params.global.lambda();
    c.text_global = matvec_t(params.global.text_proj, c.text_mean);
    c.image_global1 = matvec_t(params.global.region_proj, c.image_mean);
    c.image_global.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        c.image_global[i] = lambda * c.image_global1[i] + (1.0 - lambda) * image.global_proj[i];
    }
    const double global_score = cosine_term(c.image_global, c.text_global, mode).value;
    const double u1 = params.settings.u1;
    c.score = {local_score, global_score, u1 * local_score + (1.0 - u1) * global_score};
    return c.score;
}

GradAccumulator::GradAccumulator(const ModelParams& params, std::span<const PreparedImage> images,
                                 std::span<const PreparedText> texts)
    : grads(zeros_like(params)) {
    if (!params.settings.cross_fusion) return;
    for (const auto& img : images) {
        image_i2t_query.emplace_back(img.i2t_query.rows(), img.i2t_query.cols());
        image_t2i_key.emplace_back(img.t2i_key.rows(), img.t2i_key.cols());
    }
    for (const auto& txt : texts) {
        text_i2t_key.emplace_back(txt.i2t_key.rows(), txt.i2t_key.cols());
        text_t2i_query.emplace_back(txt.t2i_query.rows(), txt.t2i_query.cols());
    }
}

void GradAccumulator::merge(const GradAccumulator& other) {
    accumulate(grads, other.grads);
    auto add_all = [](std::vector<Mat>& dst, const std::vector<Mat>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    add_all(image_i2t_query, other.image_i2t_query);
    add_all(image_t2i_key, other.image_t2i_key);
    add_all(text_i2t_key, other.text_i2t_key);
    add_all(text_t2i_query, other.text_t2i_query);
}

void GradAccumulator::finish(const ModelParams& params, std::span<const PreparedImage> images,
                             std::span<const PreparedText> texts) {
    if (!params.settings.cross_fusion) return;
    CrossAttentionParams& back = t2i_grads(grads, params);
    for (std::size_t i = 0; i < images.size(); ++i) {
        add_matmul_tn(grads.i2t.query_proj, images[i].regions, image_i2t_query[i]);
        add_matmul_tn(back.key_proj, images[i].regions, image_t2i_key[i]);
        image_i2t_query[i].set_zero();
        image_t2i_key[i].set_zero();
    }
    for (std::size_t t = 0; t < texts.size(); ++t) {
        add_matmul_tn(grads.i2t.key_proj, texts[t].input, text_i2t_key[t]);
        add_matmul_tn(back.query_proj, texts[t].input, text_t2i_query[t]);
        text_i2t_key[t].set_zero();
        text_t2i_query[t].set_zero();
    }
}

void backward_pair(const PreparedImage& image, std::size_t image_slot, const PreparedText& text,
                   std::size_t text_slot, const ModelParams& params, const PairCache& c, double d_score,
                   GradAccumulator& acc) {
    // Only the training path (clamped cosines) is differentiated; strict mode
    // differs only where it would have thrown.
    constexpr CosineMode mode = CosineMode::Clamped;
    const std::size_t k = image.regions.rows();
    const std::size_t l = text.words.rows();
    const std::size_t d = params.dim();
    const double u1 = params.settings.u1;
    const double d_local = u1 * d_score;
    const double d_global = (1.0 - u1) * d_score;
    ModelParams& g = acc.grads;

    // Global branch.
    std::vector<double> d_image_global(d, 0.0);
    std::vector<double> d_text_global(d, 0.0);
    if (d_global != 0.0) {
        const CosineTerm cg = cosine_term(c.image_global, c.text_global, mode);
        add_cosine_grad_y(d_text_global, c.image_global, c.text_global, cg, d_global);
        const CosineTerm cg_rev{cg.value, cg.ny, cg.nx};
        add_cosine_grad_y(d_image_global, c.text_global, c.image_global, cg_rev, d_global);
    }
    const double lambda = params.global.lambda();
    std::vector<double> d_global1(d);
    std::vector<double> d_global2(d);
    double d_lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        d_global1[i] = lambda * d_image_global[i];
        d_global2[i] = (1.0 - lambda) * d_image_global[i];
        d_lambda += d_image_global[i] * (c.image_global1[i] - image.global_proj[i]);
    }
    if (params.settings.learn_fusion_weight) g.global.fusion_weight(0, 0) += d_lambda;
    add_outer(g.global.text_proj, c.text_mean, d_text_global);
    add_outer(g.global.region_proj, c.image_mean, d_global1);
    add_outer(g.global.image_proj, image.global, d_global2);

    if (!params.settings.cross_fusion) return;

    const std::vector<double> d_text_mean = matvec(params.global.text_proj, d_text_global);
    const std::vector<double> d_image_mean = matvec(params.global.region_proj, d_global1);

    Mat d_attended_text(k, d);
    for (std::size_t i = 0; i < k; ++i) {
        auto row = d_attended_text.row(i);
        for (std::size_t j = 0; j < d; ++j) row[j] = d_text_mean[j] / static_cast<double>(k);
        if (d_local != 0.0) {
            const auto wi = c.i2t.output.row(i);
            const CosineTerm ct = cosine_term(image.regions.row(i), wi, mode);
            add_cosine_grad_y(row, image.regions.row(i), wi, ct, d_local / (2.0 * static_cast<double>(k)));
        }
    }
    Mat d_attended_image(l, d);
    for (std::size_t j = 0; j < l; ++j) {
        auto row = d_attended_image.row(j);
        for (std::size_t q = 0; q < d; ++q) row[q] = d_image_mean[q] / static_cast<double>(l);
        if (d_local != 0.0) {
            const auto vj = c.t2i.output.row(j);
            const CosineTerm ct = cosine_term(text.words.row(j), vj, mode);
            add_cosine_grad_y(row, text.words.row(j), vj, ct, d_local / (2.0 * static_cast<double>(l)));
        }
    }

    attend_backward(image.i2t_query, text.i2t_key, params.i2t, c.i2t, d_attended_text, g.i2t.out_proj,
                    acc.image_i2t_query[image_slot], acc.text_i2t_key[text_slot]);
    attend_backward(text.t2i_query, image.t2i_key, t2i_params(params), c.t2i, d_attended_image,
                    t2i_grads(g, params).out_proj, acc.text_t2i_query[text_slot], acc.image_t2i_key[image_slot]);
}

FusedPair fuse(const ImageFeatures& image, const TextFeatures& text, const ModelParams& params) {
    const PreparedImage img = prepare_image(image, params);
    const PreparedText txt = prepare_text(text.words, params);
    PairCache c;
    forward_pair(img, txt, params, CosineMode::Strict, &c);
    FusedPair out;
    if (params.settings.cross_fusion) {
        out.attended_text = c.i2t.output;
        out.attended_image = c.t2i.output;
    } else {
        out.attended_text = Mat(image.region_count(), params.dim());
        out.attended_image = Mat(text.word_count(), params.dim());
        for (std::size_t i = 0; i < out.attended_text.rows(); ++i)
            std::ranges::copy(c.text_mean, out.attended_text.row(i).begin());
        for (std::size_t j = 0; j < out.attended_image.rows(); ++j)
            std::ranges::copy(c.image_mean, out.attended_image.row(j).begin());
    }
    out.image_global = c.image_global;
    out.text_global = c.text_global;
    return out;
}

PairScore score(const ImageFeatures& image, const TextFeatures& text, const ModelParams& params) {
    return forward_pair(prepare_image(image, params), prepare_text(text.words, params), params, CosineMode::Strict,
                        nullptr);
}

Mat score_matrix(std::span<const ImageFeatures> images, std::span<const TextFeatures> texts, const ModelParams& params,
                 unsigned threads) {
    if (images.empty() || texts.empty()) throw ShapeError("score_matrix: empty gallery");
    std::vector<PreparedImage> pi;
    for (const auto& img : images) pi.push_back(prepare_image(img, params));
    std::vector<PreparedText> pt;
    for (const auto& txt : texts) pt.push_back(prepare_text(txt.words, params));
    Mat out(images.size(), texts.size());
    parallel_chunks(out.size(), threads, [&](std::size_t begin, std::size_t end, unsigned) {
        for (std::size_t e = begin; e < end; ++e) {
            const std::size_t i = e / texts.size();
            const std::size_t j = e % texts.size();
            out(i, j) = forward_pair(pi[i], pt[j], params, CosineMode::Strict, nullptr).total;
        }
    });
    return out;
}

ScoreTape::ScoreTape(const ModelParams& params, CosineMode mode) : params_(&params), mode_(mode) {}

PairScore ScoreTape::forward(const ImageFeatures& image, const Mat& words) {
    image_.assign(1, prepare_image(image, *params_));
    text_.assign(1, prepare_text(words, *params_));
    cache_ = std::make_unique<PairCache>();
    return forward_pair(image_[0], text_[0], *params_, mode_, cache_.get());
}

void ScoreTape::backward(double d_score, ModelParams& grads) {
    if (!cache_) throw StateError("ScoreTape::backward called without a retained forward cache");
    GradAccumulator acc(*params_, image_, text_);
    backward_pair(image_[0], 0, text_[0], 0, *params_, *cache_, d_score, acc);
    acc.finish(*params_, image_, text_);
    accumulate(grads, acc.grads);
}

BatchScorer::BatchScorer(const ModelParams& params, std::span<const ImageFeatures* const> images, unsigned threads)
    : params_(&params), threads_(std::max(1u, threads)) {
    for (const auto* img : images) images_.push_back(prepare_image(*img, params));
}

std::size_t BatchScorer::add_block(std::span<const Mat* const> texts) {
    if (!partial_.empty()) throw StateError("BatchScorer: blocks cannot be added after backward()");
    Block b{texts_.size(), texts.size(), Mat(images_.size(), texts.size()), {}};
    for (const Mat* w : texts) texts_.push_back(prepare_text(*w, *params_));
    b.caches.resize(images_.size() * texts.size());
    const std::size_t cols = texts.size();
    parallel_chunks(b.caches.size(), threads_, [&](std::size_t begin, std::size_t end, unsigned) {
        for (std::size_t e = begin; e < end; ++e) {
            const std::size_t i = e / cols;
            const std::size_t j = e % cols;
            b.scores(i, j) =
                forward_pair(images_[i], texts_[b.first_text + j], *params_, CosineMode::Clamped, &b.caches[e]).total;
        }
    });
    blocks_.push_back(std::move(b));
    return blocks_.size() - 1;
}

void BatchScorer::backward(std::size_t block, const Mat& d_scores) {
    const Block& b = blocks_.at(block);
    if (!d_scores.same_shape(b.scores)) throw ShapeError("BatchScorer::backward: gradient shape mismatch");
    if (partial_.empty()) {
        for (unsigned t = 0; t < threads_; ++t) partial_.emplace_back(*params_, images_, texts_);
    }
    parallel_chunks(b.caches.size(), threads_, [&](std::size_t begin, std::size_t end, unsigned worker) {
        for (std::size_t e = begin; e < end; ++e) {
            const std::size_t i = e / b.count;
            const std::size_t j = e % b.count;
            const double ds = d_scores(i, j);
            if (ds == 0.0) continue;
            backward_pair(images_[i], i, texts_[b.first_text + j], b.first_text + j, *params_, b.caches[e], ds,
                          partial_[worker]);
        }
    });
}

ModelParams BatchScorer::gradients() {
    if (partial_.empty()) return zeros_like(*params_);
    GradAccumulator& total = partial_.front();
    for (std::size_t t = 1; t < partial_.size(); ++t) total.merge(partial_[t]);
    total.finish(*params_, images_, texts_);
    ModelParams out = std::move(total.grads);
    partial_.clear();
    return out;
}

} // namespace ascl
