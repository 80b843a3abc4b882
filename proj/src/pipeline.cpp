#include "ascl/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "ascl/error.h"
#include "ascl/rng.h"

namespace ascl {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
    kStreamBatches = 1,
    kStreamPositive = 2,
    kStreamTextNoise = 3,
    kStreamPositiveNoise = 4,
};

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size() || v < 0) throw std::invalid_argument("bad count");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string join_noise_kinds(const std::vector<NoiseKind>& kinds) {
    std::string out;
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        if (i) out += ",";
        out += noise_kind_name(kinds[i]);
    }
    return out;
}

std::vector<NoiseKind> parse_noise_kinds(const std::string& value) {
    std::vector<NoiseKind> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_noise_kind(item));
    }
    return out;
}

// The configured noise, falling back to Gaussian where the drawn strategy
// cannot apply to this matrix (too few rows to shuffle or cut).
Mat training_noise(const Mat& words, const NoiseStrategy& strategy, std::uint64_t seed) {
    NoiseStrategy s = strategy;
    if (s.kind == NoiseKind::Mixture) s.kind = s.mixture[mixture_choice(s.mixture.size(), seed)];
    const bool fits = (s.kind != NoiseKind::Shuffle || words.rows() >= 2) &&
                      (s.kind != NoiseKind::TokenCutoff || s.cut_count < words.rows()) &&
                      (s.kind != NoiseKind::FeatureCutoff || s.cut_count < words.cols());
    if (!fits) s.kind = NoiseKind::Gaussian;
    return apply_noise(words, s, seed);
}

bool uses_generated_negatives(Ablation a) { return a == Ablation::Full || a == Ablation::NoPos || a == Ablation::NoMF; }
bool uses_generated_positives(Ablation a) { return a == Ablation::Full || a == Ablation::NoNeg || a == Ablation::NoMF; }

std::vector<const Mat*> pointers(const std::vector<Mat>& mats) {
    std::vector<const Mat*> out;
    for (const auto& m : mats) out.push_back(&m);
    return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::vector<double> normalized(std::vector<double> v) {
    const double n = norm(v);
    if (n > 0.0)
        for (double& x : v) x /= n;
    return v;
}

} // namespace

const char* lr_schedule_name(LrSchedule s) {
    return s == LrSchedule::Decay09Per10 ? "decay_0.9_per10" : "decay_0.1_per10";
}

LrSchedule parse_lr_schedule(const std::string& name) {
    if (name == "decay_0.9_per10") return LrSchedule::Decay09Per10;
    if (name == "decay_0.1_per10") return LrSchedule::Decay01Per10;
    throw ConfigError("unknown lr schedule '" + name + "'");
}

const char* ablation_name(Ablation a) {
    switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoPos: return "no_pos";
    case Ablation::NoNeg: return "no_neg";
    case Ablation::NoPN: return "no_pn";
    case Ablation::NoMF: return "no_mf";
    case Ablation::Triplet: return "triplet";
    }
    return "?";
}

Ablation parse_ablation(const std::string& name) {
    for (Ablation a : {Ablation::Full, Ablation::NoPos, Ablation::NoNeg, Ablation::NoPN, Ablation::NoMF,
                       Ablation::Triplet}) {
        if (name == ablation_name(a)) return a;
    }
    throw ConfigError("unknown ablation '" + name + "'");
}

void TrainConfig::validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("model.heads must divide model.dim");
    if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(temperature > 0.0)) throw ConfigError("train.tau must be > 0");
    if (!(u1 >= 0.0 && u1 <= 1.0)) throw ConfigError("model.u1 must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("model.lambda must lie in [0, 1]");
    if (!(pe_scale >= 0.0)) throw ConfigError("model.pe_scale must be >= 0");
    if (!(init_scale > 0.0)) throw ConfigError("model.init_scale must be > 0");
    if (!(margin > 0.0)) throw ConfigError("train.margin must be > 0");
    if (threads == 0) throw ConfigError("train.threads must be >= 1");
    noise.validate();
    positive.validate();
}

MatcherSettings TrainConfig::matcher_settings() const {
    MatcherSettings s;
    s.u1 = u1;
    s.positional_encoding = positional_encoding;
    s.pe_scale = pe_scale;
    s.tie_directions = tie_directions;
    s.cross_fusion = ablation != Ablation::NoMF;
    s.learn_fusion_weight = learn_lambda;
    return s;
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
    const double factor = config.lr_schedule == LrSchedule::Decay09Per10 ? 0.9 : 0.1;
    return config.lr * std::pow(factor, static_cast<double>(epoch / 10));
}

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
    return {
        {"model.dim", std::to_string(c.dim)},
        {"model.regions", std::to_string(c.regions)},
        {"model.heads", std::to_string(c.heads)},
        {"model.u1", format_double(c.u1)},
        {"model.lambda", format_double(c.lambda)},
        {"model.learn_lambda", c.learn_lambda ? "true" : "false"},
        {"model.positional_encoding", c.positional_encoding ? "true" : "false"},
        {"model.pe_scale", format_double(c.pe_scale)},
        {"model.tie_directions", c.tie_directions ? "true" : "false"},
        {"model.init_scale", format_double(c.init_scale)},
        {"train.batch_size", std::to_string(c.batch_size)},
        {"train.epochs", std::to_string(c.epochs)},
        {"train.lr", format_double(c.lr)},
        {"train.lr_schedule", lr_schedule_name(c.lr_schedule)},
        {"train.tau", format_double(c.temperature)},
        {"train.margin", format_double(c.margin)},
        {"train.ablation", ablation_name(c.ablation)},
        {"train.seed", std::to_string(c.seed)},
        {"train.threads", std::to_string(c.threads)},
        {"noise.kind", noise_kind_name(c.noise.kind)},
        {"noise.sigma", format_double(c.noise.sigma)},
        {"noise.p", format_double(c.noise.drop_prob)},
        {"noise.cut_count", std::to_string(c.noise.cut_count)},
        {"noise.mixture", join_noise_kinds(c.noise.mixture)},
        {"positive.kind", positive_kind_name(c.positive.kind)},
        {"positive.truncate_ratio", format_double(c.positive.truncate_ratio)},
        {"positive.max_words", std::to_string(c.positive.max_words)},
    };
}

void apply_key_value(TrainConfig& c, const std::string& key, const std::string& v) {
    if (key == "model.dim") c.dim = parse_count(key, v);
    else if (key == "model.regions") c.regions = parse_count(key, v);
    else if (key == "model.heads") c.heads = parse_count(key, v);
    else if (key == "model.u1") c.u1 = parse_double(key, v);
    else if (key == "model.lambda") c.lambda = parse_double(key, v);
    else if (key == "model.learn_lambda") c.learn_lambda = parse_bool(key, v);
    else if (key == "model.positional_encoding") c.positional_encoding = parse_bool(key, v);
    else if (key == "model.pe_scale") c.pe_scale = parse_double(key, v);
    else if (key == "model.tie_directions") c.tie_directions = parse_bool(key, v);
    else if (key == "model.init_scale") c.init_scale = parse_double(key, v);
    else if (key == "train.batch_size") c.batch_size = parse_count(key, v);
    else if (key == "train.epochs") c.epochs = parse_count(key, v);
    else if (key == "train.lr") c.lr = parse_double(key, v);
    else if (key == "train.lr_schedule") c.lr_schedule = parse_lr_schedule(v);
    else if (key == "train.tau") c.temperature = parse_double(key, v);
    else if (key == "train.margin") c.margin = parse_double(key, v);
    else if (key == "train.ablation") c.ablation = parse_ablation(v);
    else if (key == "train.seed") c.seed = parse_count(key, v);
    else if (key == "train.threads") c.threads = static_cast<unsigned>(parse_count(key, v));
    else if (key == "noise.kind") c.noise.kind = parse_noise_kind(v);
    else if (key == "noise.sigma") c.noise.sigma = parse_double(key, v);
    else if (key == "noise.p") c.noise.drop_prob = parse_double(key, v);
    else if (key == "noise.cut_count") c.noise.cut_count = parse_count(key, v);
    else if (key == "noise.mixture") c.noise.mixture = parse_noise_kinds(v);
    else if (key == "positive.kind") c.positive.kind = parse_positive_kind(v);
    else if (key == "positive.truncate_ratio") c.positive.truncate_ratio = parse_double(key, v);
    else if (key == "positive.max_words") c.positive.max_words = parse_count(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

std::string format_config(const TrainConfig& config) {
    std::string out;
    for (const auto& [k, v] : to_key_values(config)) out += k + "=" + v + "\n";
    return out;
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig c;
    std::stringstream ss(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        apply_key_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    c.validate();
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

ModelParams initial_params(const TrainConfig& config) {
    return ModelParams::init(config.dim, config.heads, config.lambda, config.matcher_settings(), config.seed,
                             config.init_scale);
}

BatchMaterials build_batch(const PairedDataset& dataset, const Batch& batch, const TrainConfig& config,
                           std::size_t epoch, std::size_t batch_index) {
    (void)batch_index;
    BatchMaterials m;
    const bool negatives = uses_generated_negatives(config.ablation);
    const bool positives = uses_generated_positives(config.ablation);
    for (std::size_t cap : batch.captions) {
        const std::size_t parent = dataset.parent_index(cap);
        const TextFeatures& text = dataset.captions()[cap];
        m.images.push_back(&dataset.images()[parent]);
        m.texts.push_back(text.words);
        if (negatives) {
            m.text_negatives.push_back(
                training_noise(text.words, config.noise, derive_seed(config.seed, {kStreamTextNoise, epoch, cap})));
        }
        if (!positives) continue;

        Rng rng(derive_seed(config.seed, {kStreamPositive, epoch, cap}));
        PositiveKind kind = config.positive.kind;
        if (kind == PositiveKind::Alternate) kind = rng.bernoulli(0.5) ? PositiveKind::Concat : PositiveKind::Truncate;
        std::vector<std::size_t> partners;
        for (std::size_t other : dataset.caption_group(parent)) {
            if (other != cap && dataset.caption_splits()[other] == dataset.caption_splits()[cap]) partners.push_back(other);
        }
        TextFeatures positive = (kind == PositiveKind::Concat && !partners.empty())
                                    ? concat_positive(text, dataset.captions()[partners[rng.index(0, partners.size() - 1)]],
                                                      config.positive.max_words)
                                    : truncate_positive(text, config.positive.truncate_ratio);
        if (negatives) {
            m.positive_negatives.push_back(training_noise(
                positive.words, config.noise, derive_seed(config.seed, {kStreamPositiveNoise, epoch, cap})));
        }
        m.positives.push_back(std::move(positive.words));
    }
    return m;
}

double batch_loss(const ModelParams& params, const BatchMaterials& m, const TrainConfig& config, ModelParams* grads) {
    BatchScorer scorer(params, m.images, config.threads);
    const std::size_t texts = scorer.add_block(pointers(m.texts));
    const double tau = config.temperature;

    double value = 0.0;
    auto run = [&](std::size_t block, std::optional<std::size_t> generated, double weight) {
        LossInputs in{scorer.scores(block), std::nullopt, tau};
        if (generated) in.generated = scorer.scores(*generated);
        LossResult r = loss_asym1(in);
        value += weight * r.value;
        if (!grads) return;
        scorer.backward(block, r.d_scores * weight);
        if (generated) scorer.backward(*generated, r.d_generated * weight);
    };

    switch (config.ablation) {
    case Ablation::Full:
    case Ablation::NoMF: {
        const std::size_t neg = scorer.add_block(pointers(m.text_negatives));
        const std::size_t pos = scorer.add_block(pointers(m.positives));
        const std::size_t pos_neg = scorer.add_block(pointers(m.positive_negatives));
        run(texts, neg, 0.5);
        run(pos, pos_neg, 0.5);
        break;
    }
    case Ablation::NoPos: {
        const std::size_t neg = scorer.add_block(pointers(m.text_negatives));
        run(texts, neg, 1.0);
        break;
    }
    case Ablation::NoNeg: {
        const std::size_t pos = scorer.add_block(pointers(m.positives));
        run(texts, std::nullopt, 0.5);
        run(pos, std::nullopt, 0.5);
        break;
    }
    case Ablation::NoPN: run(texts, std::nullopt, 1.0); break;
    case Ablation::Triplet: {
        const LossResult r = triplet_loss(scorer.scores(texts), config.margin);
        value = r.value;
        if (grads) scorer.backward(texts, r.d_scores);
        break;
    }
    }
    if (grads) *grads = scorer.gradients();
    return value;
}

GradCheckResult gradient_check(TrainConfig config, std::size_t words, double step) {
    config.learn_lambda = true;
    config.validate();
    if (config.regions == 0 || words == 0) throw ConfigError("gradient_check: regions and words must be >= 1");

    SynthConfig s;
    s.images = config.batch_size;
    s.captions_per_image = 2;
    s.holdout_per_image = 0;
    s.dim = config.dim;
    s.regions = config.regions;
    s.concept_pool = std::max<std::size_t>(2 * config.regions, 4);
    s.min_words = words;
    s.max_words = words;
    s.noise = 0.5;
    s.retrieval_eval = false;
    const PairedDataset ds = generate_synthetic(s, config.seed);
    Batch batch;
    for (std::size_t i = 0; i < config.batch_size; ++i) batch.captions.push_back(ds.caption_group(i)[0]);
    const BatchMaterials m = build_batch(ds, batch, config, 0, 0);

    ModelParams params = initial_params(config);
    ModelParams grads;
    GradCheckResult r;
    r.loss = batch_loss(params, m, config, &grads);
    std::vector<const Mat*> analytic;
    visit_params(grads, [&](std::string_view, Mat& g) { analytic.push_back(&g); });
    std::size_t i = 0;
    visit_params(params, [&](std::string_view name, Mat& p) {
        const Mat numeric = finite_diff_grad(
            [&](const Mat& v) {
                const Mat saved = p;
                p = v;
                const double l = batch_loss(params, m, config, nullptr);
                p = saved;
                return l;
            },
            p, step);
        const double err = max_relative_error(*analytic[i++], numeric);
        r.worst = std::max(r.worst, err);
        r.errors.emplace_back(std::string(name), err);
    });
    return r;
}

TrainResult train(const PairedDataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.dim() != config.dim) {
        throw ConfigError("dataset dimension " + std::to_string(dataset.dim()) + " does not match model.dim " +
                          std::to_string(config.dim));
    }
    if (config.regions != 0) {
        for (const auto& img : dataset.images()) {
            if (img.region_count() != config.regions) {
                throw ConfigError("image '" + img.image_id + "' has " + std::to_string(img.region_count()) +
                                  " regions, model.regions is " + std::to_string(config.regions));
            }
        }
    }
    if (dataset.captions_in(Split::Train).empty()) throw ConfigError("dataset has no training pairs");

    TrainResult result{initial_params(config), {}};
    ModelParams& params = result.params;
    std::vector<AdamState> states;
    visit_params(params, [&](std::string_view, Mat& p) { states.emplace_back(p); });
    long step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        AdamConfig adam;
        adam.lr = learning_rate(config, epoch);
        const auto batches = make_batches(dataset, Split::Train, config.batch_size,
                                          derive_seed(config.seed, {kStreamBatches, epoch}), true);
        double total = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const BatchMaterials materials = build_batch(dataset, batches[b], config, epoch, b);
            ModelParams grads;
            const double loss = batch_loss(params, materials, config, &grads);
            if (!std::isfinite(loss)) throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
            total += loss;
            ++step;
            std::vector<Mat*> grad_list;
            visit_params(grads, [&](std::string_view, Mat& g) { grad_list.push_back(&g); });
            std::size_t i = 0;
            visit_params(params, [&](std::string_view name, Mat& p) {
                adam_step(p, *grad_list[i], states[i], adam, step);
                p.check_finite(std::string(name).c_str());
                ++i;
            });
            double& lambda = params.global.fusion_weight(0, 0);
            lambda = std::clamp(lambda, 0.0, 1.0);
        }
        const EpochRecord rec{epoch, total / static_cast<double>(batches.size()), adam.lr};
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Model files

namespace {

constexpr char kModelMagic[4] = {'A', 'S', 'C', 'M'};
constexpr std::uint32_t kModelVersion = 1;

} // namespace

void save_model(const std::filesystem::path& path, const ModelParams& params, const TrainConfig& config) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    out.write(kModelMagic, 4);
    u32(kModelVersion);
    const std::string text = format_config(config);
    u32(static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    visit_params(params, [&](std::string_view, const Mat& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.values().data()), static_cast<std::streamsize>(m.size() * 8));
    });
    if (!out) throw ConfigError("write to '" + path.string() + "' failed");
}

std::pair<ModelParams, TrainConfig> load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open model '" + path.string() + "'");
    const std::vector<char> bytes(std::istreambuf_iterator<char>(in), {});
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (bytes.size() - pos < n) throw FormatError("model file truncated", pos);
    };
    auto u32 = [&] {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    };
    need(4);
    if (std::memcmp(bytes.data(), kModelMagic, 4) != 0) throw FormatError("bad model magic, expected 'ASCM'", 0);
    pos = 4;
    if (const auto v = u32(); v != kModelVersion) throw FormatError("unsupported model version " + std::to_string(v), 4);
    const std::uint32_t len = u32();
    need(len);
    const TrainConfig config = parse_config(std::string(bytes.data() + pos, len));
    pos += len;

    ModelParams params = initial_params(config);
    visit_params(params, [&](std::string_view name, Mat& m) {
        const std::uint32_t rows = u32();
        const std::uint32_t cols = u32();
        if (rows != m.rows() || cols != m.cols()) {
            throw FormatError("model matrix '" + std::string(name) + "' has unexpected shape", pos);
        }
        need(std::size_t{rows} * cols * 8);
        std::vector<double> values(std::size_t{rows} * cols);
        std::memcpy(values.data(), bytes.data() + pos, values.size() * 8);
        pos += values.size() * 8;
        try {
            m = Mat(rows, cols, std::move(values));
        } catch (const NumericError& e) {
            throw FormatError(std::string("model matrix '") + std::string(name) + "': " + e.what(), pos);
        }
    });
    if (pos != bytes.size()) throw FormatError("trailing bytes in model file", pos);
    params.validate();
    return {std::move(params), config};
}

// ---------------------------------------------------------------------------
// Evaluation

double recall_at_k(const Mat& scores, const std::vector<std::vector<std::size_t>>& gold, std::size_t k) {
    if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
    if (gold.size() != scores.rows()) throw ShapeError("recall_at_k: one gold set per query row required");
    if (scores.rows() == 0) throw ConfigError("recall_at_k: no queries");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < scores.rows(); ++q) {
        if (gold[q].empty()) throw ConfigError("recall_at_k: query " + std::to_string(q) + " has no gold item");
        const auto row = scores.row(q);
        std::size_t best_rank = row.size();
        for (std::size_t g : gold[q]) {
            if (g >= row.size()) throw ShapeError("recall_at_k: gold index out of range");
            std::size_t rank = 0;
            for (std::size_t j = 0; j < row.size(); ++j) {
                if (row[j] > row[g] || (row[j] == row[g] && j < g)) ++rank;
            }
            best_rank = std::min(best_rank, rank);
        }
        if (best_rank < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

double alignment_metric(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs) {
    if (pairs.empty()) return 0.0;
    double total = 0.0;
    for (const auto& [a, b] : pairs) {
        if (a.size() != b.size()) throw ShapeError("alignment_metric: vector length mismatch");
        total += euclidean(a, b);
    }
    return total / static_cast<double>(pairs.size());
}

Uniformity uniformity_metric(const std::vector<std::vector<double>>& vectors) {
    std::vector<std::vector<double>> unit;
    for (const auto& v : vectors) unit.push_back(normalized(v));
    std::vector<double> dists;
    for (std::size_t i = 0; i < unit.size(); ++i)
        for (std::size_t j = i + 1; j < unit.size(); ++j) dists.push_back(euclidean(unit[i], unit[j]));
    Uniformity u;
    if (dists.empty()) return u;
    for (double d : dists) u.mean += d;
    u.mean /= static_cast<double>(dists.size());
    for (double d : dists) u.variance += (d - u.mean) * (d - u.mean);
    u.variance /= static_cast<double>(dists.size());
    return u;
}

std::vector<LengthBucket> default_length_buckets() {
    return {{"<10", 1, 9}, {"10-20", 10, 20}, {">20", 21, static_cast<std::size_t>(-1)}};
}

std::vector<LengthBucket> length_bucket_eval(const Mat& scores, const PairedDataset& dataset,
                                             const std::vector<std::size_t>& images,
                                             const std::vector<std::size_t>& captions,
                                             std::vector<LengthBucket> buckets) {
    if (scores.rows() != images.size() || scores.cols() != captions.size()) {
        throw ShapeError("length_bucket_eval: score matrix does not match the gallery");
    }
    std::vector<std::size_t> position(dataset.images().size(), static_cast<std::size_t>(-1));
    for (std::size_t g = 0; g < images.size(); ++g) position[images[g]] = g;
    for (auto& bucket : buckets) {
        std::vector<std::size_t> cols;
        for (std::size_t c = 0; c < captions.size(); ++c) {
            const std::size_t len = dataset.captions()[captions[c]].word_count();
            if (len >= bucket.min_words && len <= bucket.max_words) cols.push_back(c);
        }
        bucket.queries = cols.size();
        if (cols.empty()) continue;
        Mat q(cols.size(), images.size());
        std::vector<std::vector<std::size_t>> gold;
        for (std::size_t r = 0; r < cols.size(); ++r) {
            for (std::size_t g = 0; g < images.size(); ++g) q(r, g) = scores(g, cols[r]);
            gold.push_back({position[dataset.parent_index(captions[cols[r]])]});
        }
        bucket.r1 = recall_at_k(q, gold, 1);
        bucket.r5 = recall_at_k(q, gold, 5);
        bucket.r10 = recall_at_k(q, gold, 10);
    }
    return buckets;
}

EvalReport evaluate(const ModelParams& params, const PairedDataset& dataset, const EvalOptions& options) {
    const auto images = dataset.images_in(options.split);
    const auto captions = dataset.captions_in(options.split);
    if (images.empty() || captions.empty()) {
        throw ConfigError(std::string("evaluation split '") + split_name(options.split) + "' is empty");
    }

    std::vector<ImageFeatures> gallery_images;
    for (std::size_t i : images) gallery_images.push_back(dataset.images()[i]);
    std::vector<TextFeatures> gallery_texts;
    for (std::size_t c : captions) gallery_texts.push_back(dataset.captions()[c]);
    const Mat scores = score_matrix(gallery_images, gallery_texts, params, options.threads);

    std::vector<std::size_t> position(dataset.images().size(), 0);
    for (std::size_t g = 0; g < images.size(); ++g) position[images[g]] = g;

    std::vector<std::vector<std::size_t>> i2t_gold(images.size());
    std::vector<std::vector<std::size_t>> t2i_gold;
    for (std::size_t c = 0; c < captions.size(); ++c) {
        const std::size_t g = position[dataset.parent_index(captions[c])];
        i2t_gold[g].push_back(c);
        t2i_gold.push_back({g});
    }
    const Mat t2i_scores = transpose(scores);

    EvalReport r;
    r.images = images.size();
    r.queries = captions.size();
    r.i2t = {recall_at_k(scores, i2t_gold, 1), recall_at_k(scores, i2t_gold, 5), recall_at_k(scores, i2t_gold, 10)};
    r.t2i = {recall_at_k(t2i_scores, t2i_gold, 1), recall_at_k(t2i_scores, t2i_gold, 5),
             recall_at_k(t2i_scores, t2i_gold, 10)};
    r.rsum = r.i2t.r1 + r.i2t.r5 + r.i2t.r10 + r.t2i.r1 + r.t2i.r5 + r.t2i.r10;

    // Global representations of every gold pair.
    std::vector<std::vector<double>> text_globals(captions.size());
    std::vector<std::vector<double>> image_globals(images.size());
    std::vector<std::pair<std::vector<double>, std::vector<double>>> it_pairs;
    std::vector<PreparedImage> prepared;
    for (const auto& img : gallery_images) prepared.push_back(prepare_image(img, params));
    for (std::size_t c = 0; c < captions.size(); ++c) {
        const std::size_t g = position[dataset.parent_index(captions[c])];
        PairCache cache;
        forward_pair(prepared[g], prepare_text(gallery_texts[c].words, params), params, CosineMode::Strict, &cache);
        auto vg = cache.image_global;
        auto wg = cache.text_global;
        if (options.normalize_alignment) {
            vg = normalized(vg);
            wg = normalized(wg);
        }
        it_pairs.emplace_back(vg, wg);
        text_globals[c] = cache.text_global;
        if (image_globals[g].empty()) image_globals[g] = cache.image_global;
    }
    std::vector<std::pair<std::vector<double>, std::vector<double>>> tt_pairs;
    for (std::size_t g = 0; g < images.size(); ++g) {
        const auto& group = i2t_gold[g];
        for (std::size_t a = 0; a < group.size(); ++a) {
            for (std::size_t b = a + 1; b < group.size(); ++b) {
                auto x = text_globals[group[a]];
                auto y = text_globals[group[b]];
                if (options.normalize_alignment) {
                    x = normalized(x);
                    y = normalized(y);
                }
                tt_pairs.emplace_back(std::move(x), std::move(y));
            }
        }
    }
    r.alignment_it = alignment_metric(it_pairs);
    r.alignment_tt = alignment_metric(tt_pairs);
    r.uniformity_image = uniformity_metric(image_globals);
    r.uniformity_text = uniformity_metric(text_globals);
    if (options.length_buckets) r.buckets = length_bucket_eval(scores, dataset, images, captions, options.buckets);
    return r;
}

std::string report_json(const EvalReport& r, const TrainConfig* config) {
    nlohmann::ordered_json j;
    j["images"] = r.images;
    j["queries"] = r.queries;
    j["i2t"] = {{"r1", r.i2t.r1}, {"r5", r.i2t.r5}, {"r10", r.i2t.r10}};
    j["t2i"] = {{"r1", r.t2i.r1}, {"r5", r.t2i.r5}, {"r10", r.t2i.r10}};
    j["rsum"] = r.rsum;
    j["alignment"] = {{"image_text", r.alignment_it}, {"text_text", r.alignment_tt}};
    j["uniformity"] = {
        {"image", {{"mean", r.uniformity_image.mean}, {"variance", r.uniformity_image.variance}}},
        {"text", {{"mean", r.uniformity_text.mean}, {"variance", r.uniformity_text.variance}}},
    };
    nlohmann::ordered_json buckets = nlohmann::ordered_json::array();
    for (const auto& b : r.buckets) {
        buckets.push_back({{"label", b.label},
                           {"min_words", b.min_words},
                           {"max_words", b.max_words == static_cast<std::size_t>(-1) ? nlohmann::ordered_json(nullptr)
                                                                                     : nlohmann::ordered_json(b.max_words)},
                           {"queries", b.queries},
                           {"r1", b.r1},
                           {"r5", b.r5},
                           {"r10", b.r10}});
    }
    j["length_buckets"] = buckets;
    if (config) {
        nlohmann::ordered_json cfg;
        for (const auto& [k, v] : to_key_values(*config)) cfg[k] = v;
        j["config"] = cfg;
    }
    return j.dump(2);
}

} // namespace ascl
