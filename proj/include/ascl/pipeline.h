#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ascl/datastore.h"
#include "ascl/loss.h"
#include "ascl/matcher.h"
#include "ascl/samplegen.h"

namespace ascl {

enum class LrSchedule { Decay09Per10, Decay01Per10 };
enum class Ablation { Full, NoPos, NoNeg, NoPN, NoMF, Triplet };

const char* lr_schedule_name(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& name);
const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
    std::size_t dim = 64;
    std::size_t regions = 8;   // expected K; 0 accepts any
    std::size_t heads = 4;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    double lr = 1e-3;
    LrSchedule lr_schedule = LrSchedule::Decay09Per10;
    double temperature = 0.05;
    double u1 = 0.8;
    double lambda = 0.5;
    bool learn_lambda = false;
    bool positional_encoding = true;
    double pe_scale = 0.1;
    bool tie_directions = false;
    double init_scale = 1.0;
    double margin = 0.2;
    NoiseStrategy noise;
    PositiveStrategy positive;
    Ablation ablation = Ablation::Full;
    std::uint64_t seed = 1;
    unsigned threads = 1;

    void validate() const;
    MatcherSettings matcher_settings() const;
};

double learning_rate(const TrainConfig& config, std::size_t epoch);

// Flat key=value form ("train.lr", "noise.kind", ...). Round-trips exactly.
std::map<std::string, std::string> to_key_values(const TrainConfig& config);
// Unknown keys raise ConfigError.
void apply_key_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string format_config(const TrainConfig& config);
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> log;
};

// Everything generated for one training batch: images, original captions,
// their generated positives, and the noised copies of both.
struct BatchMaterials {
    std::vector<const ImageFeatures*> images;
    std::vector<Mat> texts;
    std::vector<Mat> positives;
    std::vector<Mat> text_negatives;
    std::vector<Mat> positive_negatives;
};

BatchMaterials build_batch(const PairedDataset& dataset, const Batch& batch, const TrainConfig& config,
                           std::size_t epoch, std::size_t batch_index);

// Loss for one batch under config.ablation; fills grads when non-null.
double batch_loss(const ModelParams& params, const BatchMaterials& materials, const TrainConfig& config,
                  ModelParams* grads);

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const PairedDataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch = {});
ModelParams initial_params(const TrainConfig& config);

struct GradCheckResult {
    double loss = 0.0;
    std::vector<std::pair<std::string, double>> errors;  // max relative error per parameter matrix
    double worst = 0.0;
};

// Central finite differences of batch_loss against the analytic gradient at
// the initial parameters, on one synthetic batch of config.batch_size pairs
// with config.regions regions and `words` words per caption. The fusion
// weight is made learnable so every parameter is covered.
GradCheckResult gradient_check(TrainConfig config, std::size_t words, double step);

// Model file: "ASCM" | version u32 | config text (u32 length + bytes) |
// for each matrix in visit order: rows u32 | cols u32 | float64 LE values.
void save_model(const std::filesystem::path& path, const ModelParams& params, const TrainConfig& config);
std::pair<ModelParams, TrainConfig> load_model(const std::filesystem::path& path);

// Ranks gallery columns for each query row (descending score, ties broken by
// lower gallery index) and reports the fraction of queries with a gold item
// in the top k.
double recall_at_k(const Mat& scores, const std::vector<std::vector<std::size_t>>& gold, std::size_t k);

double alignment_metric(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs);

struct Uniformity {
    double mean = 0.0;
    double variance = 0.0;

    friend bool operator==(const Uniformity&, const Uniformity&) = default;
};

// Pairwise Euclidean distances over length-normalized vectors.
Uniformity uniformity_metric(const std::vector<std::vector<double>>& vectors);

struct LengthBucket {
    std::string label;
    std::size_t min_words = 0;
    std::size_t max_words = 0;  // inclusive
    std::size_t queries = 0;
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;

    friend bool operator==(const LengthBucket&, const LengthBucket&) = default;
};

std::vector<LengthBucket> default_length_buckets();

struct DirectionRecall {
    double r1 = 0.0;
    double r5 = 0.0;
    double r10 = 0.0;

    friend bool operator==(const DirectionRecall&, const DirectionRecall&) = default;
};

struct EvalReport {
    DirectionRecall i2t;
    DirectionRecall t2i;
    double rsum = 0.0;
    double alignment_it = 0.0;
    double alignment_tt = 0.0;
    Uniformity uniformity_image;
    Uniformity uniformity_text;
    std::vector<LengthBucket> buckets;
    std::size_t images = 0;
    std::size_t queries = 0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalOptions {
    Split split = Split::Test;
    bool length_buckets = true;
    std::vector<LengthBucket> buckets = default_length_buckets();
    bool normalize_alignment = false;
    unsigned threads = 1;
};

// T2I recall per caption-length bucket on a precomputed image x caption score
// matrix (columns follow `captions`).
std::vector<LengthBucket> length_bucket_eval(const Mat& scores, const PairedDataset& dataset,
                                             const std::vector<std::size_t>& images,
                                             const std::vector<std::size_t>& captions,
                                             std::vector<LengthBucket> buckets);

EvalReport evaluate(const ModelParams& params, const PairedDataset& dataset, const EvalOptions& options = {});

std::string report_json(const EvalReport& report, const TrainConfig* config = nullptr);

} // namespace ascl
