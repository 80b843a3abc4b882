#include "cli.h"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ascl/error.h"
#include "ascl/pipeline.h"
#include "ascl/rng.h"

namespace ascl::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

// Keys that belong to the run rather than to the model/training config.
struct RunPaths {
    std::string data;
    std::string model;
    std::string log;
};

struct RunConfig {
    TrainConfig train;
    RunPaths paths;
};

std::pair<std::string, std::string> split_assignment(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

void apply_run_key(RunConfig& rc, const std::string& key, const std::string& value) {
    if (key == "data.path") rc.paths.data = value;
    else if (key == "output.model") rc.paths.model = value;
    else if (key == "output.log") rc.paths.log = value;
    else apply_key_value(rc.train, key, value);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig rc;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config '" + path + "'");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto [k, v] = split_assignment(line);
                apply_run_key(rc, k, v);
            } catch (const ConfigError& e) {
                throw ConfigError(path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    for (const auto& o : overrides) {
        const auto [k, v] = split_assignment(o);
        apply_run_key(rc, k, v);
    }
    rc.train.validate();
    return rc;
}

ordered_json config_json(const TrainConfig& c) {
    ordered_json j;
    for (const auto& [k, v] : to_key_values(c)) j[k] = v;
    return j;
}

ordered_json run_config_json(const RunConfig& rc) {
    ordered_json j = config_json(rc.train);
    j["data.path"] = rc.paths.data;
    j["output.model"] = rc.paths.model;
    j["output.log"] = rc.paths.log;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw ConfigError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::string summary;
    SynthConfig config;
    std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const PairedDataset ds = generate_synthetic(a.config, a.seed);
    save_features(ds, a.out);
    const SynthConfig& c = a.config;
    ordered_json j;
    j["config"] = {{"clusters", c.images},
                   {"captions_per_image", c.captions_per_image},
                   {"holdout_per_image", c.holdout_per_image},
                   {"dim", c.dim},
                   {"regions", c.regions},
                   {"concepts", c.concept_pool},
                   {"attributes", c.attribute_pool},
                   {"sibling_overlap", c.sibling_overlap},
                   {"sibling_rebind", c.sibling_rebind},
                   {"sibling_variants", c.sibling_variants},
                   {"variant_noise", c.variant_noise},
                   {"min_words", c.min_words},
                   {"max_words", c.max_words},
                   {"distractors", c.distractor_words},
                   {"noise", c.noise},
                   {"asymmetric", c.asymmetric},
                   {"length_stratified", c.length_stratified},
                   {"seed", a.seed}};
    j["output"] = a.out;
    j["images"] = ds.images().size();
    j["captions"] = ds.captions().size();
    j["train_pairs"] = ds.captions_in(Split::Train).size();
    j["test_pairs"] = ds.captions_in(Split::Test).size();
    j["dim"] = ds.dim();
    j["separation"] = {{"nearest_centroid_train", nearest_centroid_accuracy(ds, Split::Train)},
                       {"nearest_centroid_test", nearest_centroid_accuracy(ds, Split::Test)}};
    const std::string text = j.dump(2);
    out << text << "\n";
    if (!a.summary.empty()) write_text(a.summary, text + "\n");
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    unsigned threads = 0;
    bool init_only = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    std::vector<std::string> overrides = a.overrides;
    if (a.threads > 0) overrides.push_back("train.threads=" + std::to_string(a.threads));
    const RunConfig rc = load_run_config(a.config, overrides);
    if (rc.paths.model.empty()) throw ConfigError("train: output.model is not set");
    if (a.init_only) {
        save_model(rc.paths.model, initial_params(rc.train), rc.train);
        out << ordered_json{{"model", rc.paths.model}, {"trained", false}, {"config", run_config_json(rc)}}.dump(2)
            << "\n";
        return kExitOk;
    }
    if (rc.paths.data.empty()) throw ConfigError("train: data.path is not set");
    const PairedDataset ds = load_features(rc.paths.data);

    std::ofstream log;
    if (!rc.paths.log.empty()) {
        log.open(rc.paths.log, std::ios::trunc);
        if (!log) throw ConfigError("cannot open '" + rc.paths.log + "' for writing");
        log << ordered_json{{"config", run_config_json(rc)}}.dump() << "\n";
    }
    const TrainResult r = train(ds, rc.train, [&](const EpochRecord& e) {
        const ordered_json rec{{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}};
        if (log.is_open()) log << rec.dump() << "\n" << std::flush;
        out << rec.dump() << "\n";
    });
    save_model(rc.paths.model, r.params, rc.train);
    out << ordered_json{{"model", rc.paths.model}, {"final_loss", r.log.back().loss}, {"config", run_config_json(rc)}}.dump(2)
        << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string model;
    std::string data;
    std::string split = "test";
    std::string out;
    bool lengths = false;
    bool normalize_alignment = false;
    unsigned threads = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto [params, config] = load_model(a.model);
    const PairedDataset ds = load_features(a.data);
    EvalOptions o;
    o.split = parse_split(a.split);
    o.length_buckets = a.lengths;
    o.normalize_alignment = a.normalize_alignment;
    o.threads = a.threads;
    const EvalReport report = evaluate(params, ds, o);
    ordered_json j = ordered_json::parse(report_json(report, &config));
    j["eval"] = {{"model", a.model},
                 {"data", a.data},
                 {"split", a.split},
                 {"normalize_alignment", a.normalize_alignment},
                 {"threads", a.threads}};
    const std::string text = j.dump(2);
    out << text << "\n";
    if (!a.out.empty()) write_text(a.out, text + "\n");
    return kExitOk;
}

struct GradcheckArgs {
    std::size_t dim = 8;
    std::size_t heads = 2;
    std::size_t regions = 3;
    std::size_t words = 4;
    std::size_t batch = 2;
    std::string ablation = "full";
    double step = 1e-4;
    double tolerance = 1e-4;
    std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    TrainConfig c;
    c.dim = a.dim;
    c.heads = a.heads;
    c.regions = a.regions;
    c.batch_size = a.batch;
    c.ablation = parse_ablation(a.ablation);
    c.seed = a.seed;
    const GradCheckResult r = gradient_check(c, a.words, a.step);
    ordered_json groups;
    for (const auto& [name, err] : r.errors) groups[name] = err;
    const bool ok = r.worst <= a.tolerance;
    out << ordered_json{{"loss", r.loss},
                        {"max_relative_error", groups},
                        {"worst", r.worst},
                        {"tolerance", a.tolerance},
                        {"pass", ok},
                        {"config",
                         {{"dim", a.dim},
                          {"heads", a.heads},
                          {"regions", a.regions},
                          {"words", a.words},
                          {"batch", a.batch},
                          {"ablation", a.ablation},
                          {"step", a.step},
                          {"seed", a.seed}}}}
               .dump(2)
        << "\n";
    return ok ? kExitOk : kExitNumeric;
}

struct ScoreArgs {
    std::string model;
    std::string data;
    std::string image;
    std::string text;
    std::string split = "test";
    unsigned threads = 1;
};

int cmd_score(const ScoreArgs& a, std::ostream& out) {
    const auto [params, config] = load_model(a.model);
    const PairedDataset ds = load_features(a.data);
    if (!a.image.empty() || !a.text.empty()) {
        if (a.image.empty() || a.text.empty()) throw ConfigError("score: --image and --text go together");
        const ImageFeatures& img = ds.images()[ds.image_index(a.image)];
        const TextFeatures* txt = nullptr;
        for (const auto& t : ds.captions())
            if (t.text_id == a.text) txt = &t;
        if (!txt) throw ConfigError("score: unknown text id '" + a.text + "'");
        const PairScore s = score(img, *txt, params);
        out << ordered_json{{"image", a.image},
                            {"text", a.text},
                            {"local", s.local},
                            {"global", s.global},
                            {"total", s.total},
                            {"config", config_json(config)}}
                   .dump(2)
            << "\n";
        return kExitOk;
    }
    const Split split = parse_split(a.split);
    std::vector<ImageFeatures> imgs;
    for (std::size_t i : ds.images_in(split)) imgs.push_back(ds.images()[i]);
    std::vector<TextFeatures> txts;
    for (std::size_t c : ds.captions_in(split)) txts.push_back(ds.captions()[c]);
    if (imgs.empty()) throw ConfigError(std::string("score: split '") + a.split + "' is empty");
    const Mat s = score_matrix(imgs, txts, params, a.threads);
    // CSV: header row of text ids, one row per image.
    out << "image";
    for (const auto& t : txts) out << "," << t.text_id;
    out << "\n";
    char buf[32];
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        out << imgs[i].image_id;
        for (std::size_t j = 0; j < txts.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", s(i, j));
            out << "," << buf;
        }
        out << "\n";
    }
    return kExitOk;
}

struct AblateArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string variants = "full,no_pos,no_neg,no_pn,no_mf,triplet";
    std::size_t seeds = 1;
    std::string out;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const RunConfig rc = load_run_config(a.config, a.overrides);
    if (rc.paths.data.empty()) throw ConfigError("ablate: data.path is not set");
    if (a.seeds == 0) throw ConfigError("ablate: --seeds must be >= 1");
    std::vector<Ablation> variants;
    std::stringstream ss(a.variants);
    for (std::string v; std::getline(ss, v, ',');)
        if (!v.empty()) variants.push_back(parse_ablation(v));
    if (variants.empty()) throw ConfigError("ablate: no variants given");
    const PairedDataset ds = load_features(rc.paths.data);

    ordered_json rows = ordered_json::array();
    out << "variant   rsum_mean  i2t_r1  t2i_r1\n";
    for (Ablation v : variants) {
        TrainConfig c = rc.train;
        c.ablation = v;
        double rsum = 0.0, i2t = 0.0, t2i = 0.0;
        ordered_json per_seed = ordered_json::array();
        for (std::size_t s = 0; s < a.seeds; ++s) {
            c.seed = rc.train.seed + s;
            const EvalReport r = evaluate(train(ds, c).params, ds);
            rsum += r.rsum;
            i2t += r.i2t.r1;
            t2i += r.t2i.r1;
            per_seed.push_back({{"seed", c.seed}, {"rsum", r.rsum}});
        }
        const double n = static_cast<double>(a.seeds);
        char line[96];
        std::snprintf(line, sizeof line, "%-9s %9.4f  %6.4f  %6.4f\n", ablation_name(v), rsum / n, i2t / n, t2i / n);
        out << line;
        rows.push_back({{"variant", ablation_name(v)},
                        {"rsum_mean", rsum / n},
                        {"i2t_r1_mean", i2t / n},
                        {"t2i_r1_mean", t2i / n},
                        {"seeds", per_seed}});
    }
    if (!a.out.empty()) {
        write_text(a.out, ordered_json{{"config", run_config_json(rc)}, {"seeds", a.seeds}, {"variants", rows}}.dump(2) + "\n");
    }
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Asymmetry-sensitive contrastive image-text matching on feature matrices"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a synthetic paired dataset");
    s->add_option("--out", synth.out, "Output ASCL file")->required();
    s->add_option("--summary", synth.summary, "Also write the JSON summary here");
    s->add_option("--clusters", synth.config.images, "Images (latent clusters)");
    s->add_option("--dim", synth.config.dim, "Feature dimension D");
    s->add_option("--regions", synth.config.regions, "Regions per image K");
    s->add_option("--captions-per-image", synth.config.captions_per_image);
    s->add_option("--holdout", synth.config.holdout_per_image, "Test captions per image");
    s->add_option("--concepts", synth.config.concept_pool, "Concept (object) pool size");
    s->add_option("--attributes", synth.config.attribute_pool, "Attribute pool size; 0 disables bound concepts");
    s->add_option("--sibling-overlap", synth.config.sibling_overlap, "Concepts shared by paired images");
    s->add_option("--sibling-rebind", synth.config.sibling_rebind, "Concepts of paired images rebuilt with swapped attributes");
    s->add_option("--sibling-variants", synth.config.sibling_variants, "Concepts of paired images replaced by perturbed copies");
    s->add_option("--variant-noise", synth.config.variant_noise, "Perturbation sigma for sibling variants");
    s->add_option("--min-words", synth.config.min_words);
    s->add_option("--max-words", synth.config.max_words);
    s->add_option("--distractors", synth.config.distractor_words, "Off-image words per caption");
    s->add_option("--noise", synth.config.noise, "Feature noise sigma");
    s->add_flag("--asymmetric", synth.config.asymmetric, "Mix short, long and distracted captions");
    s->add_flag("--length-stratified", synth.config.length_stratified, "Spread test caption lengths over buckets");
    s->add_option("--seed", synth.seed);

    TrainArgs train_args;
    auto* t = app.add_subcommand("train", "Train a model from a config file");
    t->add_option("--config", train_args.config, "key=value config file")->required();
    t->add_option("--set", train_args.overrides, "Override a config key (key=value)");
    t->add_option("--threads", train_args.threads, "Worker threads (overrides train.threads)");
    t->add_flag("--init-only", train_args.init_only, "Write the untrained initial model and exit");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Evaluate a model on a dataset split");
    e->add_option("--model", eval.model)->required();
    e->add_option("--data", eval.data)->required();
    e->add_option("--split", eval.split);
    e->add_option("--out", eval.out, "Also write the JSON report here");
    e->add_flag("--lengths", eval.lengths, "Report T2I recall per caption-length bucket");
    e->add_flag("--normalize-alignment", eval.normalize_alignment, "Unit-normalize vectors before alignment");
    e->add_option("--threads", eval.threads);

    GradcheckArgs gc;
    auto* g = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    g->add_option("--dim", gc.dim);
    g->add_option("--heads", gc.heads);
    g->add_option("--regions", gc.regions);
    g->add_option("--words", gc.words);
    g->add_option("--batch", gc.batch);
    g->add_option("--ablation", gc.ablation);
    g->add_option("--step", gc.step);
    g->add_option("--tolerance", gc.tolerance);
    g->add_option("--seed", gc.seed);

    ScoreArgs sc;
    auto* so = app.add_subcommand("score", "Score one pair, or every pair of a split as CSV");
    so->add_option("--model", sc.model)->required();
    so->add_option("--data", sc.data)->required();
    so->add_option("--image", sc.image);
    so->add_option("--text", sc.text);
    so->add_option("--split", sc.split);
    so->add_option("--threads", sc.threads);

    AblateArgs ab;
    auto* a = app.add_subcommand("ablate", "Train and evaluate several ablation variants");
    a->add_option("--config", ab.config, "key=value config file")->required();
    a->add_option("--set", ab.overrides, "Override a config key (key=value)");
    a->add_option("--variants", ab.variants, "Comma-separated variant names");
    a->add_option("--seeds", ab.seeds, "Training seeds per variant (seed, seed+1, ...)");
    a->add_option("--out", ab.out, "Write the comparison as JSON");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (t->parsed()) return cmd_train(train_args, out);
        if (e->parsed()) return cmd_eval(eval, out);
        if (g->parsed()) return cmd_gradcheck(gc, out);
        if (so->parsed()) return cmd_score(sc, out);
        if (a->parsed()) return cmd_ablate(ab, out);
    } catch (const NumericError& ex) {
        err << "numeric error: " << ex.what() << "\n";
        return kExitNumeric;
    } catch (const Error& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& ex) {
        err << "unexpected error: " << ex.what() << "\n";
        return kExitFailed;
    }
    return kExitUsage;
}

} // namespace ascl::cli
