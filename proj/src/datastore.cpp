#include "ascl/datastore.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "ascl/error.h"
#include "ascl/rng.h"

namespace ascl {

static_assert(std::endian::native == std::endian::little, "ASCL I/O assumes a little-endian host");

const char* split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + name + "'");
}

void PairedDataset::add_image(ImageFeatures image) {
    if (image.regions.rows() == 0) throw ConfigError("image '" + image.image_id + "' has no regions");
    if (image.regions.cols() != dim_ || image.global.size() != dim_) {
        throw ShapeError("image '" + image.image_id + "' has dimension " + std::to_string(image.regions.cols()) +
                         ", dataset dimension is " + std::to_string(dim_));
    }
    image.regions.check_finite("image regions");
    for (double v : image.global) {
        if (!std::isfinite(v)) throw NumericError("image '" + image.image_id + "' global vector is not finite");
    }
    if (image_lookup_.contains(image.image_id)) throw ConfigError("duplicate image id '" + image.image_id + "'");
    image_lookup_.emplace(image.image_id, images_.size());
    images_.push_back(std::move(image));
    groups_.emplace_back();
}

void PairedDataset::add_caption(TextFeatures caption, Split split) {
    const auto parent = image_lookup_.find(caption.parent_image);
    if (parent == image_lookup_.end()) {
        throw PairingError("caption '" + caption.text_id + "' references unknown image '" + caption.parent_image + "'");
    }
    if (caption.words.rows() == 0) throw ConfigError("caption '" + caption.text_id + "' has no words");
    if (caption.words.cols() != dim_) {
        throw ShapeError("caption '" + caption.text_id + "' has dimension " + std::to_string(caption.words.cols()) +
                         ", dataset dimension is " + std::to_string(dim_));
    }
    caption.words.check_finite("caption words");
    if (caption_lookup_.contains(caption.text_id)) throw ConfigError("duplicate caption id '" + caption.text_id + "'");
    caption_lookup_.emplace(caption.text_id, captions_.size());
    groups_[parent->second].push_back(captions_.size());
    parent_of_.push_back(parent->second);
    splits_.push_back(split);
    captions_.push_back(std::move(caption));
}

std::size_t PairedDataset::image_index(const std::string& image_id) const {
    const auto it = image_lookup_.find(image_id);
    if (it == image_lookup_.end()) throw PairingError("unknown image '" + image_id + "'");
    return it->second;
}

std::vector<std::size_t> PairedDataset::captions_in(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < captions_.size(); ++i)
        if (splits_[i] == split) out.push_back(i);
    return out;
}

std::vector<std::size_t> PairedDataset::images_in(Split split) const {
    std::vector<bool> seen(images_.size(), false);
    for (std::size_t i = 0; i < captions_.size(); ++i)
        if (splits_[i] == split) seen[parent_of_[i]] = true;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (seen[i]) out.push_back(i);
    return out;
}

bool operator==(const PairedDataset& a, const PairedDataset& b) {
    if (a.dim_ != b.dim_ || a.images_.size() != b.images_.size() || a.captions_.size() != b.captions_.size() ||
        a.splits_ != b.splits_) {
        return false;
    }
    for (std::size_t i = 0; i < a.images_.size(); ++i) {
        const auto& x = a.images_[i];
        const auto& y = b.images_[i];
        if (x.image_id != y.image_id || !(x.regions == y.regions) || x.global != y.global) return false;
    }
    for (std::size_t i = 0; i < a.captions_.size(); ++i) {
        const auto& x = a.captions_[i];
        const auto& y = b.captions_[i];
        if (x.text_id != y.text_id || x.parent_image != y.parent_image || !(x.words == y.words)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Binary format
//
//   "ASCL" | version u32 | D u32 | image count u32 | caption count u32
//   image:   id (u32 length + UTF-8) | K u32 | K*D f32 | D f32 (global)
//   caption: id | parent id | L u32 | L*D f32
//   trailer: caption count u8 split tags (0 train, 1 val, 2 test)
//
// All integers and floats little-endian.

namespace {

constexpr char kMagic[4] = {'A', 'S', 'C', 'L'};

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}

    void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void f32(double v) {
        const float f = static_cast<float>(v);
        out_.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void floats(std::span<const double> values) {
        for (double v : values) f32(v);
    }

private:
    std::ostream& out_;
};

class Reader {
public:
    explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

    std::uint64_t offset() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }
    void set_context(std::string ctx) { context_ = std::move(ctx); }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(context_.empty() ? what : context_ + ": " + what, pos_);
    }

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated payload, needed " + std::to_string(n) + " more bytes");
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::vector<double> floats(std::size_t count) {
        if (count > (bytes_.size() - pos_) / 4) fail("truncated payload, needed " + std::to_string(count) + " floats");
        std::vector<double> out(count);
        for (std::size_t i = 0; i < count; ++i) {
            float f;
            std::memcpy(&f, bytes_.data() + pos_, 4);
            if (!std::isfinite(f)) fail("non-finite value");
            out[i] = f;
            pos_ += 4;
        }
        return out;
    }
    void magic() {
        need(4);
        if (std::memcmp(bytes_.data(), kMagic, 4) != 0) fail("bad magic, expected 'ASCL'");
        pos_ += 4;
    }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
    std::string context_;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffULL) throw ConfigError(std::string(what) + " does not fit in u32");
    return static_cast<std::uint32_t>(v);
}

} // namespace

void save_features(const PairedDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    Writer w(out);
    out.write(kMagic, 4);
    w.u32(kFormatVersion);
    w.u32(checked_u32(dataset.dim(), "dimension"));
    w.u32(checked_u32(dataset.images().size(), "image count"));
    w.u32(checked_u32(dataset.captions().size(), "caption count"));
    for (const auto& img : dataset.images()) {
        w.str(img.image_id);
        w.u32(checked_u32(img.regions.rows(), "region count"));
        w.floats(img.regions.values());
        w.floats(img.global);
    }
    for (const auto& cap : dataset.captions()) {
        w.str(cap.text_id);
        w.str(cap.parent_image);
        w.u32(checked_u32(cap.words.rows(), "word count"));
        w.floats(cap.words.values());
    }
    for (Split s : dataset.caption_splits()) w.u8(static_cast<std::uint8_t>(s));
    if (!out) throw ConfigError("write to '" + path.string() + "' failed");
}

PairedDataset load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

    r.magic();
    const std::uint32_t version = r.u32();
    if (version != kFormatVersion) r.fail("unsupported format version " + std::to_string(version));
    const std::uint32_t dim = r.u32();
    if (dim == 0) r.fail("dimension must be positive");
    const std::uint32_t n_images = r.u32();
    const std::uint32_t n_captions = r.u32();

    PairedDataset ds(dim);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        r.set_context("image record " + std::to_string(i));
        std::string id = r.str();
        r.set_context("image record " + std::to_string(i) + " ('" + id + "')");
        const std::uint32_t k = r.u32();
        if (k == 0) r.fail("zero regions");
        ImageFeatures img{std::move(id), Mat(k, dim, r.floats(std::size_t{k} * dim)), r.floats(dim)};
        try {
            ds.add_image(std::move(img));
        } catch (const Error& e) {
            r.fail(e.what());
        }
    }
    std::vector<std::pair<TextFeatures, std::uint64_t>> captions;
    for (std::uint32_t i = 0; i < n_captions; ++i) {
        r.set_context("caption record " + std::to_string(i));
        std::string id = r.str();
        r.set_context("caption record " + std::to_string(i) + " ('" + id + "')");
        std::string parent = r.str();
        const std::uint32_t l = r.u32();
        if (l == 0) r.fail("zero words");
        captions.emplace_back(TextFeatures{std::move(id), std::move(parent), Mat(l, dim, r.floats(std::size_t{l} * dim))},
                              r.offset());
    }
    r.set_context("split table");
    std::vector<Split> splits;
    for (std::uint32_t i = 0; i < n_captions; ++i) {
        const std::uint8_t tag = r.u8();
        if (tag > 2) r.fail("invalid split tag " + std::to_string(tag));
        splits.push_back(static_cast<Split>(tag));
    }
    if (!r.at_end()) r.fail("trailing bytes after split table");
    for (std::size_t i = 0; i < captions.size(); ++i) {
        try {
            ds.add_caption(std::move(captions[i].first), splits[i]);
        } catch (const Error& e) {
            throw FormatError("caption record " + std::to_string(i) + ": " + e.what(), captions[i].second);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// JSON manifest

namespace {

Mat json_matrix(const nlohmann::json& rows, std::size_t dim, const std::string& what) {
    if (!rows.is_array() || rows.empty()) throw ConfigError(what + ": expected a non-empty array of rows");
    std::vector<double> data;
    for (const auto& row : rows) {
        if (!row.is_array() || row.size() != dim) {
            throw ShapeError(what + ": row length " + std::to_string(row.size()) + " != dim " + std::to_string(dim));
        }
        for (const auto& v : row) data.push_back(v.get<double>());
    }
    return Mat(rows.size(), dim, std::move(data));
}

} // namespace

PairedDataset parse_json_manifest(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("JSON manifest: ") + e.what(), e.byte);
    }
    try {
        const std::size_t dim = doc.at("dim").get<std::size_t>();
        PairedDataset ds(dim);
        for (const auto& img : doc.at("images")) {
            const std::string id = img.at("id").get<std::string>();
            ImageFeatures f{id, json_matrix(img.at("regions"), dim, "image '" + id + "'"),
                            img.at("global").get<std::vector<double>>()};
            ds.add_image(std::move(f));
        }
        for (const auto& cap : doc.at("captions")) {
            const std::string id = cap.at("id").get<std::string>();
            TextFeatures t{id, cap.at("image").get<std::string>(), json_matrix(cap.at("words"), dim, "caption '" + id + "'")};
            ds.add_caption(std::move(t), parse_split(cap.value("split", std::string("train"))));
        }
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("JSON manifest: ") + e.what());
    }
}

PairedDataset load_json_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json_manifest(ss.str());
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::size_t concept_count(const SynthConfig& c) {
    return c.attribute_pool > 0 ? c.concept_pool * c.attribute_pool : c.concept_pool;
}

void validate(const SynthConfig& c) {
    if (c.images < 2) {
        if (c.retrieval_eval) throw ConfigError("synthetic: retrieval needs at least 2 images");
        if (c.images == 0) throw ConfigError("synthetic: images must be >= 1");
    }
    if (c.captions_per_image < 2) throw ConfigError("synthetic: captions_per_image must be >= 2");
    if (c.holdout_per_image >= c.captions_per_image) {
        throw ConfigError("synthetic: holdout_per_image must leave at least one training caption");
    }
    if (c.dim == 0 || c.regions == 0) throw ConfigError("synthetic: dim and regions must be positive");
    if (concept_count(c) < c.regions) throw ConfigError("synthetic: fewer concepts than regions");
    if (c.distractor_words > 0 && concept_count(c) == c.regions) {
        throw ConfigError("synthetic: distractors need concepts outside the image");
    }
    if (c.min_words == 0 || c.min_words > c.max_words) throw ConfigError("synthetic: invalid word-count range");
    const std::size_t kept = c.sibling_overlap + c.sibling_rebind + c.sibling_variants;
    if (kept > 0 && kept >= c.regions) {
        throw ConfigError("synthetic: sibling overlap, rebind and variants together must be fewer than regions");
    }
    if (kept > 0 && concept_count(c) < 2 * c.regions - kept) {
        throw ConfigError("synthetic: too few concepts for sibling images");
    }
    if (c.sibling_rebind == 1) throw ConfigError("synthetic: sibling_rebind needs at least 2 concepts");
    if (c.sibling_rebind > 0 && (c.attribute_pool < c.sibling_rebind || c.concept_pool < c.sibling_rebind)) {
        throw ConfigError("synthetic: sibling_rebind needs that many objects and attributes");
    }
    if (!(c.noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");
    if (!(c.variant_noise > 0.0)) throw ConfigError("synthetic: variant_noise must be > 0");
}

struct CaptionPlan {
    std::size_t words;
    std::size_t distractors;
};

// Draws `count` concepts from `pool`, cycling through a fresh permutation
// whenever the pool is exhausted.
std::vector<std::size_t> draw_concepts(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
    std::vector<std::size_t> out;
    std::vector<std::size_t> order;
    while (out.size() < count) {
        if (order.empty()) {
            order = pool;
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(0, i - 1)]);
        }
        out.push_back(order.back());
        order.pop_back();
    }
    return out;
}

constexpr std::size_t kMaxCaptionDraws = 1000;
constexpr std::size_t kMaxDatasetDraws = 20;

bool separable(const std::vector<std::size_t>& words, std::size_t image,
               const std::vector<std::vector<double>>& concepts, const std::vector<std::vector<double>>& latent_means) {
    std::vector<double> mean(concepts[0].size(), 0.0);
    for (std::size_t w : words)
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += concepts[w][j];
    const double own = cosine(mean, latent_means[image]);
    for (std::size_t g = 0; g < latent_means.size(); ++g)
        if (g != image && cosine(mean, latent_means[g]) >= own) return false;
    return true;
}

CaptionPlan plan_caption(const SynthConfig& c, bool test, std::size_t slot, Rng& rng) {
    CaptionPlan plan{rng.index(c.min_words, c.max_words), c.distractor_words};
    if (test && c.length_stratified) {
        switch (slot % 3) {
        case 0: plan.words = rng.index(3, 9); break;
        case 1: plan.words = rng.index(10, 20); break;
        default: plan.words = rng.index(21, 30); break;
        }
        return plan;
    }
    if (c.asymmetric) {
        switch (rng.index(0, 3)) {
        case 0: break;
        case 1: plan.words = std::max<std::size_t>(2, plan.words / 2); break;  // short, information dropped
        case 2: plan.words *= 2; break;                                         // long, extra relevant detail
        default: plan.distractors += 2; break;                                  // redundant, off-image words
        }
    }
    return plan;
}

// Concept set for the second image of a sibling pair: sibling_overlap of the
// sibling's concepts as they are, sibling_rebind more rebuilt from distinct
// objects and attributes of the sibling with the attributes rotated,
// sibling_variants perturbed copies appended to `concepts`, the rest drawn
// from concepts the sibling does not have.
std::vector<std::size_t> sibling_concepts(const SynthConfig& c, const std::vector<std::size_t>& sibling,
                                          const std::vector<std::size_t>& all,
                                          std::vector<std::vector<double>>& concepts, Rng& rng) {
    std::vector<std::size_t> order = sibling;
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(0, k - 1)]);
    std::vector<std::size_t> set(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(c.sibling_overlap));
    std::vector<bool> used(order.size(), false);
    std::fill(used.begin(), used.begin() + static_cast<std::ptrdiff_t>(c.sibling_overlap), true);

    if (c.sibling_rebind > 0) {
        // Bound concept index = attribute * concept_pool + object.
        std::vector<std::size_t> objects, attributes;
        for (std::size_t k = c.sibling_overlap; k < order.size() && objects.size() < c.sibling_rebind; ++k) {
            const std::size_t o = order[k] % c.concept_pool, a = order[k] / c.concept_pool;
            if (std::find(objects.begin(), objects.end(), o) != objects.end()) continue;
            if (std::find(attributes.begin(), attributes.end(), a) != attributes.end()) continue;
            objects.push_back(o);
            attributes.push_back(a);
            used[k] = true;
        }
        for (std::size_t k = 0; k < objects.size() && objects.size() > 1; ++k) {
            const std::size_t bound = attributes[(k + 1) % attributes.size()] * c.concept_pool + objects[k];
            if (std::find(set.begin(), set.end(), bound) == set.end()) set.push_back(bound);
        }
    }

    const double rescale = 1.0 / std::sqrt(1.0 + c.variant_noise * c.variant_noise);
    for (std::size_t k = 0, made = 0; k < order.size() && made < c.sibling_variants; ++k) {
        if (used[k]) continue;
        std::vector<double> v = concepts[order[k]];
        for (double& x : v) x = (x + rng.normal(0.0, c.variant_noise)) * rescale;
        concepts.push_back(std::move(v));
        set.push_back(concepts.size() - 1);
        ++made;
    }

    std::vector<std::size_t> taken = sibling;
    taken.insert(taken.end(), set.begin(), set.end());
    std::sort(taken.begin(), taken.end());
    std::vector<std::size_t> fresh;
    std::set_difference(all.begin(), all.end(), taken.begin(), taken.end(), std::back_inserter(fresh));
    for (std::size_t extra : draw_concepts(fresh, c.regions - set.size(), rng)) set.push_back(extra);
    for (std::size_t k = set.size(); k > 1; --k) std::swap(set[k - 1], set[rng.index(0, k - 1)]);
    return set;
}

} // namespace

PairedDataset generate_synthetic(const SynthConfig& c, std::uint64_t seed) {
    validate(c);
    Rng rng(derive_seed(seed, {0x5e17}));
    const std::size_t d = c.dim;

    std::vector<std::vector<double>> concepts(c.concept_pool, std::vector<double>(d));
    for (auto& v : concepts)
        for (double& x : v) x = rng.normal();
    if (c.attribute_pool > 0) {
        // Every (object, attribute) binding becomes its own concept.
        std::vector<std::vector<double>> attributes(c.attribute_pool, std::vector<double>(d));
        for (auto& v : attributes)
            for (double& x : v) x = rng.normal();
        std::vector<std::vector<double>> bound;
        for (const auto& a : attributes) {
            for (const auto& o : concepts) {
                std::vector<double> v(d);
                for (std::size_t j = 0; j < d; ++j) v[j] = (o[j] + a[j]) / std::sqrt(2.0);
                bound.push_back(std::move(v));
            }
        }
        concepts = std::move(bound);
    }

    std::vector<std::size_t> all(concepts.size());
    std::iota(all.begin(), all.end(), 0);

    auto noisy_row = [&](std::span<double> out, const std::vector<double>& base) {
        for (std::size_t j = 0; j < d; ++j) out[j] = f32(base[j] + (c.noise > 0.0 ? rng.normal(0.0, c.noise) : 0.0));
    };

    // A draw fails when some caption cannot identify its image; the whole
    // dataset is then redrawn from the continuing stream.
    auto draw = [&]() -> std::optional<PairedDataset> {
        PairedDataset ds(d);
        std::vector<std::vector<std::size_t>> image_concepts;
        std::vector<std::vector<double>> latent_means;
        for (std::size_t i = 0; i < c.images; ++i) {
            std::vector<std::size_t> set;
            if (c.sibling_overlap + c.sibling_rebind + c.sibling_variants > 0 && i % 2 == 1) {
                set = sibling_concepts(c, image_concepts[i - 1], all, concepts, rng);
            } else {
                set = draw_concepts(all, c.regions, rng);
            }
            Mat regions(c.regions, d);
            std::vector<double> mean(d, 0.0);
            for (std::size_t k = 0; k < c.regions; ++k) {
                noisy_row(regions.row(k), concepts[set[k]]);
                for (std::size_t j = 0; j < d; ++j) mean[j] += concepts[set[k]][j] / static_cast<double>(c.regions);
            }
            std::vector<double> global(d);
            noisy_row(global, mean);
            ds.add_image({"img" + std::to_string(i), std::move(regions), std::move(global)});
            image_concepts.push_back(std::move(set));
            latent_means.push_back(std::move(mean));
        }

        for (std::size_t i = 0; i < c.images; ++i) {
            const auto& own = image_concepts[i];
            std::vector<std::size_t> sorted = own;
            std::sort(sorted.begin(), sorted.end());
            std::vector<std::size_t> others;
            std::set_difference(all.begin(), all.end(), sorted.begin(), sorted.end(), std::back_inserter(others));
            const std::size_t first_test = c.captions_per_image - c.holdout_per_image;
            for (std::size_t m = 0; m < c.captions_per_image; ++m) {
                const bool test = m >= first_test;
                const CaptionPlan plan = plan_caption(c, test, m - (test ? first_test : 0), rng);
                // Redraw until the noise-free caption is closest to its own image.
                std::vector<std::size_t> words;
                for (std::size_t attempt = 0;; ++attempt) {
                    if (attempt == kMaxCaptionDraws) return std::nullopt;
                    words = draw_concepts(own, plan.words, rng);
                    if (plan.distractors > 0) {
                        for (std::size_t extra : draw_concepts(others, plan.distractors, rng)) {
                            words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.index(0, words.size())), extra);
                        }
                    }
                    if (separable(words, i, concepts, latent_means)) break;
                }
                Mat w(words.size(), d);
                for (std::size_t l = 0; l < words.size(); ++l) noisy_row(w.row(l), concepts[words[l]]);
                ds.add_caption({"img" + std::to_string(i) + "_cap" + std::to_string(m), "img" + std::to_string(i), std::move(w)},
                               test ? Split::Test : Split::Train);
            }
        }
        return ds;
    };
    for (std::size_t attempt = 0; attempt < kMaxDatasetDraws; ++attempt)
        if (auto ds = draw()) return std::move(*ds);
    throw ConfigError("synthetic: cannot draw captions that identify their images; use more concepts or longer captions");
}

double nearest_centroid_accuracy(const PairedDataset& dataset, Split split) {
    const auto caps = dataset.captions_in(split);
    const auto imgs = dataset.images_in(split);
    if (caps.empty() || imgs.empty()) return 0.0;
    std::vector<std::vector<double>> centroids;
    for (std::size_t i : imgs) centroids.push_back(column_mean(dataset.images()[i].regions));
    std::size_t hits = 0;
    for (std::size_t c : caps) {
        const auto m = column_mean(dataset.captions()[c].words);
        std::size_t best = 0;
        double best_score = -2.0;
        for (std::size_t g = 0; g < imgs.size(); ++g) {
            const double s = cosine(m, centroids[g]);
            if (s > best_score) {
                best_score = s;
                best = g;
            }
        }
        if (imgs[best] == dataset.parent_index(c)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(caps.size());
}

std::vector<Batch> make_batches(const PairedDataset& dataset, Split split, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle) {
    if (batch_size < 2) throw ConfigError("batch size must be >= 2");
    std::vector<std::size_t> order = dataset.captions_in(split);
    if (batch_size > order.size()) {
        throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds the " + std::to_string(order.size()) +
                          " pairs in the " + split_name(split) + " split");
    }
    if (shuffle) {
        Rng rng(derive_seed(seed, {0xba7c}));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(0, i - 1)]);
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
        batches.push_back({std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                    order.begin() + static_cast<std::ptrdiff_t>(start + batch_size))});
    }
    return batches;
}

} // namespace ascl
