#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ascl/numerics.h"

namespace ascl {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ImageFeatures {
    std::string image_id;
    Mat regions;                  // K x D
    std::vector<double> global;   // D

    std::size_t region_count() const { return regions.rows(); }
    std::size_t dim() const { return regions.cols(); }
};

struct TextFeatures {
    std::string text_id;
    std::string parent_image;
    Mat words;                    // L x D

    std::size_t word_count() const { return words.rows(); }
    std::size_t dim() const { return words.cols(); }
};

// Images plus captions grouped by parent image. Each caption carries its own
// split tag; a (caption, parent) pair belongs to the caption's split.
class PairedDataset {
public:
    PairedDataset() = default;
    explicit PairedDataset(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const noexcept { return dim_; }

    // Validates shape, finiteness and id uniqueness.
    void add_image(ImageFeatures image);
    // Parent must already exist.
    void add_caption(TextFeatures caption, Split split);

    const std::vector<ImageFeatures>& images() const noexcept { return images_; }
    const std::vector<TextFeatures>& captions() const noexcept { return captions_; }
    const std::vector<Split>& caption_splits() const noexcept { return splits_; }

    std::size_t image_index(const std::string& image_id) const;
    std::size_t parent_index(std::size_t caption) const { return parent_of_[caption]; }
    // Caption indices of one image, in insertion order.
    const std::vector<std::size_t>& caption_group(std::size_t image) const { return groups_[image]; }

    std::vector<std::size_t> captions_in(Split split) const;
    // Images with at least one caption in `split`, ascending.
    std::vector<std::size_t> images_in(Split split) const;

    friend bool operator==(const PairedDataset& a, const PairedDataset& b);

private:
    std::size_t dim_ = 0;
    std::vector<ImageFeatures> images_;
    std::vector<TextFeatures> captions_;
    std::vector<Split> splits_;
    std::vector<std::size_t> parent_of_;
    std::vector<std::vector<std::size_t>> groups_;
    std::map<std::string, std::size_t> image_lookup_;
    std::map<std::string, std::size_t> caption_lookup_;
};

// Binary "ASCL" container. Values are stored as float32 LE, so a dataset
// survives save/load exactly only if its values are float32-representable;
// the generator and the loader both produce such values.
inline constexpr std::uint32_t kFormatVersion = 1;

void save_features(const PairedDataset& dataset, const std::filesystem::path& path);
PairedDataset load_features(const std::filesystem::path& path);

// Small hand-written fixtures:
// {"dim": D, "images": [{"id", "regions": [[...]], "global": [...]}],
//  "captions": [{"id", "image", "split"?, "words": [[...]]}]}
PairedDataset load_json_manifest(const std::filesystem::path& path);
PairedDataset parse_json_manifest(const std::string& text);

struct SynthConfig {
    std::size_t images = 32;              // latent clusters; one image each
    std::size_t captions_per_image = 5;
    std::size_t holdout_per_image = 1;    // trailing captions tagged Test
    std::size_t dim = 64;
    std::size_t regions = 8;              // K
    std::size_t concept_pool = 96;        // shared concept vocabulary
    // When > 0, concepts are bound (object, attribute) pairs over
    // concept_pool objects and this many attributes.
    std::size_t attribute_pool = 0;
    // Images come in consecutive pairs whose concept sets share this many
    // concepts (hard near-duplicates); 0 draws every image independently.
    std::size_t sibling_overlap = 0;
    // With bound concepts, this many further sibling concepts reuse the
    // sibling's objects and attributes under a different binding.
    std::size_t sibling_rebind = 0;
    // This many further sibling concepts become perturbed copies, c + e with
    // e ~ N(0, variant_noise^2) per entry, rescaled to unit variance.
    std::size_t sibling_variants = 0;
    double variant_noise = 0.5;
    std::size_t min_words = 4;
    std::size_t max_words = 8;
    std::size_t distractor_words = 0;     // out-of-image concepts per caption
    double noise = 0.1;
    // Asymmetric corpus: some captions are truncated, some concatenated
    // (longer than max_words), some carry extra distractor words.
    bool asymmetric = false;
    // Test captions are drawn with lengths spread over short/medium/long.
    bool length_stratified = false;
    bool retrieval_eval = true;
};

PairedDataset generate_synthetic(const SynthConfig& config, std::uint64_t seed);

// Fraction of captions in `split` whose mean word vector is closest (cosine)
// to the mean region vector of their own image among that split's images.
double nearest_centroid_accuracy(const PairedDataset& dataset, Split split);

struct Batch {
    std::vector<std::size_t> captions;  // caption indices; parent images implied
};

// One epoch of batches over `split`; an incomplete trailing batch is dropped
// so every batch has exactly batch_size pairs.
std::vector<Batch> make_batches(const PairedDataset& dataset, Split split, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle);

} // namespace ascl
