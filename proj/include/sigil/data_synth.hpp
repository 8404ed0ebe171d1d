#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sigil/image.hpp"
#include "sigil/raster.hpp"
#include "sigil/rng.hpp"

namespace sigil {

enum class Category { glyph_text, shape_logo, tryon_patch };

inline const char* category_name(Category c) {
    switch (c) {
        case Category::glyph_text: return "glyph_text";
        case Category::shape_logo: return "shape_logo";
        case Category::tryon_patch: return "tryon_patch";
    }
    return "?";
}
Category parse_category(const std::string& s);

// Benchmark indices live in a disjoint range, so the train/test split is
// disjoint by construction.
constexpr int64_t kBenchmarkIndexBase = 1000000;

struct SynthSpec {
    int image_size                       = 64;
    std::vector<double> category_weights = {0.4, 0.35, 0.25};  // glyph_text, shape_logo, tryon_patch
    double mask_area_min                 = 0.05;
    double mask_area_max                 = 0.35;
    uint64_t rng_seed                    = 1;

    void validate() const;
};

struct SamplePair {
    Image scene;    // 3-channel composite with the subject placed in the region
    Image mask;     // 1-channel, 1 = preserved background, 0 = customized region
    Image subject;  // 3-channel re-rendering of the region logo on neutral ground
    Category category = Category::shape_logo;
    int64_t index     = 0;
    uint64_t seed     = 0;
    bool quality_ok   = true;

    double mask_area_fraction() const;  // fraction of customized (mask==0) pixels
    void validate(const SynthSpec& spec) const;
};

// Deterministic procedural (subject, scene, mask) triplet for a given index.
SamplePair gen_pair(const SynthSpec& spec, int64_t index);

// Subject augmentation: seeded flip, bounded rotation, mild optical
// distortion and a sharpen pass standing in for super-resolution.
struct AugmentDraws {
    bool flip        = false;
    bool rotate      = false;
    double angle_deg = 0.0;
    bool distort     = false;
    double strength  = 0.0;
    bool sharpen     = false;
};
AugmentDraws draw_augment(uint64_t seed);
Image apply_augment(const Image& subject, const AugmentDraws& draws);
Image augment_subject(const Image& subject, uint64_t seed);
Image flip_horizontal(const Image& img);

// Rotation of a point about the image center; exposed for the geometry
// bound check on augment rotations.
void rotate_point(double cx, double cy, double angle_deg, double x, double y, double& ox, double& oy);

// Infinite seeded index stream with category-weighted draws; indices within a
// category are visited round-robin.
struct WeightedSampler {
    WeightedSampler(std::vector<std::vector<int64_t>> category_indices, std::vector<double> weights, uint64_t seed);
    int64_t next();
    Category last_category() const { return last_cat_; }

  private:
    std::vector<std::vector<int64_t>> indices_;
    std::vector<double> cumulative_;
    std::vector<size_t> cursor_;
    Rng rng_;
    Category last_cat_ = Category::glyph_text;
};

struct ManifestEntry {
    int64_t index = 0;
    Category category = Category::shape_logo;
    std::string scene_path, mask_path, subject_path;
    uint64_t seed = 0;
};

void write_dataset(const SynthSpec& spec, int64_t start_index, int64_t count, const std::string& dir);
std::vector<ManifestEntry> read_manifest(const std::string& dir);
SamplePair load_pair(const std::string& dir, const ManifestEntry& entry);

}  // namespace sigil
