#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blindloss/label_map.hpp"
#include "blindloss/rng.hpp"
#include "blindloss/tensor.hpp"

namespace blindloss {

// Appearance factors of a rendering domain. Geometry is independent of the
// style, so re-rendering a seed under another style changes pixels only.
struct StyleParams {
    std::string id;
    std::vector<std::array<double, 3>> class_colors;
    double hue_degrees = 0.0;
    double contrast = 1.0;
    double brightness = 1.0;
    double saturation = 1.0;
    double noise = 0.0;  // additive texture-noise amplitude
};

// Named presets: "source" (training domain), "mild" and "shifted" (unseen
// evaluation domains of increasing severity).
StyleParams make_style(const std::string& name, int classes);
bool is_known_style(const std::string& name);

struct Scene {
    Tensor image;  // H x W x 3 in [0, 1]
    LabelMap mask;
    std::string style_id;
    std::uint64_t seed = 0;
    int classes = 0;
    double class_floor = 1.0;
    double texture_amp = 0.0;
};

// Layered composition of random rectangles, ellipses and bands over a
// background class. With class_floor = 1 every class is guaranteed to appear.
// Each class carries a characteristic stripe texture of amplitude
// `texture_amp` (content: identical in every style), on top of which the
// style adds its own noise and color transform. Deterministic per
// (seed, style).
Scene generate_scene(std::uint64_t seed, int classes, int height, int width,
                     const StyleParams& style, double class_floor = 1.0, double texture_amp = 0.15);

// Random brightness/contrast/saturation in [1 - 0.8s, 1 + 0.8s] and hue
// rotation in [-36 deg * s, +36 deg * s], clamped to [0, 1]. The mask is the
// caller's to keep: augmentation never touches labels.
Tensor color_jitter(const Tensor& image, double strength, Rng& rng);

// Re-renders the scene's geometry under another style; the mask is identical.
Scene domain_shift(const Scene& scene, const StyleParams& target_style);

// ---- corpus ------------------------------------------------------------------

struct DataConfig {
    int classes = 5;
    int height = 32;
    int width = 32;
    int train_scenes = 256;
    int eval_scenes = 64;
    double class_floor = 1.0;
    double texture_amp = 0.15;
    double jitter_strength = 1.0;
    std::string train_style = "source";
    std::string eval_style = "shifted";
    std::uint64_t corpus_seed = 9000;
};

struct CorpusEntry {
    std::uint64_t seed = 0;
    std::string style_id;
    std::string split;  // "train" or "eval"
};

// Deterministic manifest: train scenes in the train style, eval scenes listed
// both in the train style (in-domain) and the eval style (shifted domain),
// sharing geometry seeds so comparisons are paired.
std::vector<CorpusEntry> build_corpus(const DataConfig& cfg);

std::string corpus_to_text(const std::vector<CorpusEntry>& entries);
std::vector<CorpusEntry> corpus_from_text(const std::string& text);

Scene realize(const CorpusEntry& entry, const DataConfig& cfg);

// Inspection exports: binary PPM (P6) for images, PGM (P5) for masks.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
void write_pgm(const std::filesystem::path& path, const LabelMap& mask);

}  // namespace blindloss
