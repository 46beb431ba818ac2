#include "blindloss/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace blindloss {

namespace {

constexpr std::uint64_t kGeometryTag = 0xA11CE0FULL;
constexpr std::uint64_t kTextureTag = 0x7E47A6EULL;

const std::vector<std::array<double, 3>>& palette() {
    static const std::vector<std::array<double, 3>> colors{
        {0.22, 0.26, 0.32},  // background slate
        {0.80, 0.28, 0.24},  // red
        {0.28, 0.72, 0.34},  // green
        {0.30, 0.44, 0.82},  // blue
        {0.88, 0.78, 0.30},  // yellow
        {0.68, 0.36, 0.78},  // purple
        {0.34, 0.78, 0.78},  // cyan
        {0.92, 0.58, 0.28},  // orange
    };
    return colors;
}

double luminance(const double* px) { return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]; }

void apply_brightness(std::vector<double>& buf, double f) {
    if (f == 1.0) return;
    for (double& v : buf) v *= f;
}

void apply_contrast(std::vector<double>& buf, double f) {
    if (f == 1.0) return;
    double mean = 0;
    for (std::size_t i = 0; i < buf.size(); i += 3) mean += luminance(buf.data() + i);
    mean /= static_cast<double>(buf.size() / 3);
    for (double& v : buf) v = (v - mean) * f + mean;
}

void apply_saturation(std::vector<double>& buf, double f) {
    if (f == 1.0) return;
    for (std::size_t i = 0; i < buf.size(); i += 3) {
        const double g = luminance(buf.data() + i);
        for (int k = 0; k < 3; ++k) buf[i + static_cast<std::size_t>(k)] = g + (buf[i + static_cast<std::size_t>(k)] - g) * f;
    }
}

// Rotation about the gray axis (1,1,1)/sqrt(3).
void apply_hue(std::vector<double>& buf, double degrees) {
    if (degrees == 0.0) return;
    const double t = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(t), s = std::sin(t);
    const double a = c + (1.0 - c) / 3.0;
    const double b1 = (1.0 - c) / 3.0 - s / std::sqrt(3.0);
    const double b2 = (1.0 - c) / 3.0 + s / std::sqrt(3.0);
    const double m[3][3] = {{a, b1, b2}, {b2, a, b1}, {b1, b2, a}};
    for (std::size_t i = 0; i < buf.size(); i += 3) {
        const double r = buf[i], g = buf[i + 1], b = buf[i + 2];
        buf[i] = m[0][0] * r + m[0][1] * g + m[0][2] * b;
        buf[i + 1] = m[1][0] * r + m[1][1] * g + m[1][2] * b;
        buf[i + 2] = m[2][0] * r + m[2][1] * g + m[2][2] * b;
    }
}

void clamp01(std::vector<double>& buf) {
    for (double& v : buf) v = std::clamp(v, 0.0, 1.0);
}

void style_transform(std::vector<double>& buf, double brightness, double contrast, double saturation,
                     double hue_degrees) {
    apply_brightness(buf, brightness);
    apply_contrast(buf, contrast);
    apply_saturation(buf, saturation);
    apply_hue(buf, hue_degrees);
    clamp01(buf);
}

void stamp_rect(LabelMap& mask, int r0, int c0, int rh, int rw, int cls) {
    for (int r = std::max(0, r0); r < std::min(mask.height, r0 + rh); ++r)
        for (int c = std::max(0, c0); c < std::min(mask.width, c0 + rw); ++c) mask.at(r, c) = cls;
}

void stamp_ellipse(LabelMap& mask, double cr, double cc, double ra, double rb, int cls) {
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c) {
            const double dr = (r - cr) / ra, dc = (c - cc) / rb;
            if (dr * dr + dc * dc <= 1.0) mask.at(r, c) = cls;
        }
}

void stamp_band(LabelMap& mask, bool horizontal, int offset, int thickness, int cls) {
    if (horizontal) {
        stamp_rect(mask, offset, 0, thickness, mask.width, cls);
    } else {
        stamp_rect(mask, 0, offset, mask.height, thickness, cls);
    }
}

void stamp_random_shape(LabelMap& mask, int cls, Rng& rng) {
    const int h = mask.height, w = mask.width;
    switch (rng.below(3)) {
        case 0: {
            const int rh = h / 6 + rng.below(std::max(1, h / 3));
            const int rw = w / 6 + rng.below(std::max(1, w / 3));
            stamp_rect(mask, rng.below(h), rng.below(w), rh, rw, cls);
            break;
        }
        case 1: {
            const double ra = h / 8.0 + rng.uniform() * h / 4.0;
            const double rb = w / 8.0 + rng.uniform() * w / 4.0;
            stamp_ellipse(mask, rng.below(h), rng.below(w), ra, rb, cls);
            break;
        }
        default: {
            const bool horizontal = rng.below(2) == 0;
            const int extent = horizontal ? h : w;
            stamp_band(mask, horizontal, rng.below(extent), 2 + rng.below(std::max(1, extent / 6)),
                       cls);
        }
    }
}

std::set<int> classes_present(const LabelMap& mask) {
    return {mask.values.begin(), mask.values.end()};
}

// Reserved 3x3 slot per class, disjoint across classes, used only when a
// guaranteed class got fully occluded.
void slot_origin(int cls, int width, int& row, int& col) {
    const int per_row = std::max(1, (width - 1) / 4);
    row = 1 + 4 * (cls / per_row);
    col = 1 + 4 * (cls % per_row);
}

}  // namespace

StyleParams make_style(const std::string& name, int classes) {
    if (classes < 2) throw ContractViolation("make_style: needs at least 2 classes");
    if (classes > static_cast<int>(palette().size()))
        throw ContractViolation("make_style: class count exceeds the palette (" +
                                std::to_string(palette().size()) + ")");
    StyleParams style;
    style.id = name;
    style.class_colors.assign(palette().begin(), palette().begin() + classes);
    if (name == "source") {
        style.noise = 0.05;
    } else if (name == "mild") {
        style.hue_degrees = 15.0;
        style.contrast = 0.9;
        style.brightness = 1.1;
        style.saturation = 0.85;
        style.noise = 0.05;
    } else if (name == "shifted") {
        style.hue_degrees = 30.0;
        style.contrast = 0.8;
        style.brightness = 1.2;
        style.saturation = 0.65;
        style.noise = 0.05;
    } else {
        throw ContractViolation("make_style: unknown style '" + name + "'");
    }
    return style;
}

bool is_known_style(const std::string& name) {
    return name == "source" || name == "mild" || name == "shifted";
}

Scene generate_scene(std::uint64_t seed, int classes, int height, int width,
                     const StyleParams& style, double class_floor, double texture_amp) {
    if (classes < 2) throw ContractViolation("generate_scene: needs at least 2 classes");
    if (classes > static_cast<int>(style.class_colors.size()))
        throw ContractViolation("generate_scene: class count exceeds the style palette");
    if (height < 16 || width < 16 || height > 256 || width > 256)
        throw ContractViolation("generate_scene: size out of the supported range [16, 256]");
    if (style.contrast <= 0 || style.brightness <= 0 || style.saturation <= 0 || style.noise < 0)
        throw ContractViolation("generate_scene: invalid style parameters");
    if (texture_amp < 0) throw ContractViolation("generate_scene: texture amplitude must be >= 0");

    Scene scene;
    scene.seed = seed;
    scene.classes = classes;
    scene.class_floor = class_floor;
    scene.texture_amp = texture_amp;
    scene.style_id = style.id;
    scene.mask = LabelMap(height, width, 0);

    Rng geometry_rng(derive_seed(seed, kGeometryTag));
    std::vector<bool> guaranteed(static_cast<std::size_t>(classes), false);
    for (int cls = 0; cls < classes; ++cls)
        guaranteed[static_cast<std::size_t>(cls)] = geometry_rng.uniform() < class_floor;

    for (int cls = 1; cls < classes; ++cls)
        if (guaranteed[static_cast<std::size_t>(cls)]) stamp_random_shape(scene.mask, cls, geometry_rng);
    const int extras = geometry_rng.below(classes);
    for (int i = 0; i < extras; ++i)
        stamp_random_shape(scene.mask, 1 + geometry_rng.below(classes - 1), geometry_rng);

    // restore any guaranteed class that later shapes fully occluded
    for (int round = 0; round <= classes; ++round) {
        std::set<int> present = classes_present(scene.mask);
        bool stamped = false;
        for (int cls = 0; cls < classes; ++cls) {
            if (!guaranteed[static_cast<std::size_t>(cls)] || present.count(cls)) continue;
            int r0 = 0, c0 = 0;
            slot_origin(cls, width, r0, c0);
            if (r0 + 3 > height || c0 + 3 > width)
                throw ContractViolation("generate_scene: image too small for the class floor");
            stamp_rect(scene.mask, r0, c0, 3, 3, cls);
            stamped = true;
        }
        if (!stamped) break;
    }

    // render: base color + class-characteristic stripes (content, identical
    // across styles) + the style's own noise, then the style transform
    Rng texture_rng(derive_seed(seed, kTextureTag));
    std::vector<double> buf(static_cast<std::size_t>(height) * width * 3);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const int cls = scene.mask.at(r, c);
            const auto& base = style.class_colors[static_cast<std::size_t>(cls)];
            const double angle = 0.61803398875 * 2.0 * std::numbers::pi * (cls + 1);
            const double lambda = 4.0 + (cls % 5);
            const double stripe =
                texture_amp *
                std::sin((r * std::cos(angle) + c * std::sin(angle)) * 2.0 * std::numbers::pi / lambda);
            const double noise = style.noise * texture_rng.uniform(-1.0, 1.0);
            double* px = buf.data() + (static_cast<std::ptrdiff_t>(r) * width + c) * 3;
            for (int k = 0; k < 3; ++k) px[k] = base[static_cast<std::size_t>(k)] + stripe + noise;
        }
    }
    style_transform(buf, style.brightness, style.contrast, style.saturation, style.hue_degrees);
    scene.image = Tensor::from({height, width, 3}, std::move(buf));
    return scene;
}

Tensor color_jitter(const Tensor& image, double strength, Rng& rng) {
    if (!image.defined() || image.rank() != 3 || image.dim(2) != 3)
        throw ContractViolation("color_jitter: image must be (H, W, 3)");
    if (strength < 0.0 || strength > 1.0)
        throw ContractViolation("color_jitter: strength must be in [0, 1]");
    const double f = 0.8 * strength;
    const double brightness = rng.uniform(1.0 - f, 1.0 + f);
    const double contrast = rng.uniform(1.0 - f, 1.0 + f);
    const double saturation = rng.uniform(1.0 - f, 1.0 + f);
    const double hue = rng.uniform(-36.0 * strength, 36.0 * strength);

    std::vector<double> buf(image.data().begin(), image.data().end());
    style_transform(buf, brightness, contrast, saturation, hue);
    return Tensor::from(image.shape(), std::move(buf));
}

Scene domain_shift(const Scene& scene, const StyleParams& target_style) {
    return generate_scene(scene.seed, scene.classes, scene.mask.height, scene.mask.width, target_style,
                          scene.class_floor, scene.texture_amp);
}

// ---- corpus -----------------------------------------------------------------------

std::vector<CorpusEntry> build_corpus(const DataConfig& cfg) {
    if (cfg.train_scenes < 1 || cfg.eval_scenes < 1)
        throw ContractViolation("build_corpus: scene counts must be >= 1");
    if (!is_known_style(cfg.train_style) || !is_known_style(cfg.eval_style))
        throw ContractViolation("build_corpus: unknown style name");
    std::vector<CorpusEntry> entries;
    entries.reserve(static_cast<std::size_t>(cfg.train_scenes) + 2 * static_cast<std::size_t>(cfg.eval_scenes));
    for (int i = 0; i < cfg.train_scenes; ++i)
        entries.push_back({cfg.corpus_seed + static_cast<std::uint64_t>(i), cfg.train_style, "train"});
    for (int i = 0; i < cfg.eval_scenes; ++i)
        entries.push_back(
            {cfg.corpus_seed + 100000 + static_cast<std::uint64_t>(i), cfg.train_style, "eval"});
    // shifted-domain eval shares geometry seeds with the in-domain eval split
    for (int i = 0; i < cfg.eval_scenes; ++i)
        entries.push_back(
            {cfg.corpus_seed + 100000 + static_cast<std::uint64_t>(i), cfg.eval_style, "eval"});
    return entries;
}

std::string corpus_to_text(const std::vector<CorpusEntry>& entries) {
    std::ostringstream out;
    out << "# blindloss corpus v1\n# seed style split\n";
    for (const CorpusEntry& e : entries) out << e.seed << ' ' << e.style_id << ' ' << e.split << '\n';
    return out.str();
}

std::vector<CorpusEntry> corpus_from_text(const std::string& text) {
    std::vector<CorpusEntry> entries;
    std::istringstream in(text);
    std::string line;
    int line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        CorpusEntry e;
        if (!(fields >> e.seed >> e.style_id >> e.split) || (e.split != "train" && e.split != "eval"))
            throw ContractViolation("corpus_from_text: bad entry at line " +
                                    std::to_string(line_number) + ": '" + line + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

Scene realize(const CorpusEntry& entry, const DataConfig& cfg) {
    StyleParams style = make_style(entry.style_id, cfg.classes);
    return generate_scene(entry.seed, cfg.classes, cfg.height, cfg.width, style, cfg.class_floor,
                          cfg.texture_amp);
}

// ---- exports -------------------------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (!image.defined() || image.rank() != 3 || image.dim(2) != 3)
        throw ContractViolation("write_ppm: image must be (H, W, 3)");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("write_ppm: cannot open " + path.string());
    out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    for (double v : image.data()) {
        const int byte = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.put(static_cast<char>(byte));
    }
}

void write_pgm(const std::filesystem::path& path, const LabelMap& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("write_pgm: cannot open " + path.string());
    int max_label = 1;
    for (int v : mask.values) max_label = std::max(max_label, v);
    const int scale = 255 / max_label;
    out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    for (int v : mask.values) out.put(static_cast<char>(v * scale));
}

}  // namespace blindloss
