#pragma once

// Deterministic synthetic paired datasets.
//
// CD25_SYNTH: each category is a procedural texture family; a pair is valid
// when the output's category is the one the pairing relation assigns to the
// input's category.
//
// SEG_SYNTH: an image of foreground shapes on a textured background paired
// with a binary mask; negatives are masks that disagree with the image. For
// SEG_SYNTH samples, category_out records the corruption applied (0 = none).

#include "iorm/nn.hpp"

#include <algorithm>
#include <numeric>
#include <span>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace iorm {

enum class DatasetKind : std::uint8_t { CD25_SYNTH = 0, SEG_SYNTH = 1 };

enum class Corruption : std::uint8_t { None = 0, Translate, DilateErode, DropShape, PhantomShape, ThresholdNoise };

inline std::string to_string(DatasetKind k) { return k == DatasetKind::CD25_SYNTH ? "cd25" : "seg"; }

inline std::string to_string(Corruption c) {
    switch (c) {
    case Corruption::None: return "none";
    case Corruption::Translate: return "translate";
    case Corruption::DilateErode: return "dilate-erode";
    case Corruption::DropShape: return "drop-shape";
    case Corruption::PhantomShape: return "phantom-shape";
    case Corruption::ThresholdNoise: return "threshold-noise";
    }
    return "unknown";
}

inline Corruption corruption_from_string(const std::string& s) {
    for (auto c : {Corruption::Translate, Corruption::DilateErode, Corruption::DropShape, Corruption::PhantomShape,
                   Corruption::ThresholdNoise}) {
        if (to_string(c) == s) return c;
    }
    throw ConfigError("unknown corruption '" + s + "'");
}

enum class PairingRelation { Identity, Permuted };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::CD25_SYNTH;
    std::size_t num_categories = 5;
    std::size_t num_samples = 1000;
    std::size_t image_size = 32;
    std::vector<Corruption> corruption_menu{Corruption::Translate, Corruption::DilateErode, Corruption::DropShape,
                                            Corruption::PhantomShape, Corruption::ThresholdNoise};
    double train_fraction = 0.8;
    std::uint64_t master_seed = 0;
    PairingRelation relation = PairingRelation::Identity;

    std::size_t train_count() const {
        return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(num_samples)));
    }

    void validate() const {
        if (kind == DatasetKind::CD25_SYNTH && num_categories < 2)
            throw ConfigError("cd25 needs at least two categories");
        if (image_size < 8) throw ConfigError("image size must be at least 8");
        if (kind == DatasetKind::SEG_SYNTH && corruption_menu.empty())
            throw ConfigError("seg dataset needs a non-empty corruption menu");
        if (train_fraction < 0.0 || train_fraction > 1.0) throw ConfigError("train fraction outside [0, 1]");
    }
};

/// One (input, output, label) record. Images are planar [3, S, S] in [0, 1].
struct PairSample {
    std::vector<float> input_image;
    std::vector<float> output_image;
    std::uint8_t label = 0;
    std::uint64_t seed = 0;
    std::uint16_t category_in = 0;
    std::uint16_t category_out = 0;
    std::size_t image_size = 0;

    bool has_input() const { return !input_image.empty(); }
    friend bool operator==(const PairSample&, const PairSample&) = default;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t sample_seed(const DatasetSpec& spec, std::size_t index) {
    return splitmix64(spec.master_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

/// relation[k] = the output category that makes an input of category k valid.
inline std::vector<std::size_t> pairing_relation(const DatasetSpec& spec) {
    std::vector<std::size_t> rel(spec.num_categories);
    for (std::size_t k = 0; k < rel.size(); ++k) rel[k] = k;
    if (spec.relation == PairingRelation::Permuted) {
        Rng rng(splitmix64(spec.master_seed ^ 0xC0FFEEull));
        // a derangement, so no category maps to itself
        do {
            std::shuffle(rel.begin(), rel.end(), rng);
        } while ([&] {
            for (std::size_t k = 0; k < rel.size(); ++k)
                if (rel[k] == k) return true;
            return false;
        }());
    }
    return rel;
}

namespace detail {

inline std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

/// Family parameters of one procedural texture category.
struct TextureFamily {
    int pattern;   // 0 grating, 1 checker, 2 rings
    double freq;   // cycles per image
    double angle;  // radians
    std::array<float, 3> color_a;
    std::array<float, 3> color_b;
};

inline TextureFamily texture_family(std::uint64_t master_seed, std::size_t category, std::size_t num_categories) {
    Rng rng(splitmix64(master_seed ^ (0xFA111E5ull + category)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TextureFamily f;
    f.pattern = static_cast<int>(category % 3);
    f.freq = 2.0 + 4.0 * u(rng);
    f.angle = std::numbers::pi * (static_cast<double>(category) + 0.3 * u(rng)) / static_cast<double>(num_categories);
    const double hue = (static_cast<double>(category) + 0.25 * u(rng)) / static_cast<double>(num_categories);
    f.color_a = hsv_to_rgb(hue, 0.7 + 0.3 * u(rng), 0.85 + 0.15 * u(rng));
    f.color_b = hsv_to_rgb(hue + 0.5, 0.3 + 0.4 * u(rng), 0.15 + 0.25 * u(rng));
    return f;
}

inline std::vector<float> render_texture(const TextureFamily& fam, std::size_t size, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const double angle = fam.angle + 0.2 * (u(rng) - 0.5);
    const double freq = fam.freq * (0.9 + 0.2 * u(rng));
    const double cx = 0.3 + 0.4 * u(rng), cy = 0.3 + 0.4 * u(rng);
    std::array<double, 3> jitter{};
    for (auto& j : jitter) j = 0.1 * (u(rng) - 0.5);
    const double ca = std::cos(angle), sa = std::sin(angle);
    std::vector<float> img(3 * size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) / static_cast<double>(size);
            const double py = static_cast<double>(y) / static_cast<double>(size);
            double v = 0;
            const double along = px * ca + py * sa;
            const double across = -px * sa + py * ca;
            switch (fam.pattern) {
            case 0: v = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * freq * along + phase); break;
            case 1:
                v = 0.5 + 0.5 * std::tanh(4.0 * std::sin(2 * std::numbers::pi * freq * 0.5 * along + phase) *
                                          std::sin(2 * std::numbers::pi * freq * 0.5 * across + phase));
                break;
            default: v = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * freq * std::hypot(px - cx, py - cy) + phase); break;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double col = fam.color_a[c] * v + fam.color_b[c] * (1.0 - v) + jitter[c] + noise(rng);
                img[(c * size + y) * size + x] = clamp01(col);
            }
        }
    return img;
}

enum class ShapeType { Ellipse, Rectangle, Blob };

struct Shape2D {
    ShapeType type;
    double cx, cy, rx, ry;
    std::array<std::array<double, 3>, 3> lobes; // blob lobes: (dx, dy, r)

    bool contains(double x, double y) const {
        switch (type) {
        case ShapeType::Ellipse: {
            const double dx = (x - cx) / rx, dy = (y - cy) / ry;
            return dx * dx + dy * dy <= 1.0;
        }
        case ShapeType::Rectangle: return std::fabs(x - cx) <= rx && std::fabs(y - cy) <= ry;
        case ShapeType::Blob:
            for (const auto& l : lobes) {
                const double dx = x - (cx + l[0]), dy = y - (cy + l[1]);
                if (dx * dx + dy * dy <= l[2] * l[2]) return true;
            }
            return false;
        }
        return false;
    }

    double extent() const { return std::max(rx, ry); }

    bool inside(double size) const {
        const double e = extent();
        return cx - e >= 0 && cy - e >= 0 && cx + e <= size && cy + e <= size;
    }

    Shape2D moved(double dx, double dy) const {
        Shape2D s = *this;
        s.cx += dx;
        s.cy += dy;
        return s;
    }
};

inline std::vector<std::uint8_t> rasterize(const std::vector<Shape2D>& shapes, std::size_t size) {
    std::vector<std::uint8_t> m(size * size, 0);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (const auto& s : shapes)
                if (s.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
                    m[y * size + x] = 1;
                    break;
                }
    return m;
}

/// Shapes keep `margin` pixels clear of every border.
inline Shape2D random_shape(std::size_t size, double margin, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double s = static_cast<double>(size);
    Shape2D sh{};
    sh.type = static_cast<ShapeType>(static_cast<int>(u(rng) * 3.0) % 3);
    sh.rx = s * (0.09 + 0.08 * u(rng));
    sh.ry = s * (0.09 + 0.08 * u(rng));
    const double ext = std::max(sh.rx, sh.ry);
    const double lo = margin + ext, hi = s - margin - ext;
    sh.cx = lo + (hi - lo) * u(rng);
    sh.cy = lo + (hi - lo) * u(rng);
    for (auto& l : sh.lobes) {
        const double a = 2 * std::numbers::pi * u(rng);
        l = {0.4 * ext * std::cos(a), 0.4 * ext * std::sin(a), 0.6 * ext};
    }
    return sh;
}

inline double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] & b[i];
        uni += a[i] | b[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::vector<std::uint8_t> morph(const std::vector<std::uint8_t>& m, std::size_t size, int radius, bool dilate) {
    std::vector<std::uint8_t> out(m.size());
    const long n = static_cast<long>(size);
    for (long y = 0; y < n; ++y)
        for (long x = 0; x < n; ++x) {
            bool any = false, all = true;
            for (long dy = -radius; dy <= radius; ++dy)
                for (long dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    const long yy = y + dy, xx = x + dx;
                    const bool v = yy >= 0 && yy < n && xx >= 0 && xx < n && m[static_cast<std::size_t>(yy * n + xx)];
                    any = any || v;
                    all = all && v;
                }
            out[static_cast<std::size_t>(y * n + x)] = dilate ? any : all;
        }
    return out;
}

inline std::vector<float> render_scene(const std::vector<Shape2D>& shapes, std::size_t size, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);
    // dark, low-contrast background texture
    const double bg_hue = u(rng);
    const auto bg_a = hsv_to_rgb(bg_hue, 0.4 + 0.3 * u(rng), 0.15 + 0.1 * u(rng));
    const auto bg_b = hsv_to_rgb(bg_hue + 0.1, 0.3 + 0.3 * u(rng), 0.05 + 0.1 * u(rng));
    const double freq = 2.0 + 4.0 * u(rng), angle = std::numbers::pi * u(rng), phase = 2 * std::numbers::pi * u(rng);
    std::vector<std::array<float, 3>> fg(shapes.size());
    for (auto& c : fg) c = hsv_to_rgb(u(rng), 0.2 + 0.5 * u(rng), 0.85 + 0.15 * u(rng));
    std::vector<float> img(3 * size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const double s = static_cast<double>(size);
            const double v = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * freq *
                                                      (px / s * std::cos(angle) + py / s * std::sin(angle)) + phase);
            std::array<double, 3> col{};
            for (std::size_t c = 0; c < 3; ++c) col[c] = bg_a[c] * v + bg_b[c] * (1 - v);
            for (std::size_t k = 0; k < shapes.size(); ++k)
                if (shapes[k].contains(px, py)) {
                    for (std::size_t c = 0; c < 3; ++c) col[c] = fg[k][c];
                    break;
                }
            for (std::size_t c = 0; c < 3; ++c) img[(c * size + y) * size + x] = clamp01(col[c] + noise(rng));
        }
    return img;
}

inline std::vector<float> mask_planes(const std::vector<std::uint8_t>& m) {
    std::vector<float> out(3 * m.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < m.size(); ++i) out[c * m.size() + i] = m[i] ? 1.0f : 0.0f;
    return out;
}

} // namespace detail

inline void require_index(const DatasetSpec& spec, std::size_t index) {
    if (index >= spec.num_samples)
        throw ContractError("sample index " + std::to_string(index) + " outside dataset of " +
                            std::to_string(spec.num_samples));
}

/// Sample labels alternate with the index, which keeps every prefix balanced.
inline std::uint8_t label_for_index(std::size_t index) { return index % 2 == 0 ? 1 : 0; }

inline PairSample gen_cd25_pair(const DatasetSpec& spec, std::size_t index) {
    require_index(spec, index);
    PairSample s;
    s.seed = sample_seed(spec, index);
    s.image_size = spec.image_size;
    s.label = label_for_index(index);
    Rng rng(s.seed);
    const auto rel = pairing_relation(spec);
    const std::size_t k = spec.num_categories;
    const std::size_t cin = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    std::size_t cout = rel[cin];
    if (!s.label) {
        // uniform over the k-1 categories the relation does not assign
        const std::size_t r = std::uniform_int_distribution<std::size_t>(0, k - 2)(rng);
        cout = r < rel[cin] ? r : r + 1;
    }
    s.category_in = static_cast<std::uint16_t>(cin);
    s.category_out = static_cast<std::uint16_t>(cout);
    s.input_image = detail::render_texture(detail::texture_family(spec.master_seed, cin, k), spec.image_size, rng);
    s.output_image = detail::render_texture(detail::texture_family(spec.master_seed, cout, k), spec.image_size, rng);
    return s;
}

/// A segmentation pair together with the ground-truth foreground of its input.
struct SegPair {
    PairSample sample;
    std::vector<std::uint8_t> foreground; // input's true mask
    std::vector<std::uint8_t> mask;       // the output mask
    Corruption corruption = Corruption::None;
};

inline SegPair gen_seg_pair_detailed(const DatasetSpec& spec, std::size_t index) {
    require_index(spec, index);
    const std::size_t S = spec.image_size;
    const double s = static_cast<double>(S);
    SegPair out;
    PairSample& p = out.sample;
    p.seed = sample_seed(spec, index);
    p.image_size = S;
    p.label = label_for_index(index);
    Rng rng(p.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    // Every sample draws a layout together with a translation that keeps the
    // moved shapes inside the frame. Only translate negatives apply it, so the
    // mask distribution does not depend on the label.
    const double min_shift = std::ceil(0.20 * s);
    const double max_shift = std::ceil(0.30 * s);
    std::vector<detail::Shape2D> mask_shapes, moved_shapes;
    for (int attempt = 0;; ++attempt) {
        mask_shapes.clear();
        moved_shapes.clear();
        const std::size_t count = 1 + static_cast<std::size_t>(u(rng) * 3.0) % 3;
        for (std::size_t i = 0; i < count; ++i) mask_shapes.push_back(detail::random_shape(S, 1.0, rng));
        bool fits = false;
        for (int t = 0; t < 16 && !fits; ++t) {
            const double mag = min_shift + (max_shift - min_shift) * u(rng);
            const double ang = 2 * std::numbers::pi * u(rng);
            const double dx = std::round(mag * std::cos(ang)), dy = std::round(mag * std::sin(ang));
            if (std::hypot(dx, dy) < min_shift) continue;
            moved_shapes.clear();
            fits = true;
            for (const auto& sh : mask_shapes) {
                moved_shapes.push_back(sh.moved(-dx, -dy));
                fits = fits && moved_shapes.back().inside(s);
            }
            fits = fits && detail::iou(detail::rasterize(moved_shapes, S), detail::rasterize(mask_shapes, S)) < 0.8;
        }
        if (fits || attempt > 256) break;
    }
    std::vector<detail::Shape2D> input_shapes = mask_shapes;

    out.corruption = Corruption::None;
    if (!p.label) out.corruption = spec.corruption_menu[std::uniform_int_distribution<std::size_t>(
                      0, spec.corruption_menu.size() - 1)(rng)];
    std::vector<std::uint8_t> mask = detail::rasterize(mask_shapes, S);

    switch (out.corruption) {
    case Corruption::None: break;
    case Corruption::Translate:
        // the mask keeps its layout and the image content moves
        input_shapes = moved_shapes;
        break;
    case Corruption::DropShape: {
        // the image carries one more shape than the mask shows
        for (int attempt = 0;; ++attempt) {
            const auto extra = detail::random_shape(S, 1.0, rng);
            auto with_extra = mask_shapes;
            with_extra.push_back(extra);
            const auto fg = detail::rasterize(with_extra, S);
            if (detail::iou(fg, mask) < 0.8 || attempt > 64) {
                input_shapes = std::move(with_extra);
                break;
            }
        }
        break;
    }
    case Corruption::DilateErode: {
        const bool dilate = u(rng) < 0.5;
        mask = detail::morph(mask, S, 3, dilate);
        break;
    }
    case Corruption::PhantomShape: {
        for (int attempt = 0;; ++attempt) {
            auto with_phantom = mask_shapes;
            // crowded scenes get progressively larger phantoms
            auto extra = detail::random_shape(S, 0.0, rng);
            const double grow = 1.0 + 0.1 * attempt;
            extra.rx *= grow;
            extra.ry *= grow;
            with_phantom.push_back(extra);
            auto phantom = detail::rasterize(with_phantom, S);
            if (detail::iou(phantom, mask) < 0.8 || attempt > 64) {
                mask = std::move(phantom);
                break;
            }
        }
        break;
    }
    case Corruption::ThresholdNoise: {
        const std::size_t need = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(mask.size())));
        std::vector<std::size_t> order(mask.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t flips = need + static_cast<std::size_t>(u(rng) * static_cast<double>(need));
        for (std::size_t i = 0; i < flips; ++i) mask[order[i]] ^= 1;
        break;
    }
    }

    out.foreground = detail::rasterize(input_shapes, S);
    out.mask = mask;
    p.input_image = detail::render_scene(input_shapes, S, rng);
    p.output_image = detail::mask_planes(mask);
    p.category_in = static_cast<std::uint16_t>(input_shapes.size());
    p.category_out = static_cast<std::uint16_t>(out.corruption);
    return out;
}

inline PairSample gen_seg_pair(const DatasetSpec& spec, std::size_t index) {
    return gen_seg_pair_detailed(spec, index).sample;
}

inline PairSample generate_sample(const DatasetSpec& spec, std::size_t index) {
    return spec.kind == DatasetKind::CD25_SYNTH ? gen_cd25_pair(spec, index) : gen_seg_pair(spec, index);
}

inline std::vector<PairSample> generate_range(const DatasetSpec& spec, std::size_t begin, std::size_t end) {
    spec.validate();
    std::vector<PairSample> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(generate_sample(spec, i));
    return out;
}

/// Train split is indices [0, train_count), validation the rest.
struct DatasetSplit {
    std::vector<PairSample> train;
    std::vector<PairSample> val;
};

inline DatasetSplit generate_split(const DatasetSpec& spec) {
    const std::size_t n_train = spec.train_count();
    return {generate_range(spec, 0, n_train), generate_range(spec, n_train, spec.num_samples)};
}

inline DatasetSplit split_samples(std::vector<PairSample> all, double train_fraction) {
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(all.size())));
    DatasetSplit s;
    s.val.assign(std::make_move_iterator(all.begin() + static_cast<long>(n_train)), std::make_move_iterator(all.end()));
    all.resize(n_train);
    s.train = std::move(all);
    return s;
}

/// The output-only view of a paired corpus.
inline std::vector<PairSample> strip_inputs(std::vector<PairSample> samples) {
    for (auto& s : samples) s.input_image.clear();
    return samples;
}

// --- batching and mixup ------------------------------------------------------

/// Model-ready batch: images [B,3,S,S] and soft targets [B,2].
template <typename T>
struct Batch {
    Tensor<T> x_in; // undefined when the samples carry no input image
    Tensor<T> x_out;
    Tensor<T> targets;
    std::size_t size() const { return targets.dim(0); }
};

template <typename T>
Batch<T> make_batch(const std::vector<PairSample>& samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ContractError("empty batch");
    const std::size_t s = samples[indices[0]].image_size;
    const std::size_t plane = 3 * s * s;
    const bool with_input = samples[indices[0]].has_input();
    std::vector<T> xin(with_input ? indices.size() * plane : 0), xout(indices.size() * plane),
        tgt(indices.size() * 2, T{0});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const PairSample& p = samples[indices[b]];
        if (p.image_size != s || p.has_input() != with_input) throw ContractError("heterogeneous batch");
        if (with_input) std::copy(p.input_image.begin(), p.input_image.end(), xin.begin() + static_cast<long>(b * plane));
        std::copy(p.output_image.begin(), p.output_image.end(), xout.begin() + static_cast<long>(b * plane));
        tgt[b * 2 + p.label] = T{1};
    }
    const std::size_t n = indices.size();
    Batch<T> batch;
    if (with_input) batch.x_in = Tensor<T>({n, 3, s, s}, std::move(xin));
    batch.x_out = Tensor<T>({n, 3, s, s}, std::move(xout));
    batch.targets = Tensor<T>({n, 2}, std::move(tgt));
    return batch;
}

template <typename T>
Batch<T> make_batch(const std::vector<PairSample>& samples) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return make_batch<T>(samples, idx);
}

/// λ ~ Beta(α, α) via two gamma draws.
inline double sample_beta(double alpha, Rng& rng) {
    std::gamma_distribution<double> g(alpha, 1.0);
    const double a = g(rng), b = g(rng);
    return a + b > 0 ? a / (a + b) : 0.5;
}

/// λ·x + (1−λ)·x[partner] with the same λ on inputs, outputs and targets.
template <typename T>
Batch<T> mixup_with(const Batch<T>& batch, double lambda, const std::vector<std::size_t>& partner) {
    if (batch.size() < 2) throw ContractError("mixup needs a batch of at least two samples");
    if (partner.size() != batch.size()) throw ContractError("mixup partner count mismatch");
    const T lam = static_cast<T>(lambda);
    auto mix = [&](const Tensor<T>& x) {
        if (!x.defined()) return x;
        const std::size_t per = x.numel() / batch.size();
        std::vector<T> out(x.numel());
        for (std::size_t b = 0; b < batch.size(); ++b)
            for (std::size_t i = 0; i < per; ++i)
                out[b * per + i] = lam * x.data()[b * per + i] + (T{1} - lam) * x.data()[partner[b] * per + i];
        return Tensor<T>(x.shape(), std::move(out));
    };
    return {mix(batch.x_in), mix(batch.x_out), mix(batch.targets)};
}

template <typename T>
Batch<T> mixup(const Batch<T>& batch, double alpha, Rng& rng) {
    if (batch.size() < 2) throw ContractError("mixup needs a batch of at least two samples");
    if (!(alpha > 0.0)) throw ContractError("mixup alpha must be positive");
    const double lambda = sample_beta(alpha, rng);
    std::vector<std::size_t> partner(batch.size());
    std::iota(partner.begin(), partner.end(), std::size_t{0});
    std::shuffle(partner.begin(), partner.end(), rng);
    return mixup_with(batch, lambda, partner);
}

} // namespace iorm
