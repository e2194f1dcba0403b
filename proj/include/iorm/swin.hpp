#pragma once

// Hierarchical windowed-cosine-attention encoder exporting five taps:
// S1 = patch embedding, S2..S5 = outputs of the four stages.

#include "iorm/attention.hpp"

#include <array>
#include <string>

namespace iorm {

enum class StageTag { S1 = 0, S2, S3, S4, S5 };

inline std::string to_string(StageTag t) { return "S" + std::to_string(static_cast<int>(t) + 1); }

struct EncoderConfig {
    std::size_t in_channels = 3;
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t embed_dim = 16;
    std::vector<std::size_t> depths{1, 1, 2, 1};
    std::vector<std::size_t> num_heads{1, 2, 4, 4};
    std::size_t window_size = 4;
    std::size_t mlp_ratio = 4;
    double drop_path = 0.0;
    double pixel_mean = 0.5; // images enter the encoder as (x - mean) / std
    double pixel_std = 0.5;

    std::size_t grid() const { return image_size / patch_size; }

    void validate() const {
        if (depths.size() != 4 || num_heads.size() != 4)
            throw ConfigError("encoder needs exactly four stages of depths and heads");
        if (in_channels == 0 || patch_size == 0 || embed_dim == 0 || window_size == 0)
            throw ConfigError("encoder extents must be positive");
        if (image_size % patch_size)
            throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide image size " +
                              std::to_string(image_size));
        if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("drop_path must lie in [0, 1)");
        if (!(pixel_std > 0.0)) throw ConfigError("pixel_std must be positive");
    }
};

/// Spatial token grid of one encoder tap, with a leading batch axis.
template <typename T>
struct FeatureMap {
    Tensor<T> data; // [B, H, W, C]
    StageTag tag = StageTag::S1;

    std::size_t batch() const { return data.dim(0); }
    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
    std::size_t channels() const { return data.dim(3); }
};

struct TapShape {
    StageTag tag;
    std::size_t side;
    std::size_t channels;
};

/// Geometry of one encoder stage: token grid, width, attention window, and
/// whether a patch merge follows it.
struct StageLayout {
    std::size_t side;
    std::size_t channels;
    std::size_t window;
    bool shift_alternate;
    bool merge_after;
};

/// Stage k runs at the grid it receives; a merge follows every stage but the
/// last while the grid side is at least 4 (so merging never produces a 1×1
/// grid). The window is clamped to the grid side, and shifting is disabled
/// once one window covers the grid.
inline std::vector<StageLayout> stage_layouts(const EncoderConfig& cfg) {
    cfg.validate();
    std::vector<StageLayout> out;
    std::size_t side = cfg.grid();
    std::size_t ch = cfg.embed_dim;
    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t win = std::min(cfg.window_size, side);
        if (side % win)
            throw ConfigError("window " + std::to_string(win) + " does not divide stage " + std::to_string(k + 1) +
                              " grid side " + std::to_string(side));
        if (ch % cfg.num_heads[k])
            throw ConfigError("stage " + std::to_string(k + 1) + " width " + std::to_string(ch) +
                              " not divisible by heads");
        const bool merge = k < 3 && side >= 4;
        out.push_back({side, ch, win, side > win, merge});
        if (merge) {
            side /= 2;
            ch *= 2;
        }
    }
    return out;
}

inline std::array<TapShape, 5> tap_shapes(const EncoderConfig& cfg) {
    const auto st = stage_layouts(cfg);
    std::array<TapShape, 5> taps{};
    taps[0] = {StageTag::S1, cfg.grid(), cfg.embed_dim};
    for (std::size_t k = 0; k < 4; ++k) taps[k + 1] = {static_cast<StageTag>(k + 1), st[k].side, st[k].channels};
    return taps;
}

/// Patch gather for an image batch [B,C,H,W] → [B, H/p, W/p, C·p·p], features
/// ordered (channel, row, col) within a patch.
inline std::vector<std::size_t> image_patch_index(std::size_t b, std::size_t c, std::size_t h, std::size_t w,
                                                  std::size_t p) {
    std::vector<std::size_t> idx;
    idx.reserve(b * c * h * w);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t gy = 0; gy < h / p; ++gy)
            for (std::size_t gx = 0; gx < w / p; ++gx)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t py = 0; py < p; ++py)
                        for (std::size_t px = 0; px < p; ++px)
                            idx.push_back(((n * c + ch) * h + gy * p + py) * w + gx * p + px);
    return idx;
}

/// Patch gather for a token grid [B,H,W,C] → [B, H/p, W/p, p·p·C], features
/// ordered (row, col, channel).
inline std::vector<std::size_t> grid_patch_index(std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                                                 std::size_t p) {
    std::vector<std::size_t> idx;
    idx.reserve(b * h * w * c);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t gy = 0; gy < h / p; ++gy)
            for (std::size_t gx = 0; gx < w / p; ++gx)
                for (std::size_t py = 0; py < p; ++py)
                    for (std::size_t px = 0; px < p; ++px)
                        for (std::size_t ch = 0; ch < c; ++ch)
                            idx.push_back(((n * h + gy * p + py) * w + gx * p + px) * c + ch);
    return idx;
}

/// 2×2 neighbourhood gather [B,H,W,C] → [B,H/2,W/2,4C] in the order
/// (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
inline std::vector<std::size_t> merge_index(std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
    static constexpr std::size_t dy[4] = {0, 1, 0, 1};
    static constexpr std::size_t dx[4] = {0, 0, 1, 1};
    std::vector<std::size_t> idx;
    idx.reserve(b * h * w * c);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t x = 0; x < w / 2; ++x)
                for (std::size_t q = 0; q < 4; ++q)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        idx.push_back(((n * h + 2 * y + dy[q]) * w + 2 * x + dx[q]) * c + ch);
    return idx;
}

/// Non-overlapping patch projection followed by layernorm.
template <typename T>
struct PatchEmbed {
    Linear<T> proj;
    LayerNorm<T> norm;
    std::size_t in_channels = 0;
    std::size_t patch = 1;

    PatchEmbed() = default;
    PatchEmbed(std::size_t channels, std::size_t patch_size, std::size_t dim, Rng& rng)
        : proj(channels * patch_size * patch_size, dim, rng), norm(dim), in_channels(channels), patch(patch_size) {}

    /// images: [B,C,H,W] or [C,H,W].
    FeatureMap<T> embed_image(const Tensor<T>& images, std::size_t expected_size) const {
        const Tensor<T> x = images.rank() == 3 ? reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)})
                                                : images;
        if (x.rank() != 4 || x.dim(1) != in_channels || x.dim(2) != expected_size || x.dim(3) != expected_size)
            throw ConfigError("image " + shape_str(images.shape()) + " does not match encoder (" +
                              std::to_string(in_channels) + " channels, " + std::to_string(expected_size) + " px)");
        const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const Tensor<T> patches =
            gather(x, image_patch_index(b, c, h, w, patch), {b, h / patch, w / patch, c * patch * patch}, "patchify");
        return {norm(proj(patches)), StageTag::S1};
    }

    /// Re-embeds a token grid [B,H,W,C] with p×p patches.
    Tensor<T> embed_grid(const Tensor<T>& x) const {
        const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
        if (h % patch || w % patch || c * patch * patch != proj.in_features())
            throw WiringError("patch embedding of grid " + shape_str(x.shape()) + " with patch " +
                              std::to_string(patch));
        return norm(proj(gather(x, grid_patch_index(b, h, w, c, patch), {b, h / patch, w / patch, c * patch * patch},
                                "patchify_grid")));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        proj.collect(out, prefix + ".proj");
        norm.collect(out, prefix + ".norm");
    }
};

/// 2×2 concatenation, projection 4C → 2C, layernorm.
template <typename T>
struct PatchMerge {
    Linear<T> reduction;
    LayerNorm<T> norm;

    PatchMerge() = default;
    PatchMerge(std::size_t dim, Rng& rng) : reduction(4 * dim, 2 * dim, rng, false), norm(2 * dim) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) % 2 || x.dim(2) % 2)
            throw ConfigError("patch merge needs even grid extents, got " + shape_str(x.shape()));
        const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
        return norm(reduction(gather(x, merge_index(b, h, w, c), {b, h / 2, w / 2, 4 * c}, "merge_gather")));
    }

    FeatureMap<T> operator()(const FeatureMap<T>& x) const { return {(*this)(x.data), x.tag}; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        reduction.collect(out, prefix + ".reduction");
        norm.collect(out, prefix + ".norm");
    }
};

/// Attention + MLP block in post-norm order: x ← LN(x + f(x)) for each sub-layer.
template <typename T>
struct SwinBlock {
    WindowAttentionParams<T> attn;
    LayerNorm<T> norm1;
    Mlp<T> mlp;
    LayerNorm<T> norm2;
    std::size_t window = 1;
    bool shifted = false;

    SwinBlock() = default;
    SwinBlock(std::size_t dim, std::size_t heads, std::size_t table_window, std::size_t win, bool shift,
              std::size_t mlp_ratio, Rng& rng)
        : attn(dim, heads, table_window, rng), norm1(dim), mlp(dim, dim * mlp_ratio, dim, rng), norm2(dim),
          window(win), shifted(shift) {}

    Tensor<T> operator()(const Tensor<T>& x, double drop_rate = 0.0, Rng* rng = nullptr) const {
        const Tensor<T> a = windowed_cosine_attention(attn, x, x, x, window, shifted);
        const Tensor<T> y = norm1(add(x, drop_path(a, drop_rate, rng)));
        return norm2(add(y, drop_path(mlp(y), drop_rate, rng)));
    }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        attn.collect(out, prefix + ".attn");
        norm1.collect(out, prefix + ".norm1");
        mlp.collect(out, prefix + ".mlp");
        norm2.collect(out, prefix + ".norm2");
    }
};

/// Window self-attention on a feature map (no residual or norm).
template <typename T>
FeatureMap<T> window_self_attention(const FeatureMap<T>& x, const WindowAttentionParams<T>& p, bool shifted,
                                    std::size_t window) {
    return {windowed_cosine_attention(p, x.data, x.data, x.data, window, shifted), x.tag};
}

template <typename T>
using Taps = std::array<FeatureMap<T>, 5>;

template <typename T>
class SwinEncoder {
public:
    SwinEncoder() = default;
    SwinEncoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        const auto layout = stage_layouts(cfg_);
        embed_ = PatchEmbed<T>(cfg_.in_channels, cfg_.patch_size, cfg_.embed_dim, rng);
        stages_.resize(4);
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& st = layout[k];
            for (std::size_t i = 0; i < cfg_.depths[k]; ++i) {
                stages_[k].emplace_back(st.channels, cfg_.num_heads[k], cfg_.window_size, st.window,
                                        st.shift_alternate && (i % 2 == 1), cfg_.mlp_ratio, rng);
            }
            if (st.merge_after) merges_.emplace_back(PatchMerge<T>(st.channels, rng));
            else merges_.emplace_back();
            merge_after_.push_back(st.merge_after);
        }
    }

    const EncoderConfig& config() const { return cfg_; }

    /// Enables stochastic depth during training; pass nullptr to disable.
    void set_drop_rng(Rng* rng) { drop_rng_ = rng; }

    Taps<T> encode(const Tensor<T>& images) const {
        Taps<T> taps;
        const T a = static_cast<T>(1.0 / cfg_.pixel_std);
        const T b = static_cast<T>(-cfg_.pixel_mean / cfg_.pixel_std);
        taps[0] = embed_.embed_image(affine(images, a, b), cfg_.image_size);
        Tensor<T> x = taps[0].data;
        for (std::size_t k = 0; k < 4; ++k) {
            for (const auto& blk : stages_[k]) x = blk(x, cfg_.drop_path, drop_rng_);
            taps[k + 1] = {x, static_cast<StageTag>(k + 1)};
            if (merge_after_[k]) x = merges_[k](x);
        }
        return taps;
    }

    const PatchEmbed<T>& patch_embed() const { return embed_; }
    const std::vector<SwinBlock<T>>& stage(std::size_t k) const { return stages_.at(k); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        embed_.collect(out, prefix + ".patch_embed");
        for (std::size_t k = 0; k < 4; ++k) {
            for (std::size_t i = 0; i < stages_[k].size(); ++i)
                stages_[k][i].collect(out, prefix + ".stage" + std::to_string(k + 1) + ".block" + std::to_string(i));
            if (merge_after_[k]) merges_[k].collect(out, prefix + ".merge" + std::to_string(k + 1));
        }
    }

    ParamList<T> parameters(const std::string& prefix = "encoder") const {
        ParamList<T> out;
        collect(out, prefix);
        return out;
    }

private:
    EncoderConfig cfg_;
    PatchEmbed<T> embed_;
    std::vector<std::vector<SwinBlock<T>>> stages_;
    std::vector<PatchMerge<T>> merges_;
    std::vector<bool> merge_after_;
    Rng* drop_rng_ = nullptr;
};

} // namespace iorm
