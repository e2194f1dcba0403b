#pragma once

// Windowed cosine attention shared by the encoder blocks and the cross blocks:
// per window and head, softmax(cos(q, k) / tau + B [+ shift mask]) · v.

#include "iorm/nn.hpp"

namespace iorm {

/// Learned state of one windowed cosine attention layer.
template <typename T>
struct WindowAttentionParams {
    Linear<T> q;
    Linear<T> k;
    Linear<T> v;
    Linear<T> proj;
    Tensor<T> tau;        // [heads], kept >= kMinTemperature by the optimizer
    Tensor<T> bias_table; // [(2w-1)^2, heads]
    std::size_t heads = 1;
    std::size_t window = 1; // table extent; the effective window may be smaller

    WindowAttentionParams() = default;
    WindowAttentionParams(std::size_t dim, std::size_t num_heads, std::size_t window_size, Rng& rng)
        : q(dim, dim, rng), k(dim, dim, rng), v(dim, dim, rng), proj(dim, dim, rng),
          tau(Tensor<T>::full({num_heads}, T{1}, true)),
          bias_table(normal_init<T>({(2 * window_size - 1) * (2 * window_size - 1), num_heads}, 0.02, rng)),
          heads(num_heads), window(window_size) {
        if (num_heads == 0 || dim % num_heads != 0)
            throw ConfigError("width " + std::to_string(dim) + " not divisible into " + std::to_string(num_heads) +
                              " heads");
    }

    std::size_t dim() const { return q.in_features(); }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        q.collect(out, prefix + ".q");
        k.collect(out, prefix + ".k");
        v.collect(out, prefix + ".v");
        proj.collect(out, prefix + ".proj");
        out.push_back({prefix + ".tau", tau, ParamKind::Temperature});
        out.push_back({prefix + ".bias_table", bias_table, ParamKind::BiasTable});
    }
};

inline constexpr double kMinTemperature = 0.01;

/// Bias-table row for each (query, key) pair of a win×win window, for a table
/// built for windows of side `table_window`.
inline std::vector<std::size_t> relative_position_index(std::size_t win, std::size_t table_window) {
    const std::size_t n = win * win;
    const long side = 2 * static_cast<long>(table_window) - 1;
    const long off = static_cast<long>(table_window) - 1;
    std::vector<std::size_t> idx(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const long dy = static_cast<long>(i / win) - static_cast<long>(j / win);
            const long dx = static_cast<long>(i % win) - static_cast<long>(j % win);
            idx[i * n + j] = static_cast<std::size_t>((dy + off) * side + (dx + off));
        }
    return idx;
}

/// Cross-window mask for a grid rolled by −shift: tokens that came from
/// different regions of the unrolled grid may not attend to each other.
template <typename T>
std::vector<T> shift_attention_mask(std::size_t h, std::size_t w, std::size_t win, std::size_t shift) {
    auto region = [&](std::size_t pos, std::size_t extent) -> std::size_t {
        if (pos < extent - win) return 0;
        if (pos < extent - shift) return 1;
        return 2;
    };
    std::vector<std::size_t> label(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) label[y * w + x] = region(y, h) * 3 + region(x, w);
    const std::size_t n = win * win;
    const std::size_t windows = (h / win) * (w / win);
    std::vector<T> mask(windows * n * n, T{0});
    for (std::size_t wy = 0; wy < h / win; ++wy)
        for (std::size_t wx = 0; wx < w / win; ++wx) {
            const std::size_t wi = wy * (w / win) + wx;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t li = label[(wy * win + i / win) * w + wx * win + i % win];
                    const std::size_t lj = label[(wy * win + j / win) * w + wx * win + j % win];
                    if (li != lj) mask[(wi * n + i) * n + j] = T{-100};
                }
        }
    return mask;
}

/// Optional probes into an attention evaluation.
template <typename T>
struct AttentionTrace {
    Tensor<T> probs;          // [B·windows·heads, n, n]
    Tensor<T> pre_projection; // [B,H,W,C] in the unshifted layout
};

/// Queries from `q_src`, keys from `k_src`, values from `v_src`; all [B,H,W,C].
template <typename T>
Tensor<T> windowed_cosine_attention(const WindowAttentionParams<T>& p, const Tensor<T>& q_src,
                                    const Tensor<T>& k_src, const Tensor<T>& v_src, std::size_t win, bool shifted,
                                    AttentionTrace<T>* trace = nullptr) {
    if (q_src.rank() != 4 || q_src.shape() != k_src.shape() || q_src.shape() != v_src.shape())
        throw WiringError("attention operands disagree: " + shape_str(q_src.shape()) + ", " +
                          shape_str(k_src.shape()) + ", " + shape_str(v_src.shape()));
    const std::size_t b = q_src.dim(0), h = q_src.dim(1), w = q_src.dim(2), c = q_src.dim(3);
    if (c != p.dim()) throw WiringError("attention width " + std::to_string(p.dim()) + " applied to " + shape_str(q_src.shape()));
    if (win == 0 || h % win || w % win || win > p.window)
        throw ConfigError("window " + std::to_string(win) + " invalid for grid " + std::to_string(h) + "x" +
                          std::to_string(w));
    const long s = shifted ? static_cast<long>(win / 2) : 0;

    auto roll = [&](const Tensor<T>& x) { return s ? cyclic_shift(x, -s, -s) : x; };
    const Tensor<T> qs = roll(q_src);
    const Tensor<T> ks = k_src.same_as(q_src) ? qs : roll(k_src);
    const Tensor<T> vs = v_src.same_as(k_src) ? ks : roll(v_src);

    const std::size_t windows = (h / win) * (w / win);
    const Tensor<T> qh = split_heads(window_partition(p.q(qs), win), p.heads);
    const Tensor<T> kh = split_heads(window_partition(p.k(ks), win), p.heads);
    const Tensor<T> vh = split_heads(window_partition(p.v(vs), win), p.heads);

    Tensor<T> logits = scale_by_temperature(cosine_bmm(qh, kh), p.tau);
    std::vector<T> mask;
    if (s) mask = shift_attention_mask<T>(h, w, win, static_cast<std::size_t>(s));
    logits = add_relative_bias(logits, p.bias_table, relative_position_index(win, p.window), windows, std::move(mask));
    const Tensor<T> probs = softmax_lastdim(logits);

    Tensor<T> out = window_reverse(merge_heads(bmm(probs, vh), p.heads), win, b, h, w);
    if (s) out = cyclic_shift(out, s, s);
    if (trace) {
        trace->probs = probs;
        trace->pre_projection = out;
    }
    return p.proj(out);
}

} // namespace iorm
