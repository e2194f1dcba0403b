#pragma once

// Cosine cross-attention between the two encoder streams. Queries come from
// the output-side features, keys and values from the input-side features; the
// residual wraps the output-side stream and is followed by a layernorm.

#include "iorm/swin.hpp"

namespace iorm {

struct CrossAttentionConfig {
    std::size_t heads = 0;  // 0: take the encoder's head count for the tapped stage
    std::size_t window = 0; // 0: take the encoder's window size
    bool cyclic_shift = false;
};

template <typename T>
struct CrossAttentionParams {
    WindowAttentionParams<T> attn; // q acts on O-side features; k, v on I-side features
    LayerNorm<T> norm;
    bool cyclic_shift_enabled = false;

    CrossAttentionParams() = default;
    CrossAttentionParams(std::size_t dim, std::size_t heads, std::size_t window, bool cyclic_shift, Rng& rng)
        : attn(dim, heads, window, rng), norm(dim), cyclic_shift_enabled(cyclic_shift) {}

    std::size_t heads() const { return attn.heads; }
    std::size_t window_size() const { return attn.window; }

    void collect(ParamList<T>& out, const std::string& prefix) const {
        attn.collect(out, prefix + ".attn");
        norm.collect(out, prefix + ".norm");
    }
};

namespace detail {

/// Cross attention with separately supplied key and value sources. The public
/// entry point passes the same input-side map for both.
template <typename T>
FeatureMap<T> cross_attend_kv(const FeatureMap<T>& k_feat, const FeatureMap<T>& v_feat, const FeatureMap<T>& o_feat,
                              const CrossAttentionParams<T>& p, AttentionTrace<T>* trace) {
    if (k_feat.data.shape() != o_feat.data.shape() || v_feat.data.shape() != o_feat.data.shape())
        throw WiringError("cross attention taps disagree: I-side " + shape_str(k_feat.data.shape()) + ", O-side " +
                          shape_str(o_feat.data.shape()));
    const std::size_t side = std::min(o_feat.height(), o_feat.width());
    const std::size_t win = std::min(p.window_size(), side);
    if (o_feat.height() % win || o_feat.width() % win)
        throw ConfigError("cross window " + std::to_string(win) + " does not divide grid " +
                          shape_str(o_feat.data.shape()));
    const Tensor<T> attended =
        windowed_cosine_attention(p.attn, o_feat.data, k_feat.data, v_feat.data, win, p.cyclic_shift_enabled, trace);
    return {p.norm(add(o_feat.data, attended)), o_feat.tag};
}

} // namespace detail

template <typename T>
FeatureMap<T> cross_attend(const FeatureMap<T>& i_feat, const FeatureMap<T>& o_feat, const CrossAttentionParams<T>& p,
                           AttentionTrace<T>* trace = nullptr) {
    return detail::cross_attend_kv(i_feat, i_feat, o_feat, p, trace);
}

/// Applies `count` cross blocks in sequence; each block queries with the
/// previous block's output and re-keys from the same input-side map.
template <typename T>
FeatureMap<T> cross_block_stack(const FeatureMap<T>& i_feat, const FeatureMap<T>& o_feat,
                                const std::vector<CrossAttentionParams<T>>& params, std::size_t count) {
    if (count == 0 || params.size() != count)
        throw ContractError("cross stack needs count >= 1 and one parameter set per block (count " +
                            std::to_string(count) + ", params " + std::to_string(params.size()) + ")");
    FeatureMap<T> stream = o_feat;
    for (const auto& p : params) stream = cross_attend(i_feat, stream, p);
    return stream;
}

} // namespace iorm
