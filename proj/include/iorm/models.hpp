#pragma once

// Reward-model architectures assembled from encoders and cross blocks.

#include "iorm/cross_attention.hpp"

#include <memory>
#include <optional>
#include <utility>

namespace iorm {

enum class Variant { IO_V8, IO_W12, OUTPUT_BASE, OUTPUT_NLAYERS, SIAMESE_IO, SWINV2_CONCAT_BASELINE };

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::IO_V8: return "io-v8";
    case Variant::IO_W12: return "io-w12";
    case Variant::OUTPUT_BASE: return "output-base";
    case Variant::OUTPUT_NLAYERS: return "output-nlayers";
    case Variant::SIAMESE_IO: return "siamese";
    case Variant::SWINV2_CONCAT_BASELINE: return "concat-baseline";
    }
    return "unknown";
}

inline Variant variant_from_string(const std::string& s) {
    for (Variant v : {Variant::IO_V8, Variant::IO_W12, Variant::OUTPUT_BASE, Variant::OUTPUT_NLAYERS,
                      Variant::SIAMESE_IO, Variant::SWINV2_CONCAT_BASELINE}) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown model variant '" + s + "'");
}

/// True when the variant consumes an (input, output) pair.
inline bool requires_pair(Variant v) {
    return v == Variant::IO_V8 || v == Variant::IO_W12 || v == Variant::SIAMESE_IO ||
           v == Variant::SWINV2_CONCAT_BASELINE;
}

struct ModelConfig {
    Variant variant = Variant::IO_V8;
    std::size_t extra_layers = 0; // OUTPUT_NLAYERS only
    EncoderConfig encoder;
    CrossAttentionConfig cross;
    std::size_t num_classes = 2;
    std::size_t head_hidden = 32;
    std::size_t fuse_dim = 8; // IO_W12 fused-stream width at S1
    std::size_t cross_mlp_ratio = 4; // IO_V8/Siamese feed-forward sublayer after the cross block; 0 omits it
    std::uint64_t seed = 0;

    bool cyclic_shift_in_cross() const { return cross.cyclic_shift; }

    void validate() const {
        encoder.validate();
        if (num_classes != 2) throw ConfigError("reward models are binary classifiers (num_classes = 2)");
        if (variant == Variant::OUTPUT_NLAYERS && extra_layers < 1)
            throw ConfigError("output-nlayers needs at least one extra layer");
        if (variant != Variant::OUTPUT_NLAYERS && extra_layers != 0)
            throw ConfigError("extra_layers is only meaningful for output-nlayers");
        if (variant == Variant::SWINV2_CONCAT_BASELINE && encoder.in_channels != 6)
            throw ConfigError("concat baseline needs a 6-channel encoder");
        if (variant != Variant::SWINV2_CONCAT_BASELINE && encoder.in_channels != 3)
            throw ConfigError(to_string(variant) + " needs a 3-channel encoder");
    }
};

/// Desk-scale defaults for a variant.
inline ModelConfig default_model_config(Variant v, std::size_t extra_layers = 0) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.extra_layers = v == Variant::OUTPUT_NLAYERS ? std::max<std::size_t>(extra_layers, 1) : 0;
    if (v == Variant::SWINV2_CONCAT_BASELINE) cfg.encoder.in_channels = 6;
    return cfg;
}

template <typename T>
struct ClassifierOutput {
    Tensor<T> logits;        // [B, 2]
    Tensor<T> probabilities; // softmax of logits
};

/// Channel-wise concatenation of two image batches [B,3,H,W] → [B,6,H,W].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape() || a.rank() != 4)
        throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::vector<std::size_t> idx;
    idx.reserve(2 * a.numel());
    // index into the virtual buffer [a | b]
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t src = 0; src < 2; ++src)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < hw; ++p) idx.push_back(src * a.numel() + (s * c + ch) * hw + p);
    std::vector<T> joined(a.values());
    joined.insert(joined.end(), b.values().begin(), b.values().end());
    const Tensor<T> both({2 * a.numel()}, std::move(joined));
    return gather(both, std::move(idx), {n, 2 * c, a.dim(2), a.dim(3)}, "concat_channels");
}

template <typename T>
class RewardModel {
public:
    explicit RewardModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        const auto taps = tap_shapes(cfg_.encoder);
        switch (cfg_.variant) {
        case Variant::IO_V8:
            input_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            output_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            build_v8_cross(taps[4], rng);
            head_linear_ = Linear<T>(taps[4].channels, cfg_.num_classes, rng);
            break;
        case Variant::SIAMESE_IO:
            input_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            output_encoder_ = input_encoder_;
            build_v8_cross(taps[4], rng);
            head_linear_ = Linear<T>(taps[4].channels, cfg_.num_classes, rng);
            break;
        case Variant::IO_W12:
            input_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            output_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            build_w12(taps, rng);
            break;
        case Variant::OUTPUT_BASE:
        case Variant::OUTPUT_NLAYERS:
            output_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            for (std::size_t i = 0; i < cfg_.extra_layers; ++i) {
                // global attention: one window spans the whole S5 grid
                extra_blocks_.emplace_back(taps[4].channels, cfg_.encoder.num_heads[3], taps[4].side, taps[4].side,
                                           false, cfg_.encoder.mlp_ratio, rng);
            }
            head_linear_ = Linear<T>(taps[4].channels, cfg_.num_classes, rng);
            break;
        case Variant::SWINV2_CONCAT_BASELINE:
            output_encoder_ = std::make_shared<SwinEncoder<T>>(cfg_.encoder, rng);
            head_linear_ = Linear<T>(taps[4].channels, cfg_.num_classes, rng);
            break;
        }
    }

    const ModelConfig& config() const { return cfg_; }
    Variant variant() const { return cfg_.variant; }

    /// x_in may be undefined for output-only variants.
    ClassifierOutput<T> forward(const Tensor<T>& x_in, const Tensor<T>& x_out) const {
        switch (cfg_.variant) {
        case Variant::IO_V8:
        case Variant::SIAMESE_IO: return forward_io_v8(x_in, x_out);
        case Variant::IO_W12: return forward_io_w12(x_in, x_out);
        case Variant::OUTPUT_BASE:
        case Variant::OUTPUT_NLAYERS: return forward_output(x_out);
        case Variant::SWINV2_CONCAT_BASELINE: return forward_concat_baseline(x_in, x_out);
        }
        throw ConfigError("unhandled variant");
    }

    /// S5 taps of both encoders fused by one cross block. Also serves the
    /// Siamese variant, whose two encoders alias one parameter set.
    ClassifierOutput<T> forward_io_v8(const Tensor<T>& x_in, const Tensor<T>& x_out,
                                      AttentionTrace<T>* trace = nullptr) const {
        require_variant({Variant::IO_V8, Variant::SIAMESE_IO}, "forward_io_v8");
        require_pair_inputs(x_in, x_out);
        const auto [s5_in, s5_out] = s5_taps(x_in, x_out);
        FeatureMap<T> fused = cross_attend(s5_in, s5_out, cross_.front(), trace);
        if (cross_ffn_) fused.data = cross_ffn_->norm(add(fused.data, cross_ffn_->mlp(fused.data)));
        return classify(head_linear_(pool(fused)));
    }

    ClassifierOutput<T> forward_siamese_io(const Tensor<T>& x_in, const Tensor<T>& x_out) const {
        require_variant({Variant::SIAMESE_IO}, "forward_siamese_io");
        return forward_io_v8(x_in, x_out);
    }

    ClassifierOutput<T> forward_io_w12(const Tensor<T>& x_in, const Tensor<T>& x_out) const {
        require_variant({Variant::IO_W12}, "forward_io_w12");
        require_pair_inputs(x_in, x_out);
        const auto ti = input_encoder_->encode(x_in);
        const auto to = output_encoder_->encode(x_out);
        auto project = [](const Linear<T>& p, const FeatureMap<T>& f) { return FeatureMap<T>{p(f.data), f.tag}; };

        FeatureMap<T> stream =
            cross_attend(project(w12_.tap_in[0], ti[0]), project(w12_.tap_out[0], to[0]), w12_.first_cross);
        for (std::size_t k = 1; k < 5; ++k) {
            switch (w12_.transition[k]) {
            case W12Transition::PatchEmbed: stream.data = w12_.embeds[k == 1 ? 0 : 1].embed_grid(stream.data); break;
            case W12Transition::PatchMerge: stream.data = w12_.merge(stream.data); break;
            case W12Transition::None: break;
            }
            const FeatureMap<T> tap_i = project(w12_.tap_in[k], ti[k]);
            const FeatureMap<T> tap_o = project(w12_.tap_out[k], to[k]);
            if (tap_o.data.shape() != stream.data.shape())
                throw WiringError("fused stream " + shape_str(stream.data.shape()) + " does not match projected " +
                                  to_string(static_cast<StageTag>(k)) + " tap " + shape_str(tap_o.data.shape()));
            const FeatureMap<T> query{add(stream.data, tap_o.data), tap_o.tag};
            stream = cross_block_stack(tap_i, query, w12_.stacks[k - 1], w12_.stacks[k - 1].size());
        }
        return classify(w12_.head(pool(stream)));
    }

    /// Output-only scoring: the input image is never consulted.
    ClassifierOutput<T> forward_output(const Tensor<T>& x_out) const {
        require_variant({Variant::OUTPUT_BASE, Variant::OUTPUT_NLAYERS}, "forward_output");
        const auto to = output_encoder_->encode(x_out);
        Tensor<T> x = to[4].data;
        for (const auto& blk : extra_blocks_) x = blk(x);
        return classify(head_linear_(pool(FeatureMap<T>{x, StageTag::S5})));
    }

    ClassifierOutput<T> forward_concat_baseline(const Tensor<T>& x_in, const Tensor<T>& x_out) const {
        require_variant({Variant::SWINV2_CONCAT_BASELINE}, "forward_concat_baseline");
        require_pair_inputs(x_in, x_out);
        const auto to = output_encoder_->encode(concat_channels(x_in, x_out));
        return classify(head_linear_(pool(to[4])));
    }

    ParamList<T> parameters() const {
        ParamList<T> out;
        if (cfg_.variant == Variant::SIAMESE_IO) {
            input_encoder_->collect(out, "encoder");
        } else if (input_encoder_) {
            input_encoder_->collect(out, "input_encoder");
            output_encoder_->collect(out, "output_encoder");
        } else {
            output_encoder_->collect(out, "encoder");
        }
        for (std::size_t i = 0; i < cross_.size(); ++i) cross_[i].collect(out, "cross" + std::to_string(i));
        if (cross_ffn_) {
            cross_ffn_->mlp.collect(out, "cross0.mlp");
            cross_ffn_->norm.collect(out, "cross0.norm2");
        }
        if (cfg_.variant == Variant::IO_W12) {
            for (std::size_t k = 0; k < 5; ++k) {
                w12_.tap_in[k].collect(out, "w12.tap_in" + std::to_string(k + 1));
                w12_.tap_out[k].collect(out, "w12.tap_out" + std::to_string(k + 1));
            }
            w12_.first_cross.collect(out, "w12.cross1");
            for (std::size_t s = 0; s < w12_.stacks.size(); ++s)
                for (std::size_t i = 0; i < w12_.stacks[s].size(); ++i)
                    w12_.stacks[s][i].collect(out, "w12.stack" + std::to_string(s + 2) + ".block" + std::to_string(i));
            for (std::size_t i = 0; i < w12_.embeds.size(); ++i)
                w12_.embeds[i].collect(out, "w12.patch_emb" + std::to_string(i + 1));
            w12_.merge.collect(out, "w12.patch_merge");
            w12_.head.collect(out, "w12.head");
        }
        for (std::size_t i = 0; i < extra_blocks_.size(); ++i) extra_blocks_[i].collect(out, "extra" + std::to_string(i));
        if (head_linear_.weight.defined()) head_linear_.collect(out, "head");
        return out;
    }

    std::size_t parameter_count() const { return count_parameters(parameters()); }

    const SwinEncoder<T>* input_encoder() const { return input_encoder_.get(); }
    const SwinEncoder<T>* output_encoder() const { return output_encoder_.get(); }
    std::vector<CrossAttentionParams<T>>& cross_blocks() { return cross_; }
    const std::vector<CrossAttentionParams<T>>& cross_blocks() const { return cross_; }

    /// (stage, projected width) for each IO_W12 cross stack input, in order.
    const std::vector<std::pair<StageTag, std::size_t>>& wiring_log() const { return w12_.log; }

    /// S5 taps (input side, output side) as fed to the IO_V8/Siamese cross block.
    std::pair<FeatureMap<T>, FeatureMap<T>> s5_taps(const Tensor<T>& x_in, const Tensor<T>& x_out) const {
        return {input_encoder_->encode(x_in)[4], output_encoder_->encode(x_out)[4]};
    }

    void set_drop_rng(Rng* rng) {
        if (input_encoder_) input_encoder_->set_drop_rng(rng);
        if (output_encoder_) output_encoder_->set_drop_rng(rng);
    }

private:
    enum class W12Transition { None, PatchEmbed, PatchMerge };

    struct W12Parts {
        std::array<Linear<T>, 5> tap_in;
        std::array<Linear<T>, 5> tap_out;
        CrossAttentionParams<T> first_cross;
        std::vector<std::vector<CrossAttentionParams<T>>> stacks; // S2..S5, two blocks each
        std::array<W12Transition, 5> transition{};
        std::vector<PatchEmbed<T>> embeds;
        PatchMerge<T> merge;
        Mlp<T> head;
        std::vector<std::pair<StageTag, std::size_t>> log;
    };

    std::size_t cross_heads(std::size_t stage_index) const {
        return cfg_.cross.heads ? cfg_.cross.heads : cfg_.encoder.num_heads[stage_index];
    }
    std::size_t cross_window() const { return cfg_.cross.window ? cfg_.cross.window : cfg_.encoder.window_size; }

    void build_v8_cross(const TapShape& s5, Rng& rng) {
        cross_.emplace_back(s5.channels, cross_heads(3), cross_window(), cfg_.cross.cyclic_shift, rng);
        if (cfg_.cross_mlp_ratio)
            cross_ffn_ = CrossFeedForward{Mlp<T>(s5.channels, cfg_.cross_mlp_ratio * s5.channels, s5.channels, rng),
                                          LayerNorm<T>(s5.channels)};
    }

    // The fused stream starts at fuse_dim and widens with the encoder; taps
    // are projected to its width. Downsampling follows the drawn order:
    // patch emb, patch emb, patch merge, then none before the last stack.
    void build_w12(const std::array<TapShape, 5>& taps, Rng& rng) {
        const std::size_t base = taps[0].channels;
        std::array<std::size_t, 5> width{};
        for (std::size_t k = 0; k < 5; ++k) {
            if ((cfg_.fuse_dim * taps[k].channels) % base)
                throw WiringError("fused width for " + to_string(taps[k].tag) + " is not integral");
            width[k] = cfg_.fuse_dim * taps[k].channels / base;
        }
        static constexpr std::size_t heads_stage[5] = {0, 0, 1, 2, 3};
        for (std::size_t k = 0; k < 5; ++k) {
            w12_.tap_in[k] = Linear<T>(taps[k].channels, width[k], rng);
            w12_.tap_out[k] = Linear<T>(taps[k].channels, width[k], rng);
            w12_.log.emplace_back(taps[k].tag, width[k]);
        }
        w12_.first_cross = CrossAttentionParams<T>(width[0], cross_heads(0), cross_window(), cfg_.cross.cyclic_shift, rng);
        w12_.transition = {W12Transition::None, W12Transition::PatchEmbed, W12Transition::PatchEmbed,
                           W12Transition::PatchMerge, W12Transition::None};
        for (std::size_t k = 1; k < 5; ++k) {
            const std::size_t prev = taps[k - 1].side, cur = taps[k].side;
            switch (w12_.transition[k]) {
            case W12Transition::PatchEmbed:
                if (cur == 0 || prev % cur)
                    throw WiringError("patch emb cannot map grid " + std::to_string(prev) + " to " + std::to_string(cur));
                w12_.embeds.emplace_back(width[k - 1], prev / cur, width[k], rng);
                break;
            case W12Transition::PatchMerge:
                if (prev != 2 * cur || width[k] != 2 * width[k - 1])
                    throw WiringError("patch merge cannot map " + to_string(taps[k - 1].tag) + " stream onto " +
                                      to_string(taps[k].tag));
                w12_.merge = PatchMerge<T>(width[k - 1], rng);
                break;
            case W12Transition::None:
                if (prev != cur || width[k] != width[k - 1])
                    throw WiringError(to_string(taps[k].tag) + " tap does not share the stream geometry of " +
                                      to_string(taps[k - 1].tag));
                break;
            }
            std::vector<CrossAttentionParams<T>> stack;
            for (int i = 0; i < 2; ++i)
                stack.emplace_back(width[k], cross_heads(heads_stage[k]), cross_window(), cfg_.cross.cyclic_shift, rng);
            w12_.stacks.push_back(std::move(stack));
        }
        w12_.head = Mlp<T>(width[4], cfg_.head_hidden, cfg_.num_classes, rng);
    }

    void require_variant(std::initializer_list<Variant> allowed, const char* what) const {
        for (Variant v : allowed)
            if (v == cfg_.variant) return;
        throw ContractError(std::string(what) + " called on a " + to_string(cfg_.variant) + " model");
    }

    static void require_pair_inputs(const Tensor<T>& x_in, const Tensor<T>& x_out) {
        if (!x_in.defined() || !x_out.defined()) throw ContractError("this variant needs both input and output images");
    }

    static Tensor<T> pool(const FeatureMap<T>& f) {
        return mean_tokens(reshape(f.data, {f.batch(), f.height() * f.width(), f.channels()}));
    }

    static ClassifierOutput<T> classify(Tensor<T> logits) {
        Tensor<T> probs;
        {
            NoGradGuard guard;
            probs = softmax_lastdim(logits);
        }
        return {std::move(logits), std::move(probs)};
    }

    ModelConfig cfg_;
    std::shared_ptr<SwinEncoder<T>> input_encoder_;
    std::shared_ptr<SwinEncoder<T>> output_encoder_;
    // post-norm feed-forward sublayer: x <- LN(x + MLP(x))
    struct CrossFeedForward {
        Mlp<T> mlp;
        LayerNorm<T> norm;
    };

    std::vector<CrossAttentionParams<T>> cross_;
    std::optional<CrossFeedForward> cross_ffn_;
    std::vector<SwinBlock<T>> extra_blocks_;
    Linear<T> head_linear_;
    W12Parts w12_;
};

} // namespace iorm
