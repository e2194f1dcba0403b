#pragma once

// JSON forms of the configuration types and the model-config hash stored in
// checkpoints.

#include "iorm/datagen.hpp"
#include "iorm/io.hpp"
#include "iorm/models.hpp"

#include <nlohmann/json.hpp>

namespace iorm {

using Json = nlohmann::json;

inline Json to_json(const EncoderConfig& c) {
    return {{"in_channels", c.in_channels}, {"image_size", c.image_size}, {"patch_size", c.patch_size},
            {"embed_dim", c.embed_dim},     {"depths", c.depths},         {"num_heads", c.num_heads},
            {"window_size", c.window_size}, {"mlp_ratio", c.mlp_ratio},   {"drop_path", c.drop_path},
            {"pixel_mean", c.pixel_mean},   {"pixel_std", c.pixel_std}};
}

/// Missing keys keep the value already in `c`; unknown keys are rejected.
inline void from_json(const Json& j, EncoderConfig& c) {
    for (const auto& [k, v] : j.items()) {
        if (k == "in_channels") c.in_channels = v.get<std::size_t>();
        else if (k == "image_size") c.image_size = v.get<std::size_t>();
        else if (k == "patch_size") c.patch_size = v.get<std::size_t>();
        else if (k == "embed_dim") c.embed_dim = v.get<std::size_t>();
        else if (k == "depths") c.depths = v.get<std::vector<std::size_t>>();
        else if (k == "num_heads") c.num_heads = v.get<std::vector<std::size_t>>();
        else if (k == "window_size") c.window_size = v.get<std::size_t>();
        else if (k == "mlp_ratio") c.mlp_ratio = v.get<std::size_t>();
        else if (k == "drop_path") c.drop_path = v.get<double>();
        else if (k == "pixel_mean") c.pixel_mean = v.get<double>();
        else if (k == "pixel_std") c.pixel_std = v.get<double>();
        else throw ConfigError("unknown encoder key '" + k + "'");
    }
}

inline Json to_json(const CrossAttentionConfig& c) {
    return {{"heads", c.heads}, {"window", c.window}, {"cyclic_shift", c.cyclic_shift}};
}

inline void from_json(const Json& j, CrossAttentionConfig& c) {
    for (const auto& [k, v] : j.items()) {
        if (k == "heads") c.heads = v.get<std::size_t>();
        else if (k == "window") c.window = v.get<std::size_t>();
        else if (k == "cyclic_shift") c.cyclic_shift = v.get<bool>();
        else throw ConfigError("unknown cross-attention key '" + k + "'");
    }
}

inline Json to_json(const ModelConfig& c) {
    return {{"variant", to_string(c.variant)},
            {"extra_layers", c.extra_layers},
            {"encoder", to_json(c.encoder)},
            {"cross", to_json(c.cross)},
            {"num_classes", c.num_classes},
            {"head_hidden", c.head_hidden},
            {"fuse_dim", c.fuse_dim},
            {"cross_mlp_ratio", c.cross_mlp_ratio},
            {"seed", c.seed}};
}

inline void from_json(const Json& j, ModelConfig& c) {
    for (const auto& [k, v] : j.items()) {
        if (k == "variant") c.variant = variant_from_string(v.get<std::string>());
        else if (k == "extra_layers") c.extra_layers = v.get<std::size_t>();
        else if (k == "encoder") from_json(v, c.encoder);
        else if (k == "cross") from_json(v, c.cross);
        else if (k == "num_classes") c.num_classes = v.get<std::size_t>();
        else if (k == "head_hidden") c.head_hidden = v.get<std::size_t>();
        else if (k == "fuse_dim") c.fuse_dim = v.get<std::size_t>();
        else if (k == "cross_mlp_ratio") c.cross_mlp_ratio = v.get<std::size_t>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else throw ConfigError("unknown model key '" + k + "'");
    }
}

inline Json to_json(const DatasetSpec& s) {
    Json menu = Json::array();
    for (auto c : s.corruption_menu) menu.push_back(to_string(c));
    return {{"kind", to_string(s.kind)},
            {"num_categories", s.num_categories},
            {"num_samples", s.num_samples},
            {"image_size", s.image_size},
            {"corruption_menu", menu},
            {"train_fraction", s.train_fraction},
            {"master_seed", s.master_seed},
            {"relation", s.relation == PairingRelation::Identity ? "identity" : "permuted"}};
}

inline DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "cd25") return DatasetKind::CD25_SYNTH;
    if (s == "seg") return DatasetKind::SEG_SYNTH;
    throw ConfigError("unknown dataset kind '" + s + "' (expected cd25 or seg)");
}

inline void from_json(const Json& j, DatasetSpec& s) {
    for (const auto& [k, v] : j.items()) {
        if (k == "kind") s.kind = dataset_kind_from_string(v.get<std::string>());
        else if (k == "num_categories") s.num_categories = v.get<std::size_t>();
        else if (k == "num_samples") s.num_samples = v.get<std::size_t>();
        else if (k == "image_size") s.image_size = v.get<std::size_t>();
        else if (k == "corruption_menu") {
            s.corruption_menu.clear();
            for (const auto& c : v) s.corruption_menu.push_back(corruption_from_string(c.get<std::string>()));
        } else if (k == "train_fraction") s.train_fraction = v.get<double>();
        else if (k == "master_seed") s.master_seed = v.get<std::uint64_t>();
        else if (k == "relation") {
            const auto r = v.get<std::string>();
            if (r != "identity" && r != "permuted") throw ConfigError("unknown relation '" + r + "'");
            s.relation = r == "identity" ? PairingRelation::Identity : PairingRelation::Permuted;
        } else throw ConfigError("unknown dataset key '" + k + "'");
    }
}

using ConfigHash = std::array<std::uint8_t, 32>;

/// SHA-256 of the canonical (key-sorted, compact) JSON of the model config.
inline ConfigHash config_hash(const ModelConfig& c) { return sha256_of(to_json(c).dump()); }

} // namespace iorm
