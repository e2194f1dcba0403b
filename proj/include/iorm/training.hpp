#pragma once

// Optimization recipe: AdamW, half-cosine warmup followed by linear decay,
// soft-label cross-entropy with mixup, evaluation and checkpoints.

#include "iorm/dataset_file.hpp"
#include "iorm/serialization.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

namespace iorm {

struct TrainConfig {
    double base_lr = 2e-5;
    double min_lr = 2e-7;
    double warmup_lr = 2e-8;
    std::size_t warmup_epochs = 3;
    std::size_t total_epochs = 30;
    std::size_t batch_size = 32;
    std::size_t eval_batch_size = 64;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double mixup_alpha = 0.8; // 0 disables mixup
    std::uint64_t seed = 0;
    double stop_at_accuracy = 0.0; // > 0: stop once validation accuracy reaches it

    void validate() const {
        if (!(warmup_lr <= min_lr && min_lr <= base_lr))
            throw ConfigError("learning rates must satisfy warmup_lr <= min_lr <= base_lr");
        if (total_epochs == 0 || warmup_epochs >= total_epochs)
            throw ConfigError("need warmup_epochs < total_epochs (got " + std::to_string(warmup_epochs) + " and " +
                              std::to_string(total_epochs) + ")");
        if (batch_size < 2) throw ConfigError("batch size must be at least 2");
        if (eval_batch_size == 0) throw ConfigError("eval batch size must be positive");
        if (mixup_alpha < 0) throw ConfigError("mixup alpha must be non-negative");
        if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    }
};

inline Json to_json(const TrainConfig& c) {
    return {{"base_lr", c.base_lr},
            {"min_lr", c.min_lr},
            {"warmup_lr", c.warmup_lr},
            {"warmup_epochs", c.warmup_epochs},
            {"total_epochs", c.total_epochs},
            {"batch_size", c.batch_size},
            {"eval_batch_size", c.eval_batch_size},
            {"weight_decay", c.weight_decay},
            {"betas", {c.beta1, c.beta2}},
            {"eps", c.eps},
            {"mixup_alpha", c.mixup_alpha},
            {"seed", c.seed},
            {"stop_at_accuracy", c.stop_at_accuracy}};
}

inline void from_json(const Json& j, TrainConfig& c) {
    for (const auto& [k, v] : j.items()) {
        if (k == "base_lr") c.base_lr = v.get<double>();
        else if (k == "min_lr") c.min_lr = v.get<double>();
        else if (k == "warmup_lr") c.warmup_lr = v.get<double>();
        else if (k == "warmup_epochs") c.warmup_epochs = v.get<std::size_t>();
        else if (k == "total_epochs") c.total_epochs = v.get<std::size_t>();
        else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (k == "eval_batch_size") c.eval_batch_size = v.get<std::size_t>();
        else if (k == "weight_decay") c.weight_decay = v.get<double>();
        else if (k == "betas") {
            c.beta1 = v.at(0).get<double>();
            c.beta2 = v.at(1).get<double>();
        } else if (k == "eps") c.eps = v.get<double>();
        else if (k == "mixup_alpha") c.mixup_alpha = v.get<double>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "stop_at_accuracy") c.stop_at_accuracy = v.get<double>();
        else throw ConfigError("unknown training key '" + k + "'");
    }
}

/// Every rate ×50, same shape; used for the from-scratch desk models.
inline TrainConfig desk_train_config() {
    TrainConfig c;
    c.base_lr = 1e-3;
    c.min_lr = 1e-5;
    c.warmup_lr = 1e-6;
    return c;
}

/// Warmup is 10% of the epochs, at least one unless training lasts one epoch.
inline std::size_t default_warmup_epochs(std::size_t total_epochs) {
    return total_epochs <= 1 ? 0 : std::max<std::size_t>(1, total_epochs / 10);
}

// --- learning-rate schedule --------------------------------------------------

/// Steps are optimizer updates numbered 0..final_step.
struct LrSchedule {
    std::size_t warmup_steps = 0;
    std::size_t final_step = 0;
    double warmup_lr = 0, base_lr = 0, min_lr = 0;
};

/// Updates per epoch; a trailing single sample is dropped (mixup needs pairs).
inline std::size_t steps_per_epoch(std::size_t num_samples, std::size_t batch_size) {
    return num_samples / batch_size + (num_samples % batch_size >= 2 ? 1 : 0);
}

inline LrSchedule make_schedule(const TrainConfig& cfg, std::size_t steps_per_epoch) {
    if (steps_per_epoch == 0) throw ContractError("schedule needs at least one step per epoch");
    LrSchedule s;
    s.warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    s.final_step = cfg.total_epochs * steps_per_epoch - 1;
    s.warmup_lr = cfg.warmup_lr;
    s.base_lr = cfg.base_lr;
    s.min_lr = cfg.min_lr;
    return s;
}

/// Half-cosine ramp warmup_lr → base_lr over the warmup steps, then linear
/// decay reaching min_lr at the final step.
inline double lr_at(std::size_t step, const LrSchedule& s) {
    if (step > s.final_step)
        throw ContractError("lr_at: step " + std::to_string(step) + " beyond final step " +
                            std::to_string(s.final_step));
    if (step < s.warmup_steps) {
        const double t = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
        return s.warmup_lr + (s.base_lr - s.warmup_lr) * 0.5 * (1.0 - std::cos(std::numbers::pi * t));
    }
    if (s.final_step == s.warmup_steps) return s.base_lr;
    const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.final_step - s.warmup_steps);
    return s.base_lr + (s.min_lr - s.base_lr) * t;
}

inline double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t steps_per_epoch) {
    return lr_at(step, make_schedule(cfg, steps_per_epoch));
}

// --- AdamW -------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t t = 0;

    void ensure(const ParamList<T>& params) {
        if (m.size() == params.size()) return;
        if (!m.empty()) throw ContractError("optimizer state tracks a different parameter list");
        for (const auto& p : params) {
            m.emplace_back(p.tensor.numel(), T{0});
            v.emplace_back(p.tensor.numel(), T{0});
        }
    }
};

/// Only weight matrices are decayed; biases, norms, temperatures and bias
/// tables are not.
inline bool decays(ParamKind k) { return k == ParamKind::Weight; }

/// One AdamW update using each parameter's accumulated gradient (absent
/// gradients count as zero). Temperatures are clamped to kMinTemperature.
template <typename T>
void adamw_step(const ParamList<T>& params, AdamState<T>& st, double lr, const TrainConfig& cfg) {
    st.ensure(params);
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad())
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericInputError("non-finite gradient in parameter '" + p.name + "'");
    }
    st.t += 1;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T bc1 = T{1} - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(st.t)));
    const T bc2 = T{1} - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(st.t)));
    const T step = static_cast<T>(lr), eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> t = params[i].tensor;
        auto w = t.data();
        const auto g = t.grad();
        const bool has = t.has_grad();
        const T shrink = decays(params[i].kind) ? T{1} - step * static_cast<T>(cfg.weight_decay) : T{1};
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const T gj = has ? g[j] : T{0};
            w[j] *= shrink;
            m[j] = b1 * m[j] + (T{1} - b1) * gj;
            v[j] = b2 * v[j] + (T{1} - b2) * gj * gj;
            w[j] -= step * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
        if (params[i].kind == ParamKind::Temperature)
            for (auto& x : w) x = std::max(x, static_cast<T>(kMinTemperature));
    }
}

// --- checkpoints -------------------------------------------------------------

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
    std::uint16_t version = kCheckpointVersion;
    ConfigHash config_hash{};
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    const NamedTensor& at(const std::string& name) const {
        if (const auto* t = find(name)) return *t;
        throw FormatError("checkpoint lacks tensor '" + name + "'");
    }

    Bytes encode() const {
        ByteWriter w;
        w.str("IOCK");
        w.u16(version);
        w.raw(config_hash.data(), config_hash.size());
        w.u32(static_cast<std::uint32_t>(tensors.size()));
        for (const auto& t : tensors) {
            if (t.name.size() > 0xFFFF) throw ContractError("tensor name too long");
            if (numel_of(t.shape) != t.values.size()) throw ContractError("tensor '" + t.name + "' extent mismatch");
            w.u16(static_cast<std::uint16_t>(t.name.size()));
            w.str(t.name);
            w.u8(static_cast<std::uint8_t>(t.shape.size()));
            for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
            for (float v : t.values) w.f32(v);
        }
        w.u32(w.crc_since(0));
        return w.take();
    }

    static Checkpoint decode(const Bytes& b, const std::string& what = "checkpoint") {
        if (b.size() < 4 + 2 + 32 + 4 + 4) throw FormatError(what + ": truncated (" + std::to_string(b.size()) + " bytes)");
        const std::uint32_t want = crc32_of(b.data(), b.size() - 4);
        ByteReader tail(b.data() + b.size() - 4, 4, what);
        if (tail.u32() != want) throw ChecksumError(what + ": checksum mismatch");
        ByteReader r(b.data(), b.size() - 4, what);
        if (r.str(4) != "IOCK") throw FormatError(what + ": bad magic (expected IOCK)");
        Checkpoint c;
        c.version = r.u16();
        if (c.version != kCheckpointVersion)
            throw FormatError(what + ": unsupported version " + std::to_string(c.version));
        for (auto& x : c.config_hash) x = r.u8();
        const std::uint32_t count = r.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            NamedTensor t;
            t.name = r.str(r.u16());
            const std::uint8_t rank = r.u8();
            for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
            const std::size_t n = numel_of(t.shape);
            r.need(n * 4);
            t.values.resize(n);
            for (auto& v : t.values) v = r.f32();
            c.tensors.push_back(std::move(t));
        }
        if (r.remaining() != 0) throw FormatError(what + ": trailing bytes before footer");
        return c;
    }

    void save(const std::filesystem::path& path) const { write_file(path, encode()); }
    static Checkpoint load(const std::filesystem::path& path) { return decode(read_file(path), path.string()); }
};

template <typename T>
NamedTensor to_named(const std::string& name, const Shape& shape, std::span<const T> values) {
    return {name, shape, std::vector<float>(values.begin(), values.end())};
}

template <typename T>
void assign_from(const NamedTensor& src, const Shape& shape, std::span<T> dst) {
    if (src.shape != shape)
        throw FormatError("checkpoint tensor '" + src.name + "' has shape " + shape_str(src.shape) + ", model expects " +
                          shape_str(shape));
    std::copy(src.values.begin(), src.values.end(), dst.begin());
}

/// A model's parameters alone, as stored by `iorm train` for evaluation.
template <typename T>
Checkpoint model_checkpoint(const RewardModel<T>& model) {
    Checkpoint c;
    c.config_hash = config_hash(model.config());
    for (const auto& p : model.parameters()) c.tensors.push_back(to_named<T>("param/" + p.name, p.tensor.shape(), p.tensor.data()));
    return c;
}

template <typename T>
void load_parameters(RewardModel<T>& model, const Checkpoint& c) {
    if (c.config_hash != config_hash(model.config()))
        throw ConfigError("checkpoint was written for a different model configuration");
    for (auto& p : model.parameters()) {
        Tensor<T> t = p.tensor;
        assign_from<T>(c.at("param/" + p.name), t.shape(), t.data());
    }
}

// --- evaluation --------------------------------------------------------------

struct EvalResult {
    double accuracy = 0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::array<std::array<std::size_t, 2>, 2> confusion{}; // [true label][predicted]
    std::vector<std::uint8_t> predictions;
};

template <typename T>
void require_arity(const RewardModel<T>& model, const std::vector<PairSample>& samples) {
    if (!samples.empty() && requires_pair(model.variant()) && !samples.front().has_input())
        throw ContractError("model " + to_string(model.variant()) +
                            " scores (input, output) pairs but the dataset carries output images only");
}

/// Argmax over the two logits, ties to class 0.
template <typename T>
EvalResult evaluate(const RewardModel<T>& model, const std::vector<PairSample>& samples, std::size_t batch_size = 64) {
    if (samples.empty()) throw ContractError("evaluate: empty dataset");
    if (batch_size == 0) throw ContractError("evaluate: batch size must be positive");
    require_arity(model, samples);
    NoGradGuard guard;
    EvalResult r;
    r.total = samples.size();
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
        const Batch<T> b = make_batch<T>(samples, idx);
        const auto logits = model.forward(b.x_in, b.x_out).logits;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::uint8_t pred = logits.data()[k * 2 + 1] > logits.data()[k * 2] ? 1 : 0;
            const std::uint8_t truth = samples[idx[k]].label;
            r.predictions.push_back(pred);
            r.confusion[truth][pred] += 1;
            r.correct += pred == truth;
        }
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    return r;
}

// --- training loop -----------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0;
    double val_acc = 0;
    double lr = 0; // rate of the epoch's last update
    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
    std::vector<EpochRecord> history;
    std::vector<double> lr_trace;   // one entry per update made by this call
    std::vector<double> step_loss;  // one entry per update made by this call
    double best_accuracy = 0;
    std::size_t best_epoch = 0;
    std::size_t epochs_completed = 0;
    std::size_t steps = 0; // total updates, including any before a resume
    bool early_stopped = false;
};

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir; // last.ckpt, best.ckpt, metrics.csv
    std::optional<std::filesystem::path> resume_from;
    std::size_t stop_after_epochs = 0; // > 0: return after this many epochs of this call
    std::function<void(const EpochRecord&)> on_epoch;
};

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,val_acc,lr\n";
    os << std::setprecision(10);
    for (const auto& e : history) os << e.epoch << ',' << e.train_loss << ',' << e.val_acc << ',' << e.lr << '\n';
    const std::string s = os.str();
    write_file(path, Bytes(s.begin(), s.end()));
}

namespace detail {

template <typename T>
Checkpoint training_checkpoint(const RewardModel<T>& model, const ParamList<T>& params, const AdamState<T>& opt,
                               const TrainReport& rep) {
    Checkpoint c = model_checkpoint(model);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& shape = params[i].tensor.shape();
        c.tensors.push_back(to_named<T>("adam.m/" + params[i].name, shape, std::span<const T>(opt.m[i])));
        c.tensors.push_back(to_named<T>("adam.v/" + params[i].name, shape, std::span<const T>(opt.v[i])));
    }
    c.tensors.push_back({"state/step", {1}, {static_cast<float>(rep.steps)}});
    c.tensors.push_back({"state/epoch", {1}, {static_cast<float>(rep.epochs_completed)}});
    NamedTensor hist{"metrics/history", {rep.history.size(), 4}, {}};
    for (const auto& e : rep.history) {
        hist.values.push_back(static_cast<float>(e.epoch));
        hist.values.push_back(static_cast<float>(e.train_loss));
        hist.values.push_back(static_cast<float>(e.val_acc));
        hist.values.push_back(static_cast<float>(e.lr));
    }
    c.tensors.push_back(std::move(hist));
    c.tensors.push_back(
        {"metrics/best", {2}, {static_cast<float>(rep.best_accuracy), static_cast<float>(rep.best_epoch)}});
    return c;
}

template <typename T>
void restore_training(RewardModel<T>& model, const ParamList<T>& params, AdamState<T>& opt, TrainReport& rep,
                      const Checkpoint& c) {
    load_parameters(model, c);
    opt.ensure(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& shape = params[i].tensor.shape();
        assign_from<T>(c.at("adam.m/" + params[i].name), shape, std::span<T>(opt.m[i]));
        assign_from<T>(c.at("adam.v/" + params[i].name), shape, std::span<T>(opt.v[i]));
    }
    rep.steps = static_cast<std::size_t>(c.at("state/step").values.at(0));
    opt.t = rep.steps;
    rep.epochs_completed = static_cast<std::size_t>(c.at("state/epoch").values.at(0));
    const auto& hist = c.at("metrics/history");
    for (std::size_t e = 0; e + 3 < hist.values.size(); e += 4)
        rep.history.push_back({static_cast<std::size_t>(hist.values[e]), hist.values[e + 1], hist.values[e + 2],
                               hist.values[e + 3]});
    const auto& best = c.at("metrics/best");
    rep.best_accuracy = best.values.at(0);
    rep.best_epoch = static_cast<std::size_t>(best.values.at(1));
}

inline Rng epoch_rng(std::uint64_t seed, std::size_t epoch) {
    return Rng(splitmix64(seed ^ splitmix64(0xE90C0000ull + epoch)));
}

} // namespace detail

/// Trains `model` in place. Deterministic given cfg.seed; resuming from a
/// checkpoint written by an earlier call continues the same trajectory.
template <typename T>
TrainReport train(RewardModel<T>& model, const std::vector<PairSample>& train_set,
                  const std::vector<PairSample>& val_set, const TrainConfig& cfg, const TrainOptions& opts = {}) {
    cfg.validate();
    if (train_set.size() < 2) throw ContractError("training needs at least two samples");
    if (val_set.empty()) throw ContractError("training needs a non-empty validation set");
    require_arity(model, train_set);
    require_arity(model, val_set);

    const ParamList<T> params = model.parameters();
    AdamState<T> opt;
    opt.ensure(params);
    TrainReport rep;
    if (opts.resume_from) detail::restore_training(model, params, opt, rep, Checkpoint::load(*opts.resume_from));
    if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);

    const std::size_t spe = steps_per_epoch(train_set.size(), cfg.batch_size);
    const LrSchedule sched = make_schedule(cfg, spe);
    std::vector<std::size_t> order(train_set.size());
    std::size_t ran = 0;

    for (std::size_t epoch = rep.epochs_completed; epoch < cfg.total_epochs; ++epoch) {
        Rng rng = detail::epoch_rng(cfg.seed, epoch);
        model.set_drop_rng(&rng);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0, lr = 0;
        for (std::size_t s = 0; s < spe; ++s) {
            const std::size_t begin = s * cfg.batch_size;
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            Batch<T> batch = make_batch<T>(train_set, std::span<const std::size_t>(order).subspan(begin, end - begin));
            if (cfg.mixup_alpha > 0) batch = mixup(batch, cfg.mixup_alpha, rng);
            for (const auto& p : params) {
                Tensor<T> t = p.tensor;
                t.zero_grad();
            }
            Tensor<T> loss = soft_cross_entropy(model.forward(batch.x_in, batch.x_out).logits, batch.targets);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv)) {
                model.set_drop_rng(nullptr);
                throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch + 1) + ", step " +
                                      std::to_string(rep.steps) +
                                      (opts.out_dir ? "; last finite state kept in last.ckpt" : ""));
            }
            backward(loss);
            lr = lr_at(rep.steps, sched);
            adamw_step(params, opt, lr, cfg);
            rep.lr_trace.push_back(lr);
            rep.step_loss.push_back(lv);
            loss_sum += lv;
            ++rep.steps;
        }
        model.set_drop_rng(nullptr);

        // records hold f32-representable values so a checkpoint restores them exactly
        auto f32 = [](double x) { return static_cast<double>(static_cast<float>(x)); };
        EpochRecord rec{epoch + 1, f32(loss_sum / static_cast<double>(spe)),
                        f32(evaluate(model, val_set, cfg.eval_batch_size).accuracy), f32(lr)};
        rep.history.push_back(rec);
        rep.epochs_completed = epoch + 1;
        const bool improved = rep.best_epoch == 0 || rec.val_acc > rep.best_accuracy;
        if (improved) {
            rep.best_accuracy = rec.val_acc;
            rep.best_epoch = rec.epoch;
        }
        if (opts.out_dir) {
            const Checkpoint ck = detail::training_checkpoint(model, params, opt, rep);
            ck.save(*opts.out_dir / "last.ckpt");
            if (improved) ck.save(*opts.out_dir / "best.ckpt");
            write_metrics_csv(*opts.out_dir / "metrics.csv", rep.history);
        }
        if (opts.on_epoch) opts.on_epoch(rec);
        ++ran;
        if (cfg.stop_at_accuracy > 0 && rec.val_acc >= cfg.stop_at_accuracy) {
            rep.early_stopped = true;
            break;
        }
        if (opts.stop_after_epochs && ran == opts.stop_after_epochs) break;
    }
    return rep;
}

} // namespace iorm
