#include "iorm/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace iorm;
namespace fs = std::filesystem;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Default rates with 11 updates per epoch: warmup ends at step 33, the
// decay runs over 296 steps and its midpoint falls on step 181.
LrSchedule published_schedule() { return make_schedule(TrainConfig{}, 11); }

std::vector<PairSample> cd25(std::size_t n, std::uint64_t seed) {
    DatasetSpec s;
    s.num_samples = n;
    s.master_seed = seed;
    s.image_size = 32;
    return generate_range(s, 0, n);
}

TrainConfig small_config() {
    TrainConfig c = desk_train_config();
    c.total_epochs = 3;
    c.warmup_epochs = 1;
    c.batch_size = 8;
    c.seed = 21;
    return c;
}

ModelConfig small_model(Variant v = Variant::OUTPUT_BASE) {
    auto m = default_model_config(v);
    m.seed = 13;
    return m;
}

std::vector<std::vector<float>> snapshot(const RewardModel<float>& m) {
    std::vector<std::vector<float>> out;
    for (const auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

fs::path scratch(const std::string& leaf) {
    const auto dir = fs::temp_directory_path() / "iorm_training_tests" / leaf;
    fs::remove_all(dir);
    return dir;
}

} // namespace

TEST(Schedule, EndpointsMatchPublishedRates) {
    const auto s = published_schedule();
    EXPECT_EQ(s.warmup_steps, 33u);
    EXPECT_EQ(s.final_step, 329u);
    EXPECT_LT(rel(lr_at(0, s), 2e-8), 1e-12);
    EXPECT_LT(rel(lr_at(33, s), 2e-5), 1e-12);
    EXPECT_LT(rel(lr_at(329, s), 2e-7), 1e-12);
    EXPECT_LT(rel(lr_at(181, s), (2e-5 + 2e-7) / 2), 1e-12);
}

TEST(Schedule, WarmupFollowsHalfCosine) {
    const auto s = published_schedule();
    for (std::size_t t = 0; t < 33; ++t) {
        const double want = 2e-8 + (2e-5 - 2e-8) * (1 - std::cos(std::numbers::pi * t / 33.0)) / 2;
        EXPECT_LT(rel(lr_at(t, s), want), 1e-12) << t;
    }
}

TEST(Schedule, DecayIsLinear) {
    const auto s = published_schedule();
    const double slope = (2e-7 - 2e-5) / 296.0;
    for (std::size_t t = 34; t <= 329; ++t) EXPECT_NEAR(lr_at(t, s) - lr_at(t - 1, s), slope, 1e-20) << t;
}

TEST(Schedule, BeyondFinalStepRejected) {
    const auto s = published_schedule();
    EXPECT_NO_THROW(lr_at(329, s));
    EXPECT_THROW(lr_at(330, s), ContractError);
    EXPECT_THROW(make_schedule(TrainConfig{}, 0), ContractError);
}

TEST(Schedule, NoJumpAtWarmupBoundary) {
    const auto s = published_schedule();
    const double before = lr_at(32, s), at = lr_at(33, s), after = lr_at(34, s);
    EXPECT_LT(at - before, 2e-5 * 0.01);
    EXPECT_LT(at - after, 2e-5 * 0.01);
    EXPECT_GE(at, before);
    EXPECT_GE(at, after);
}

TEST(Schedule, StepsPerEpochDropsSingleTrailingSample) {
    EXPECT_EQ(steps_per_epoch(64, 32), 2u);
    EXPECT_EQ(steps_per_epoch(65, 32), 2u);
    EXPECT_EQ(steps_per_epoch(66, 32), 3u);
    EXPECT_EQ(steps_per_epoch(2000, 32), 63u);
}

TEST(Schedule, DeskRatesAreFiftyTimesPublishedRates) {
    const TrainConfig published, desk = desk_train_config();
    EXPECT_DOUBLE_EQ(desk.base_lr, 50 * published.base_lr);
    EXPECT_DOUBLE_EQ(desk.min_lr, 50 * published.min_lr);
    EXPECT_DOUBLE_EQ(desk.warmup_lr, 50 * published.warmup_lr);
    EXPECT_EQ(default_warmup_epochs(30), 3u);
    EXPECT_EQ(default_warmup_epochs(5), 1u);
    EXPECT_EQ(default_warmup_epochs(1), 0u);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
    TrainConfig c;
    c.weight_decay = 0.1;
    Tensor<double> w({3}, {0.5, -2.0, 4.0}, true), b({2}, {0.5, -1.0}, true);
    w.zero_grad();
    b.zero_grad();
    ParamList<double> ps{{"w", w, ParamKind::Weight}, {"b", b, ParamKind::Bias}};
    AdamState<double> st;
    adamw_step(ps, st, 0.01, c);
    const double k = 1.0 - 0.01 * 0.1;
    EXPECT_EQ(w.data()[0], 0.5 * k);
    EXPECT_EQ(w.data()[1], -2.0 * k);
    EXPECT_EQ(w.data()[2], 4.0 * k);
    EXPECT_EQ(b.data()[0], 0.5);
    EXPECT_EQ(b.data()[1], -1.0);
}

TEST(AdamW, ZeroGradientWithoutDecayIsNoop) {
    TrainConfig c;
    c.weight_decay = 0.0;
    Tensor<double> w({2}, {0.3, 0.7}, true);
    w.zero_grad();
    ParamList<double> ps{{"w", w, ParamKind::Weight}};
    AdamState<double> st;
    for (int i = 0; i < 5; ++i) adamw_step(ps, st, 0.1, c);
    EXPECT_EQ(w.data()[0], 0.3);
    EXPECT_EQ(w.data()[1], 0.7);
}

TEST(AdamW, ThreeStepHandTrace) {
    TrainConfig c;
    c.weight_decay = 0.05;
    Tensor<double> w({2}, {0.4, -0.9}, true);
    ParamList<double> ps{{"w", w, ParamKind::Weight}};
    AdamState<double> st;
    const double g[3][2] = {{0.1, -0.3}, {-0.2, 0.05}, {0.7, 0.0}};
    const double lr[3] = {1e-3, 2e-3, 5e-4};
    double x[2] = {0.4, -0.9}, m[2] = {}, v[2] = {};
    for (int t = 0; t < 3; ++t) {
        w.zero_grad();
        w.grad_mut()[0] = g[t][0];
        w.grad_mut()[1] = g[t][1];
        adamw_step(ps, st, lr[t], c);
        for (int j = 0; j < 2; ++j) {
            x[j] *= 1 - lr[t] * c.weight_decay;
            m[j] = c.beta1 * m[j] + (1 - c.beta1) * g[t][j];
            v[j] = c.beta2 * v[j] + (1 - c.beta2) * g[t][j] * g[t][j];
            const double mh = m[j] / (1 - std::pow(c.beta1, t + 1)), vh = v[j] / (1 - std::pow(c.beta2, t + 1));
            x[j] -= lr[t] * mh / (std::sqrt(vh) + c.eps);
        }
        EXPECT_NEAR(w.data()[0], x[0], 1e-12) << t;
        EXPECT_NEAR(w.data()[1], x[1], 1e-12) << t;
    }
    EXPECT_EQ(st.t, 3u);
}

TEST(AdamW, NoDecayEqualsAdam) {
    TrainConfig c;
    c.weight_decay = 0.0;
    Tensor<double> a({1}, {1.5}, true), b({1}, {1.5}, true);
    ParamList<double> pa{{"a", a, ParamKind::Weight}}, pb{{"b", b, ParamKind::Bias}};
    AdamState<double> sa, sb;
    for (double g : {0.3, -0.1, 0.2}) {
        a.zero_grad();
        b.zero_grad();
        a.grad_mut()[0] = g;
        b.grad_mut()[0] = g;
        adamw_step(pa, sa, 1e-2, c);
        adamw_step(pb, sb, 1e-2, c);
    }
    EXPECT_EQ(a.data()[0], b.data()[0]);
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
    Tensor<double> w({2}, {0.0, 0.0}, true);
    w.zero_grad();
    w.grad_mut()[1] = std::numeric_limits<double>::quiet_NaN();
    ParamList<double> ps{{"enc.stage2.attn.q.weight", w, ParamKind::Weight}};
    AdamState<double> st;
    try {
        adamw_step(ps, st, 1e-3, TrainConfig{});
        FAIL();
    } catch (const NumericInputError& e) {
        EXPECT_NE(std::string(e.what()).find("enc.stage2.attn.q.weight"), std::string::npos);
    }
    EXPECT_EQ(st.t, 0u);
    EXPECT_EQ(w.data()[0], 0.0);
}

TEST(AdamW, TemperatureClampedFromBelow) {
    Tensor<double> tau({2}, {0.0105, 0.5}, true);
    tau.zero_grad();
    tau.grad_mut()[0] = 1.0;
    tau.grad_mut()[1] = 1.0;
    ParamList<double> ps{{"tau", tau, ParamKind::Temperature}};
    AdamState<double> st;
    adamw_step(ps, st, 0.1, TrainConfig{});
    EXPECT_EQ(tau.data()[0], kMinTemperature);
    EXPECT_NEAR(tau.data()[1], 0.4, 1e-6);
}

TEST(AdamW, StateBoundToParameterList) {
    Tensor<double> a({1}, {1.0}, true), b({1}, {1.0}, true);
    AdamState<double> st;
    adamw_step(ParamList<double>{{"a", a, ParamKind::Weight}}, st, 1e-3, TrainConfig{});
    EXPECT_THROW(adamw_step(ParamList<double>{{"a", a, ParamKind::Weight}, {"b", b, ParamKind::Weight}}, st, 1e-3,
                            TrainConfig{}),
                 ContractError);
}

TEST(TrainConfig, Validation) {
    EXPECT_NO_THROW(TrainConfig{}.validate());
    auto bad = [](auto edit) {
        TrainConfig c;
        edit(c);
        return c;
    };
    EXPECT_THROW(bad([](auto& c) { c.min_lr = 1.0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.warmup_lr = 1e-6; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.warmup_epochs = 30; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.total_epochs = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.batch_size = 1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.eval_batch_size = 0; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.mixup_alpha = -0.1; }).validate(), ConfigError);
    EXPECT_THROW(bad([](auto& c) { c.weight_decay = -1; }).validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKey) {
    TrainConfig c = desk_train_config();
    c.beta2 = 0.98;
    c.seed = 77;
    TrainConfig back;
    from_json(to_json(c), back);
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(from_json(Json{{"learning_rate", 1.0}}, back), ConfigError);
}

TEST(Evaluate, BatchSizeInvariant) {
    const auto val = cd25(21, 3);
    const RewardModel<float> m(small_model(Variant::IO_V8));
    const auto a = evaluate(m, val, 1), b = evaluate(m, val, 8), c = evaluate(m, val, 64);
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_EQ(a.predictions, c.predictions);
    EXPECT_EQ(a.correct, c.correct);
    EXPECT_EQ(a.total, 21u);
}

TEST(Evaluate, ConstantClassifierScoresHalfOnBalancedSet) {
    const auto val = cd25(40, 4);
    RewardModel<float> m(small_model());
    for (auto& p : m.parameters())
        if (p.name.rfind("head", 0) == 0) {
            Tensor<float> t = p.tensor;
            std::ranges::fill(t.data(), 0.0f);
        }
    const auto r = evaluate(m, val);
    EXPECT_EQ(r.accuracy, 0.5);
    // ties go to class 0
    EXPECT_EQ(r.confusion[0][0], 20u);
    EXPECT_EQ(r.confusion[1][0], 20u);
}

TEST(Evaluate, RejectsEmptyAndArityMismatch) {
    const RewardModel<float> io(small_model(Variant::IO_V8));
    EXPECT_THROW(evaluate(io, {}), ContractError);
    EXPECT_THROW(evaluate(io, cd25(4, 5), 0), ContractError);
    EXPECT_THROW(evaluate(io, strip_inputs(cd25(4, 5))), ContractError);
    const RewardModel<float> out(small_model());
    EXPECT_NO_THROW(evaluate(out, strip_inputs(cd25(4, 5))));
}

TEST(Train, DeterministicForFixedSeed) {
    const auto data = cd25(64, 6), val = cd25(16, 7);
    auto cfg = small_config();
    cfg.total_epochs = 2;
    RewardModel<float> a(small_model()), b(small_model());
    const auto ra = train(a, data, val, cfg), rb = train(b, data, val, cfg);
    EXPECT_EQ(ra.step_loss, rb.step_loss);
    EXPECT_EQ(ra.history, rb.history);
    EXPECT_EQ(snapshot(a), snapshot(b));
    EXPECT_EQ(ra.steps, 16u);
}

TEST(Train, SeedChangesTrajectory) {
    const auto data = cd25(32, 6), val = cd25(8, 7);
    auto cfg = small_config();
    cfg.total_epochs = 2;
    RewardModel<float> a(small_model()), b(small_model());
    const auto ra = train(a, data, val, cfg);
    cfg.seed += 1;
    const auto rb = train(b, data, val, cfg);
    EXPECT_NE(ra.step_loss, rb.step_loss);
}

TEST(Train, LrTraceFollowsSchedule) {
    const auto data = cd25(34, 8), val = cd25(8, 9);
    const auto cfg = small_config();
    RewardModel<float> m(small_model());
    const auto r = train(m, data, val, cfg);
    const std::size_t spe = steps_per_epoch(34, 8);
    ASSERT_EQ(spe, 5u);
    ASSERT_EQ(r.lr_trace.size(), 15u);
    for (std::size_t t = 0; t < 15; ++t) EXPECT_EQ(r.lr_trace[t], lr_at(t, cfg, spe)) << t;
    EXPECT_LT(rel(r.lr_trace.back(), cfg.min_lr), 1e-12);
    ASSERT_EQ(r.history.size(), 3u);
    EXPECT_EQ(r.history.back().lr, static_cast<double>(static_cast<float>(r.lr_trace.back())));
}

TEST(Train, ResumeContinuesSameTrajectory) {
    const auto data = cd25(48, 10), val = cd25(12, 11);
    const auto cfg = small_config();
    RewardModel<float> full(small_model());
    const auto rf = train(full, data, val, cfg);

    const auto dir = scratch("resume");
    RewardModel<float> first(small_model());
    TrainOptions o1;
    o1.out_dir = dir;
    o1.stop_after_epochs = 1;
    const auto r1 = train(first, data, val, cfg, o1);
    EXPECT_EQ(r1.epochs_completed, 1u);
    ASSERT_TRUE(fs::exists(dir / "last.ckpt"));
    ASSERT_TRUE(fs::exists(dir / "metrics.csv"));

    // a fresh model with different weights; everything must come from the checkpoint
    auto other = small_model();
    RewardModel<float> second(other);
    for (auto& p : second.parameters()) {
        Tensor<float> t = p.tensor;
        std::ranges::fill(t.data(), 0.5f);
    }
    TrainOptions o2;
    o2.resume_from = dir / "last.ckpt";
    const auto r2 = train(second, data, val, cfg, o2);

    EXPECT_EQ(snapshot(second), snapshot(full));
    EXPECT_EQ(r2.history, rf.history);
    EXPECT_EQ(r2.steps, rf.steps);
    std::vector<double> joined = r1.step_loss;
    joined.insert(joined.end(), r2.step_loss.begin(), r2.step_loss.end());
    EXPECT_EQ(joined, rf.step_loss);
    EXPECT_EQ(r2.best_accuracy, rf.best_accuracy);
    EXPECT_EQ(r2.best_epoch, rf.best_epoch);
}

TEST(Train, CheckpointCarriesOptimizerAndMetrics) {
    const auto data = cd25(16, 12), val = cd25(4, 13);
    auto cfg = small_config();
    cfg.total_epochs = 2;
    const auto dir = scratch("ckpt");
    RewardModel<float> m(small_model());
    TrainOptions o;
    o.out_dir = dir;
    train(m, data, val, cfg, o);
    const auto c = Checkpoint::load(dir / "last.ckpt");
    EXPECT_EQ(c.config_hash, config_hash(m.config()));
    EXPECT_EQ(c.at("state/step").values.at(0), 4.0f);
    EXPECT_EQ(c.at("state/epoch").values.at(0), 2.0f);
    EXPECT_EQ(c.at("metrics/history").shape, (Shape{2, 4}));
    for (const auto& p : m.parameters()) {
        EXPECT_NE(c.find("param/" + p.name), nullptr) << p.name;
        EXPECT_NE(c.find("adam.m/" + p.name), nullptr) << p.name;
        EXPECT_NE(c.find("adam.v/" + p.name), nullptr) << p.name;
    }
    EXPECT_TRUE(fs::exists(dir / "best.ckpt"));
}

TEST(Train, StopAtAccuracyEndsEarly) {
    const auto data = cd25(16, 14), val = cd25(4, 15);
    auto cfg = small_config();
    cfg.stop_at_accuracy = 1e-9; // any epoch qualifies
    RewardModel<float> m(small_model());
    const auto r = train(m, data, val, cfg);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.epochs_completed, 1u);
}

TEST(Train, RejectsDegenerateInputs) {
    RewardModel<float> io(small_model(Variant::IO_V8));
    const auto cfg = small_config();
    EXPECT_THROW(train(io, cd25(1, 16), cd25(4, 17), cfg), ContractError);
    EXPECT_THROW(train(io, cd25(8, 16), {}, cfg), ContractError);
    EXPECT_THROW(train(io, strip_inputs(cd25(8, 16)), cd25(4, 17), cfg), ContractError);
    auto bad = cfg;
    bad.batch_size = 1;
    EXPECT_THROW(train(io, cd25(8, 16), cd25(4, 17), bad), ConfigError);
}

TEST(Train, OptimizationReducesLossOnTinySet) {
    // eight samples, no mixup: a healthy gradient path should fit them
    const auto data = cd25(8, 18);
    auto cfg = small_config();
    cfg.total_epochs = 25;
    cfg.warmup_epochs = 2;
    cfg.mixup_alpha = 0;
    RewardModel<float> m(small_model(Variant::IO_V8));
    const auto r = train(m, data, data, cfg);
    EXPECT_LT(r.step_loss.back(), 0.5 * r.step_loss.front());
}
