#include "iorm/datagen.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <map>

using namespace iorm;

namespace {

DatasetSpec cd25(std::size_t n, std::uint64_t seed = 0) {
    DatasetSpec s;
    s.num_samples = n;
    s.master_seed = seed;
    return s;
}

DatasetSpec seg(std::size_t n, std::vector<Corruption> menu, std::uint64_t seed = 0) {
    DatasetSpec s;
    s.kind = DatasetKind::SEG_SYNTH;
    s.num_samples = n;
    s.corruption_menu = std::move(menu);
    s.master_seed = seed;
    return s;
}

double chi2_p(const std::vector<std::size_t>& counts) {
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    const double e = total / static_cast<double>(counts.size());
    double stat = 0;
    for (auto c : counts) stat += (static_cast<double>(c) - e) * (static_cast<double>(c) - e) / e;
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return 1.0 - boost::math::cdf(dist, stat);
}

std::size_t foreground(const std::vector<std::uint8_t>& m) { return std::count(m.begin(), m.end(), 1); }

} // namespace

TEST(Cd25, CategoryHistogramUniform) {
    const auto all = generate_range(cd25(1000, 7), 0, 1000);
    std::vector<std::size_t> cin(5), cout(5);
    for (const auto& s : all) {
        ++cin[s.category_in];
        ++cout[s.category_out];
    }
    EXPECT_GT(chi2_p(cin), 0.01);
    EXPECT_GT(chi2_p(cout), 0.01);
}

TEST(Cd25, LabelBalance) {
    const auto all = generate_range(cd25(1000, 8), 0, 1000);
    double pos = 0;
    for (const auto& s : all) pos += s.label;
    EXPECT_NEAR(pos / 1000.0, 0.5, 0.01);
    const auto split = generate_split(cd25(1000, 8));
    for (const auto* part : {&split.train, &split.val}) {
        double p = 0;
        for (const auto& s : *part) p += s.label;
        EXPECT_NEAR(p / static_cast<double>(part->size()), 0.5, 0.01);
    }
}

TEST(Cd25, IdentityRelation) {
    const auto spec = cd25(400, 9);
    bool saw_three = false;
    for (std::size_t i = 0; i < 400; ++i) {
        const auto s = gen_cd25_pair(spec, i);
        if (s.label == 1) EXPECT_EQ(s.category_out, s.category_in);
        else EXPECT_NE(s.category_out, s.category_in);
        saw_three = saw_three || (s.label == 1 && s.category_in == 3);
    }
    EXPECT_TRUE(saw_three);
}

TEST(Cd25, PermutedRelationIsDerangement) {
    auto spec = cd25(400, 10);
    spec.relation = PairingRelation::Permuted;
    const auto rel = pairing_relation(spec);
    std::vector<std::size_t> sorted = rel;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < rel.size(); ++k) {
        EXPECT_NE(rel[k], k);
        EXPECT_EQ(sorted[k], k);
    }
    for (std::size_t i = 0; i < 400; ++i) {
        const auto s = gen_cd25_pair(spec, i);
        EXPECT_EQ(s.label == 1, s.category_out == rel[s.category_in]) << i;
    }
}

TEST(Cd25, PixelsInUnitRange) {
    const auto s = gen_cd25_pair(cd25(4), 2);
    ASSERT_EQ(s.input_image.size(), 3u * 32 * 32);
    ASSERT_EQ(s.output_image.size(), 3u * 32 * 32);
    for (float v : s.input_image) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : s.output_image) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Cd25, RegenerationIsBitIdentical) {
    const auto spec = cd25(100, 11);
    EXPECT_EQ(gen_cd25_pair(spec, 42), gen_cd25_pair(spec, 42));
    EXPECT_NE(gen_cd25_pair(spec, 42), gen_cd25_pair(spec, 44));
    EXPECT_NE(gen_cd25_pair(spec, 42).seed, gen_cd25_pair(cd25(100, 12), 42).seed);
}

TEST(Cd25, IndexOutOfRange) { EXPECT_THROW(gen_cd25_pair(cd25(10), 10), ContractError); }

// Pixel-level logistic regression on [input | output] cannot read the
// category relation off the pixels.
TEST(Cd25, LogisticBaselineStaysBelowEightyPercent) {
    const auto split = generate_split(cd25(1500, 13));
    const std::size_t d = 2 * 3 * 32 * 32;
    auto features = [&](const PairSample& s) {
        std::vector<double> f(d + 1, 1.0);
        for (std::size_t i = 0; i < s.input_image.size(); ++i) f[i] = s.input_image[i] - 0.5;
        for (std::size_t i = 0; i < s.output_image.size(); ++i) f[d / 2 + i] = s.output_image[i] - 0.5;
        return f;
    };
    std::vector<std::vector<double>> xtr, xva;
    for (const auto& s : split.train) xtr.push_back(features(s));
    for (const auto& s : split.val) xva.push_back(features(s));
    std::vector<double> w(d + 1, 0.0);
    for (int epoch = 0; epoch < 30; ++epoch)
        for (std::size_t i = 0; i < xtr.size(); ++i) {
            double z = 0;
            for (std::size_t j = 0; j <= d; ++j) z += w[j] * xtr[i][j];
            const double g = 1.0 / (1.0 + std::exp(-z)) - split.train[i].label;
            for (std::size_t j = 0; j <= d; ++j) w[j] -= 1e-3 * (g * xtr[i][j] + 1e-4 * w[j]);
        }
    auto accuracy = [&](const std::vector<std::vector<double>>& x, const std::vector<PairSample>& ys) {
        double correct = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double z = 0;
            for (std::size_t j = 0; j <= d; ++j) z += w[j] * x[i][j];
            correct += (z > 0) == (ys[i].label == 1);
        }
        return correct / static_cast<double>(x.size());
    };
    const double train_acc = accuracy(xtr, split.train), val_acc = accuracy(xva, split.val);
    RecordProperty("logistic_train_accuracy", std::to_string(train_acc));
    RecordProperty("logistic_val_accuracy", std::to_string(val_acc));
    EXPECT_GT(train_acc, 0.6); // it does fit its own training set
    EXPECT_LT(val_acc, 0.80);
}

TEST(Seg, PositivesMatchForegroundExactly) {
    const auto spec = seg(60, {Corruption::Translate, Corruption::DropShape}, 14);
    for (std::size_t i = 0; i < 60; i += 2) {
        const auto p = gen_seg_pair_detailed(spec, i);
        ASSERT_EQ(p.sample.label, 1);
        EXPECT_EQ(p.corruption, Corruption::None);
        EXPECT_EQ(detail::iou(p.mask, p.foreground), 1.0);
    }
}

TEST(Seg, EveryCorruptionIsUnambiguous) {
    const std::vector<Corruption> menu{Corruption::Translate, Corruption::DilateErode, Corruption::DropShape,
                                       Corruption::PhantomShape, Corruption::ThresholdNoise};
    const auto spec = seg(400, menu, 15);
    std::map<Corruption, std::size_t> seen;
    for (std::size_t i = 1; i < 400; i += 2) {
        const auto p = gen_seg_pair_detailed(spec, i);
        ASSERT_EQ(p.sample.label, 0);
        ++seen[p.corruption];
        EXPECT_EQ(p.sample.category_out, static_cast<std::uint16_t>(p.corruption));
        const double j = detail::iou(p.mask, p.foreground);
        std::size_t diff = 0;
        for (std::size_t k = 0; k < p.mask.size(); ++k) diff += p.mask[k] != p.foreground[k];
        switch (p.corruption) {
        case Corruption::Translate:
        case Corruption::DropShape:
        case Corruption::PhantomShape: EXPECT_LT(j, 0.8) << to_string(p.corruption) << " at " << i; break;
        case Corruption::ThresholdNoise: EXPECT_GE(diff, static_cast<std::size_t>(std::ceil(0.05 * 1024))); break;
        case Corruption::DilateErode: EXPECT_GT(diff, 0u); break;
        case Corruption::None: ADD_FAILURE() << "negative without corruption";
        }
    }
    EXPECT_EQ(seen.size(), menu.size());
}

TEST(Seg, TranslateMovesAtLeastTenPercent) {
    const auto spec = seg(200, {Corruption::Translate}, 16);
    for (std::size_t i = 1; i < 200; i += 2) {
        const auto p = gen_seg_pair_detailed(spec, i);
        auto centroid = [](const std::vector<std::uint8_t>& m) {
            double cx = 0, cy = 0, n = 0;
            for (std::size_t k = 0; k < m.size(); ++k)
                if (m[k]) cx += static_cast<double>(k % 32), cy += static_cast<double>(k / 32), ++n;
            return std::pair{cx / n, cy / n};
        };
        ASSERT_GT(foreground(p.mask), 0u);
        const auto [ax, ay] = centroid(p.mask);
        const auto [bx, by] = centroid(p.foreground);
        EXPECT_GE(std::hypot(ax - bx, ay - by), 0.1 * 32) << i;
        EXPECT_LT(detail::iou(p.mask, p.foreground), 0.8);
    }
}

TEST(Seg, TranslateMaskDistributionIndependentOfLabel) {
    const auto spec = seg(2000, {Corruption::Translate}, 17);
    double fg[2] = {0, 0}, sq[2] = {0, 0}, shapes[2] = {0, 0};
    std::size_t n[2] = {0, 0};
    for (std::size_t i = 0; i < 2000; ++i) {
        const auto p = gen_seg_pair_detailed(spec, i);
        const double f = static_cast<double>(foreground(p.mask)) / 1024.0;
        const int l = p.sample.label;
        fg[l] += f;
        sq[l] += f * f;
        shapes[l] += p.sample.category_in;
        ++n[l];
    }
    const double m0 = fg[0] / n[0], m1 = fg[1] / n[1];
    const double v0 = sq[0] / n[0] - m0 * m0, v1 = sq[1] / n[1] - m1 * m1;
    const double se = std::sqrt(v0 / n[0] + v1 / n[1]);
    EXPECT_LT(std::abs(m0 - m1), 4 * se);
    EXPECT_NEAR(shapes[0] / n[0], shapes[1] / n[1], 0.15);
}

TEST(Seg, MaskPlanesAreBinaryAndBroadcast) {
    const auto s = gen_seg_pair(seg(10, {Corruption::ThresholdNoise}), 3);
    const std::size_t plane = 32 * 32;
    for (std::size_t i = 0; i < plane; ++i) {
        const float v = s.output_image[i];
        ASSERT_TRUE(v == 0.0f || v == 1.0f);
        EXPECT_EQ(s.output_image[plane + i], v);
        EXPECT_EQ(s.output_image[2 * plane + i], v);
    }
}

TEST(Seg, ShapeCountBetweenOneAndThree) {
    const auto spec = seg(100, {Corruption::Translate}, 18);
    for (std::size_t i = 0; i < 100; ++i) {
        const auto s = gen_seg_pair(spec, i);
        EXPECT_GE(s.category_in, 1);
        EXPECT_LE(s.category_in, 3);
    }
}

TEST(Seg, RegenerationIsBitIdentical) {
    const auto spec = seg(100, {Corruption::Translate, Corruption::PhantomShape}, 19);
    EXPECT_EQ(gen_seg_pair(spec, 42), gen_seg_pair(spec, 42));
}

TEST(Spec, Validation) {
    auto s = seg(10, {});
    EXPECT_THROW(s.validate(), ConfigError);
    s = cd25(10);
    s.num_categories = 1;
    EXPECT_THROW(s.validate(), ConfigError);
    s = cd25(10);
    s.train_fraction = 1.5;
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Split, DisjointByIndexRange) {
    const auto spec = cd25(50, 20);
    const auto split = generate_split(spec);
    ASSERT_EQ(split.train.size(), 40u);
    ASSERT_EQ(split.val.size(), 10u);
    EXPECT_EQ(split.train.back(), gen_cd25_pair(spec, 39));
    EXPECT_EQ(split.val.front(), gen_cd25_pair(spec, 40));
}

TEST(Mixup, LambdaOneKeepsBatch) {
    const auto b = make_batch<float>(generate_range(cd25(4), 0, 4));
    const auto m = mixup_with(b, 1.0, {3, 2, 1, 0});
    EXPECT_EQ(m.x_in.values(), b.x_in.values());
    EXPECT_EQ(m.x_out.values(), b.x_out.values());
    EXPECT_EQ(m.targets.values(), b.targets.values());
}

TEST(Mixup, MidpointSoftLabel) {
    const auto b = make_batch<double>(generate_range(cd25(2), 0, 2));
    ASSERT_EQ(b.targets.values(), (std::vector<double>{0, 1, 1, 0}));
    const auto m = mixup_with(b, 0.5, {1, 0});
    for (double t : m.targets.values()) EXPECT_EQ(t, 0.5);
}

TEST(Mixup, MeansAreLinear) {
    const auto b = make_batch<double>(generate_range(cd25(6, 21), 0, 6));
    const std::vector<std::size_t> partner{5, 4, 3, 2, 1, 0};
    const double lam = 0.3;
    const auto m = mixup_with(b, lam, partner);
    const std::size_t per = 3 * 32 * 32;
    auto mean = [&](const Tensor<double>& t, std::size_t s) {
        double acc = 0;
        for (std::size_t i = 0; i < per; ++i) acc += t.data()[s * per + i];
        return acc / per;
    };
    for (std::size_t s = 0; s < 6; ++s) {
        EXPECT_NEAR(mean(m.x_in, s), lam * mean(b.x_in, s) + (1 - lam) * mean(b.x_in, partner[s]), 1e-6);
        EXPECT_NEAR(mean(m.x_out, s), lam * mean(b.x_out, s) + (1 - lam) * mean(b.x_out, partner[s]), 1e-6);
    }
}

TEST(Mixup, SameLambdaForImagesAndLabels) {
    const auto b = make_batch<double>(generate_range(cd25(8, 22), 0, 8));
    Rng rng(23);
    const auto m = mixup(b, 0.8, rng);
    const std::size_t per = 3 * 32 * 32;
    std::size_t checked = 0;
    for (std::size_t s = 0; s < 8; ++s) {
        // find the partner: the sample whose pixels explain the mix
        for (std::size_t q = 0; q < 8; ++q) {
            if (q == s) continue;
            std::size_t px = 0;
            while (px < per && b.x_out.data()[s * per + px] == b.x_out.data()[q * per + px]) ++px;
            const double lam = (m.x_out.data()[s * per + px] - b.x_out.data()[q * per + px]) /
                               (b.x_out.data()[s * per + px] - b.x_out.data()[q * per + px]);
            double worst = 0;
            for (std::size_t i = 0; i < per; ++i)
                worst = std::max(worst, std::abs(lam * b.x_out.data()[s * per + i] +
                                                 (1 - lam) * b.x_out.data()[q * per + i] - m.x_out.data()[s * per + i]));
            if (worst > 1e-9) continue;
            EXPECT_NEAR(m.targets.data()[2 * s + 1],
                        lam * b.targets.data()[2 * s + 1] + (1 - lam) * b.targets.data()[2 * q + 1], 1e-9);
            EXPECT_NEAR(m.x_in.data()[s * per + 17],
                        lam * b.x_in.data()[s * per + 17] + (1 - lam) * b.x_in.data()[q * per + 17], 1e-9);
            ++checked;
            break;
        }
    }
    EXPECT_GT(checked, 0u);
}

TEST(Mixup, BatchOfOneRejected) {
    const auto b = make_batch<float>(generate_range(cd25(1), 0, 1));
    Rng rng(24);
    EXPECT_THROW(mixup(b, 0.8, rng), ContractError);
    const auto two = make_batch<float>(generate_range(cd25(2), 0, 2));
    EXPECT_THROW(mixup(two, 0.0, rng), ContractError);
}

TEST(Mixup, BetaSamplesInUnitInterval) {
    Rng rng(25);
    double mean = 0;
    for (int i = 0; i < 4000; ++i) {
        const double l = sample_beta(0.8, rng);
        ASSERT_TRUE(l >= 0.0 && l <= 1.0);
        mean += l / 4000;
    }
    EXPECT_NEAR(mean, 0.5, 0.02);
}

TEST(Batch, OutputOnlyLeavesInputUndefined) {
    const auto samples = strip_inputs(generate_range(cd25(3), 0, 3));
    const auto b = make_batch<float>(samples);
    EXPECT_FALSE(b.x_in.defined());
    EXPECT_EQ(b.x_out.shape(), (Shape{3, 3, 32, 32}));
}
