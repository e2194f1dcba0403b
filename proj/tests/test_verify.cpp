#include "iorm/verify.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace iorm;

TEST(Suite, NamesUniqueAndScoped) {
    const auto rep = verify::run_suite();
    std::set<std::string> names;
    for (const auto& c : rep.checks) {
        EXPECT_TRUE(names.insert(c.name).second) << "duplicate " << c.name;
        EXPECT_EQ(c.name.rfind(c.scope + ".", 0), 0u) << c.name;
    }
    for (const char* s : {"tensor", "encoder", "cross", "models", "schedule"})
        EXPECT_TRUE(std::ranges::any_of(rep.checks, [&](const auto& c) { return c.scope == s; })) << s;
    EXPECT_TRUE(rep.all_passed()) << rep.to_text();
}

TEST(Suite, DeterministicAcrossRuns) {
    const auto a = verify::run_suite(verify::Scope::Encoder), b = verify::run_suite(verify::Scope::Encoder);
    ASSERT_EQ(a.checks.size(), b.checks.size());
    for (std::size_t k = 0; k < a.checks.size(); ++k) {
        EXPECT_EQ(a.checks[k].measured, b.checks[k].measured) << a.checks[k].name;
        EXPECT_EQ(a.checks[k].seed, b.checks[k].seed);
    }
}

TEST(Suite, ScopeSelectsSubset) {
    const auto rep = verify::run_suite(verify::Scope::Schedule);
    ASSERT_FALSE(rep.checks.empty());
    for (const auto& c : rep.checks) EXPECT_EQ(c.scope, "schedule");
    EXPECT_NE(rep.find("schedule.adamw_hand_trace"), nullptr);
    EXPECT_EQ(rep.find("tensor.matmul_reference"), nullptr);
}

TEST(Suite, ReportCarriesSeedAndTolerance) {
    const auto rep = verify::run_suite(verify::Scope::Tensor);
    const auto* c = rep.find("tensor.matmul_reference");
    ASSERT_NE(c, nullptr);
    EXPECT_EQ(c->seed, 101u);
    EXPECT_EQ(c->tolerance, 1e-12);
    const auto csv = rep.to_csv();
    EXPECT_EQ(csv.rfind("scope,check,status,measured,tolerance,seed,detail\n", 0), 0u);
    EXPECT_NE(csv.find("tensor,tensor.matmul_reference,PASS,"), std::string::npos);
    EXPECT_NE(rep.to_text().find("checks passed"), std::string::npos);
}

TEST(Suite, ScopeNames) {
    EXPECT_EQ(verify::scope_from_string("all"), verify::Scope::All);
    EXPECT_EQ(verify::scope_from_string("cross"), verify::Scope::Cross);
    EXPECT_THROW(verify::scope_from_string("everything"), ConfigError);
}

TEST(FiniteDiff, QuadraticIsExactUnderCentralDifferences) {
    // f = sum(w^2) has a vanishing third derivative, so the central
    // difference error is rounding only
    Tensor<double> w({5}, {0.3, -1.2, 2.5, 0.0, -0.7}, true);
    ParamList<double> ps{{"w", w, ParamKind::Weight}};
    const auto rep = verify::finite_diff_check([&] { return sum(mul(w, w)); }, ps, verify::FdOptions{1e-4, 5, 0, 1.0, 1});
    EXPECT_EQ(rep.checked, 5u);
    EXPECT_LT(rep.max_rel_err, 1e-10);
}

TEST(FiniteDiff, LinearHeadWideStep) {
    Rng rng(2);
    Linear<double> head(64, 2, rng);
    verify::detail::perturb_bias(head, rng);
    const auto x = verify::detail::random_tensor<double>({3, 64}, rng);
    const auto probe = verify::random_projection({3, 2}, 3);
    ParamList<double> ps;
    head.collect(ps, "head");
    const auto rep =
        verify::finite_diff_check([&] { return probe(head(x)); }, ps, verify::FdOptions{1e-3, 1000, 0, 1e-3, 4});
    EXPECT_EQ(rep.checked, 130u);
    EXPECT_LT(rep.max_rel_err, 1e-10);
}

TEST(FiniteDiff, DetectsWrongGradient) {
    // detach hides the dependence of the second factor from autodiff
    Tensor<double> w({3}, {0.5, 1.5, -1.0}, true);
    ParamList<double> ps{{"w", w, ParamKind::Weight}};
    const auto rep = verify::finite_diff_check([&] { return sum(mul(w, w.detach())); }, ps, verify::FdOptions{1e-6, 3, 0, 1e-3, 5});
    EXPECT_GT(rep.max_rel_err, 0.4);
}

TEST(FiniteDiff, CoordinateBudgetAcrossTensors) {
    Tensor<double> a({40}, std::vector<double>(40, 0.1), true), b({10}, std::vector<double>(10, 0.2), true);
    ParamList<double> ps{{"a", a, ParamKind::Weight}, {"b", b, ParamKind::Bias}};
    auto f = [&] { return add(sum(mul(a, a)), sum(mul(b, b))); };
    EXPECT_EQ(verify::finite_diff_check(f, ps, verify::FdOptions{1e-5, 8, 0, 1e-3, 6}).checked, 16u);
    EXPECT_EQ(verify::finite_diff_check(f, ps, verify::FdOptions{1e-5, 8, 25, 1e-3, 6}).checked, 25u);
}

TEST(FiniteDiff, NonFiniteLossNamesCoordinate) {
    Tensor<double> w({2}, {1.0, 1e-7}, true);
    ParamList<double> ps{{"w", w, ParamKind::Weight}};
    // the loss turns NaN once w[1] is stepped below zero
    auto loss = [&] {
        const auto l = sum(mul(w, w));
        return w.data()[1] < 0 ? scale(l, std::numeric_limits<double>::quiet_NaN()) : l;
    };
    try {
        verify::finite_diff_check(loss, ps, verify::FdOptions{1e-6, 2, 0, 1e-3, 7});
        FAIL();
    } catch (const NumericInputError& e) {
        EXPECT_NE(std::string(e.what()).find("w[1]"), std::string::npos) << e.what();
    }
}

TEST(Projection, DeterministicAndSeedSensitive) {
    const Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto p = verify::random_projection({2, 3}, 8), q = verify::random_projection({2, 3}, 8),
               r = verify::random_projection({2, 3}, 9);
    EXPECT_EQ(p(x).item(), q(x).item());
    EXPECT_NE(p(x).item(), r(x).item());
}
