#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "copdet/design.hpp"
#include "copdet/random.hpp"

using namespace copdet;

namespace {

const MarginalModel g34{MarginalFamily::Gamma, 3, 4};
const MarginalModel g54{MarginalFamily::Gamma, 5, 4};
const MarginalModel g74{MarginalFamily::Gamma, 7, 4};

const CostCoefficients kCosts{0.0, 1.0, 2.0, 0.0};

SensorGrid grid(double delta = 0.5) { return SensorGrid(0.0, 60.0, delta); }

QuantizerBank initial_bank(double delta = 0.5) {
    return QuantizerBank({SensorQuantizer::affine(grid(delta), 3, -60), SensorQuantizer::affine(grid(delta), -3, 60)});
}

ParamVector truth(double theta = 2.1316, double p0 = 0.8) {
    ParamVector p(p0, independent_model({g34, g54}), clayton_model(theta, {g54, g74}));
    p.set_free("p1");
    p.set_free("h1.theta");
    return p;
}

DesignState entry(const QuantizerBank& bank, const ParamVector& p) {
    return DesignState{0, bank, FusionRule::or_rule(bank), p, {}, 0, false};
}

QuantizedPmf pmf(std::vector<double> v) { return QuantizedPmf{std::move(v), "test"}; }

double cost_of(const QuantizerBank& bank, const FusionRule& rule, const ParamVector& p,
               const CostCoefficients& c = kCosts) {
    return bayes_cost(bank, rule, p, c).bayes_cost;
}

}  // namespace

TEST(FusionRule, Constructors) {
    const auto bank = initial_bank();
    EXPECT_EQ(FusionRule::or_rule(bank).decisions, (std::vector<std::uint8_t>{0, 1, 1, 1}));
    EXPECT_EQ(FusionRule::and_rule(bank).decisions, (std::vector<std::uint8_t>{0, 0, 0, 1}));
    EXPECT_EQ(FusionRule::constant(4, true).decisions, (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(BayesCost, ConstantRules) {
    const auto f0 = pmf({0.4, 0.3, 0.2, 0.1});
    const auto f1 = pmf({0.1, 0.2, 0.3, 0.4});
    const auto never = bayes_cost(f0, f1, FusionRule::constant(4, false), 0.8, kCosts);
    EXPECT_EQ(never.p_false_alarm, 0.0);
    EXPECT_EQ(never.p_detect, 0.0);
    EXPECT_NEAR(never.bayes_cost, 0.2 * 1.0, 1e-15);
    const auto always = bayes_cost(f0, f1, FusionRule::constant(4, true), 0.8, kCosts);
    EXPECT_NEAR(always.p_false_alarm, 1.0, 1e-15);
    EXPECT_NEAR(always.p_detect, 1.0, 1e-15);
    EXPECT_NEAR(always.bayes_cost, 0.8 * 2.0, 1e-15);
}

TEST(BayesCost, HandComputed) {
    const auto f0 = pmf({0.4, 0.3, 0.2, 0.1});
    const auto f1 = pmf({0.1, 0.2, 0.3, 0.4});
    const CostCoefficients c{0.5, 3.0, 2.0, 0.25};
    FusionRule r{{0, 0, 1, 1}};
    const auto m = bayes_cost(f0, f1, r, 0.6, c);
    EXPECT_NEAR(m.p_false_alarm, 0.3, 1e-15);
    EXPECT_NEAR(m.p_detect, 0.7, 1e-15);
    EXPECT_NEAR(m.bayes_cost, 0.5 * 0.6 * 0.7 + 3.0 * 0.4 * 0.3 + 2.0 * 0.6 * 0.3 + 0.25 * 0.4 * 0.7, 1e-15);
    EXPECT_THROW(bayes_cost(f0, f1, FusionRule::constant(3, false), 0.6, c), std::invalid_argument);
}

TEST(BayesCost, AgreesWithMonteCarlo) {
    const auto p = truth();
    const auto bank = initial_bank();
    const auto rule = FusionRule::or_rule(bank);
    const auto m = bayes_cost(bank, rule, p, kCosts);
    Rng rng(77);
    const std::size_t n = 1000000;
    std::vector<std::uint8_t> labels;
    const auto y = sample_mixture(p, rng, n, &labels);
    std::size_t n1 = 0, fa = 0, det = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const bool d = rule.decisions[bank.quantize(std::span<const double>(&y[2 * k], 2))];
        if (labels[k]) {
            ++n1;
            det += d;
        } else {
            fa += d;
        }
    }
    const double pf = static_cast<double>(fa) / static_cast<double>(n - n1);
    const double pd = static_cast<double>(det) / static_cast<double>(n1);
    EXPECT_NEAR(static_cast<double>(n1) / n, 0.2, 3.0 * std::sqrt(0.16 / n));
    // Sampling error plus the mass the grid window leaves out.
    EXPECT_NEAR(pf, m.p_false_alarm, 3.0 * std::sqrt(pf * (1 - pf) / (n - n1)) + 1e-3);
    EXPECT_NEAR(pd, m.p_detect, 3.0 * std::sqrt(pd * (1 - pd) / n1) + 1e-3);
}

TEST(OptimalFusionRule, LikelihoodRatioThreshold) {
    // Decide 1 iff f1 / f0 >= P0 (C10 - C00) / (P1 (C01 - C11)) = 8.
    const auto f0 = pmf({0.5, 0.1, 0.01, 0.39, 0.0});
    const auto f1 = pmf({0.1, 0.7, 0.09, 0.0, 0.11});
    const auto r = optimal_fusion_rule(f0, f1, 0.8, kCosts);
    EXPECT_EQ(r.decisions, (std::vector<std::uint8_t>{0, 0, 1, 0, 1}));
}

TEST(OptimalFusionRule, TiesDecideOneAndEmptyOutcomesDecideZero) {
    const CostCoefficients unit{0.0, 1.0, 1.0, 0.0};
    const auto f0 = pmf({0.25, 0.5, 0.0, 0.25});
    const auto f1 = pmf({0.25, 0.25, 0.0, 0.5});
    const auto r = optimal_fusion_rule(f0, f1, 0.5, unit);
    EXPECT_EQ(r.decisions, (std::vector<std::uint8_t>{1, 0, 0, 1}));
}

TEST(OptimalFusionRule, BeatsEveryRuleExhaustively) {
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(4), b(4);
        double sa = 0, sb = 0;
        for (int u = 0; u < 4; ++u) {
            sa += a[u] = rng.uniform();
            sb += b[u] = rng.uniform();
        }
        for (int u = 0; u < 4; ++u) {
            a[u] /= sa;
            b[u] /= sb;
        }
        const double p0 = 0.05 + 0.9 * rng.uniform();
        const CostCoefficients c{rng.uniform(), 1.0 + rng.uniform(), 1.0 + 2.0 * rng.uniform(), 0.5 * rng.uniform()};
        const auto f0 = pmf(a), f1 = pmf(b);
        const double opt = bayes_cost(f0, f1, optimal_fusion_rule(f0, f1, p0, c), p0, c).bayes_cost;
        double best = 1e300;
        for (int code = 0; code < 16; ++code) {
            FusionRule r = FusionRule::constant(4, false);
            for (int u = 0; u < 4; ++u) r.decisions[u] = (code >> u) & 1;
            best = std::min(best, bayes_cost(f0, f1, r, p0, c).bayes_cost);
        }
        EXPECT_NEAR(opt, best, 1e-14) << "trial " << trial;
    }
}

TEST(OptimizeQuantizers, CostTraceIsMonotoneAndBounded) {
    const auto p = truth();
    const auto st = optimize_quantizers(entry(initial_bank(), p), p, kCosts);
    ASSERT_GE(st.cost_trace.size(), 2u);
    for (std::size_t k = 1; k < st.cost_trace.size(); ++k) {
        EXPECT_LE(st.cost_trace[k], st.cost_trace[k - 1] + 1e-12);
    }
    EXPECT_TRUE(st.converged);
    EXPECT_LE(st.sweeps, 50u);
    EXPECT_NEAR(st.cost_trace.front(), cost_of(initial_bank(), FusionRule::or_rule(initial_bank()), p), 1e-12);
    EXPECT_NEAR(st.cost_trace.back(), cost_of(st.bank, st.rule, p), 1e-12);
}

TEST(OptimizeQuantizers, NoSingleCellFlipImproves) {
    const auto p = truth();
    const auto st = design_system(entry(initial_bank(), p), p, kCosts);
    const double base = cost_of(st.bank, st.rule, p);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t m = 0; m < 120; ++m) {
            QuantizerBank b = st.bank;
            b.sensor(i).set_pattern(m, b.sensor(i).pattern(m) ^ 1u);
            EXPECT_GE(cost_of(b, st.rule, p), base - 1e-12) << "sensor " << i << " cell " << m;
        }
    }
    EXPECT_EQ(st.rule, optimal_fusion_rule(st.bank, p, kCosts));
}

TEST(OptimizeQuantizers, MatchesNaiveFullRecomputeDescent) {
    const auto p = truth(1.0759);
    const SensorGrid g = grid(5.0);
    const SensorGrid gs[2] = {g, g};
    const auto t0 = cell_mass(p.h0(), gs);
    const auto t1 = cell_mass(p.h1(), gs);
    const QuantizerBank start({SensorQuantizer::affine(g, 3, -60), SensorQuantizer::affine(g, -3, 60)});

    // Same visiting order, every candidate scored by a full pmf recomputation.
    QuantizerBank bank = start;
    FusionRule rule = FusionRule::or_rule(bank);
    auto full = [&](const QuantizerBank& b) {
        return bayes_cost(quantized_pmf(t0, b), quantized_pmf(t1, b), rule, p.p0(), kCosts).bayes_cost;
    };
    std::size_t sweeps = 0;
    for (;;) {
        ++sweeps;
        bool changed = false;
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t m = 0; m < g.cell_count(); ++m) {
                const std::uint32_t inc = bank.sensor(i).pattern(m);
                QuantizerBank alt = bank;
                alt.sensor(i).set_pattern(m, inc ^ 1u);
                if (full(alt) < full(bank) - 1e-13) {
                    bank = alt;
                    changed = true;
                }
            }
        }
        const auto next = optimal_fusion_rule(quantized_pmf(t0, bank), quantized_pmf(t1, bank), p.p0(), kCosts);
        const bool rule_changed = !(next == rule);
        rule = next;
        if (!changed && !rule_changed) break;
        ASSERT_LT(sweeps, 100u);
    }

    const auto st = optimize_quantizers(DesignState{0, start, FusionRule::or_rule(start), p, {}, 0, false}, t0, t1,
                                        p.p0(), kCosts);
    EXPECT_EQ(st.bank, bank);
    EXPECT_EQ(st.rule, rule);
    EXPECT_EQ(st.sweeps, sweeps);
}

TEST(DesignSystem, CloseToExhaustiveOptimumOnToyGrid) {
    // Four cells per sensor: every bank and every rule can be enumerated.
    const auto p = truth();
    const SensorGrid g = grid(15.0);
    const SensorGrid gs[2] = {g, g};
    const auto t0 = cell_mass(p.h0(), gs);
    const auto t1 = cell_mass(p.h1(), gs);
    double global = 1e300;
    for (std::uint32_t code = 0; code < 256; ++code) {
        SensorQuantizer a = SensorQuantizer::constant(g, 1, 0), b = SensorQuantizer::constant(g, 1, 0);
        for (std::size_t m = 0; m < 4; ++m) {
            a.set_pattern(m, (code >> m) & 1u);
            b.set_pattern(m, (code >> (4 + m)) & 1u);
        }
        const QuantizerBank bank({a, b});
        const auto f0 = quantized_pmf(t0, bank), f1 = quantized_pmf(t1, bank);
        global = std::min(global, bayes_cost(f0, f1, optimal_fusion_rule(f0, f1, p.p0(), kCosts), p.p0(), kCosts).bayes_cost);
    }
    const QuantizerBank start({SensorQuantizer::affine(g, 3, -60), SensorQuantizer::affine(g, -3, 60)});
    const auto st = design_system(entry(start, p), t0, t1, p.p0(), kCosts);
    const double found = st.cost_trace.back();
    EXPECT_GE(found, global - 1e-12);
    EXPECT_LE(found - global, 0.05 * global);
}

TEST(DesignSystem, InvariantUnderCostScaling) {
    const auto p = truth(1.0759);
    const auto a = design_system(entry(initial_bank(), p), p, kCosts);
    const CostCoefficients scaled{0.0, 3.0, 6.0, 0.0};
    const auto b = design_system(entry(initial_bank(), p), p, scaled);
    EXPECT_EQ(a.bank, b.bank);
    EXPECT_EQ(a.rule, b.rule);
    EXPECT_NEAR(b.cost_trace.back(), 3.0 * a.cost_trace.back(), 1e-12);
}

TEST(DesignSystem, RarePresenceDecidesZeroAndKeepsBank) {
    const auto p = truth(2.1316, 1.0 - 1e-6);
    const auto st = design_system(entry(initial_bank(), p), p, kCosts);
    EXPECT_EQ(st.rule, FusionRule::constant(4, false));
    EXPECT_EQ(st.bank, initial_bank());
}

TEST(DesignSystem, Idempotent) {
    const auto p = truth();
    const auto a = design_system(entry(initial_bank(), p), p, kCosts);
    DesignState again{1, a.bank, a.rule, p, {}, 0, false};
    const auto b = design_system(again, p, kCosts);
    EXPECT_EQ(a.bank, b.bank);
    EXPECT_EQ(a.rule, b.rule);
    EXPECT_NEAR(a.cost_trace.back(), b.cost_trace.back(), 1e-15);
}

TEST(DesignSystem, NoWorseThanInitialSystem) {
    for (double theta : {0.5109, 1.0759, 2.1316}) {
        const auto p = truth(theta);
        const auto st = design_system(entry(initial_bank(), p), p, kCosts);
        EXPECT_LE(st.cost_trace.back(), cost_of(initial_bank(), FusionRule::or_rule(initial_bank()), p) + 1e-12);
        EXPECT_LE(st.cost_trace.back(), 0.2 + 1e-12);  // never worse than always deciding 0
    }
}

TEST(FeedbackLoop, SingleStageBookkeeping) {
    const auto p = truth();
    FeedbackConfig cfg;
    cfg.stages = 1;
    cfg.group_sizes = {150};
    cfg.initial_bank = initial_bank();
    cfg.initial_rule = FusionRule::or_rule(cfg.initial_bank);
    cfg.truth = p;
    cfg.scenario = p;
    cfg.costs = kCosts;
    Rng rng(3);
    const auto tr = run_feedback_loop(cfg, rng);
    ASSERT_EQ(tr.stages.size(), 1u);
    ASSERT_EQ(tr.history.groups.size(), 1u);
    EXPECT_EQ(tr.history.groups[0].size(), 150u);
    EXPECT_EQ(tr.history.groups[0].bank, initial_bank());
    EXPECT_EQ(tr.stages[0].stage, 1u);
}

TEST(FeedbackLoop, GroupsUseThePreviousStageDesign) {
    const auto p = truth();
    FeedbackConfig cfg;
    cfg.stages = 4;
    cfg.group_sizes = {100, 200, 300, 400};
    cfg.initial_bank = initial_bank();
    cfg.initial_rule = FusionRule::or_rule(cfg.initial_bank);
    cfg.truth = p;
    cfg.scenario = p;
    cfg.costs = kCosts;
    Rng a(9), b(9);
    const auto tr = run_feedback_loop(cfg, a);
    ASSERT_EQ(tr.stages.size(), 4u);
    for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_EQ(tr.history.groups[t].size(), 100u * (t + 1));
        const auto& expected = t == 0 ? cfg.initial_bank : tr.stages[t - 1].design.bank;
        EXPECT_EQ(tr.history.groups[t].bank, expected) << "stage " << t + 1;
        EXPECT_EQ(tr.stages[t].group.counts, tr.history.groups[t].counts);
        if (!tr.stages[t].reused_previous) {
            EXPECT_EQ(tr.stages[t].estimate.values(), tr.stages[t].mle.params.values());
        }
    }
    const auto again = run_feedback_loop(cfg, b);
    EXPECT_EQ(again.stages.back().design.bank, tr.stages.back().design.bank);
    EXPECT_EQ(again.stages.back().mle.estimate, tr.stages.back().mle.estimate);
}

TEST(FeedbackLoop, MedianCostApproachesClairvoyantDesign) {
    const auto p = truth(2.1316);
    FeedbackConfig cfg;
    cfg.stages = 5;
    cfg.group_sizes = {200};
    cfg.initial_bank = initial_bank();
    cfg.initial_rule = FusionRule::or_rule(cfg.initial_bank);
    cfg.truth = p;
    cfg.scenario = p;
    cfg.costs = kCosts;
    auto cache = std::make_shared<CellMassCache>();
    std::vector<double> finals;
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng(1000 + s);
        cfg.mle.seed = 1000 + s;
        finals.push_back(run_feedback_loop(cfg, rng, cache).stages.back().metrics_at_truth.bayes_cost);
    }
    std::nth_element(finals.begin(), finals.begin() + 25, finals.end());
    const double median = finals[25];
    const double initial = cost_of(initial_bank(), FusionRule::or_rule(initial_bank()), p);
    const double clair = design_system(entry(initial_bank(), p), p, kCosts).cost_trace.back();
    EXPECT_LT(median, initial);
    EXPECT_LE(median - clair, 0.25 * (initial - clair)) << "median " << median << " clairvoyant " << clair
                                                         << " initial " << initial;
}
