#include "copdet/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace copdet {

namespace {

constexpr double kImprovement = 1e-13;

CellMassTable normalized(const CellMassTable& t) {
    CellMassTable out = t;
    const double total = t.total();
    if (!(total > 0.0)) throw std::domain_error("cell table carries no mass");
    for (double& m : out.mass) m /= total;
    return out;
}

QuantizedPmf pmf_from(const CellMassTable& normalized_table, const QuantizerBank& bank) {
    return {OutcomeAggregator(bank)(normalized_table), "table"};
}

bool is_constant(const FusionRule& rule) {
    return std::all_of(rule.decisions.begin(), rule.decisions.end(),
                       [&](std::uint8_t d) { return d == rule.decisions.front(); });
}

}  // namespace

void CostCoefficients::validate() const {
    if (!(c10 > c00) || !(c01 > c11)) {
        throw std::invalid_argument("cost coefficients need c10 > c00 and c01 > c11");
    }
}

FusionRule FusionRule::constant(std::size_t outcomes, bool decide_h1) {
    return {std::vector<std::uint8_t>(outcomes, decide_h1 ? 1 : 0)};
}

FusionRule FusionRule::or_rule(const QuantizerBank& bank) {
    FusionRule r = constant(bank.outcome_count(), true);
    r.decisions[0] = 0;
    return r;
}

FusionRule FusionRule::and_rule(const QuantizerBank& bank) {
    FusionRule r = constant(bank.outcome_count(), false);
    r.decisions.back() = 1;
    return r;
}

DetectionMetrics bayes_cost(const QuantizedPmf& f0, const QuantizedPmf& f1, const FusionRule& rule, double p0,
                            const CostCoefficients& costs) {
    if (f0.size() != rule.size() || f1.size() != rule.size()) {
        throw std::invalid_argument("fusion rule length does not match the number of outcomes");
    }
    DetectionMetrics m;
    for (std::size_t u = 0; u < rule.size(); ++u) {
        if (rule.decisions[u]) {
            m.p_false_alarm += f0[u];
            m.p_detect += f1[u];
        }
    }
    const double p1 = 1.0 - p0;
    m.bayes_cost = costs.c00 * p0 * (1.0 - m.p_false_alarm) + costs.c01 * p1 * (1.0 - m.p_detect) +
                   costs.c10 * p0 * m.p_false_alarm + costs.c11 * p1 * m.p_detect;
    return m;
}

DetectionMetrics bayes_cost(const QuantizerBank& bank, const FusionRule& rule, const ParamVector& params,
                            const CostCoefficients& costs) {
    return bayes_cost(quantized_pmf(params.h0(), bank), quantized_pmf(params.h1(), bank), rule, params.p0(), costs);
}

FusionRule optimal_fusion_rule(const QuantizedPmf& f0, const QuantizedPmf& f1, double p0,
                               const CostCoefficients& costs) {
    if (f0.size() != f1.size()) throw std::invalid_argument("pmfs disagree on the number of outcomes");
    const double w1 = (1.0 - p0) * (costs.c01 - costs.c11);
    const double w0 = p0 * (costs.c10 - costs.c00);
    FusionRule rule = FusionRule::constant(f0.size(), false);
    for (std::size_t u = 0; u < f0.size(); ++u) {
        if (f0[u] == 0.0 && f1[u] == 0.0) continue;
        rule.decisions[u] = (w1 * f1[u] >= w0 * f0[u]) ? 1 : 0;
    }
    return rule;
}

FusionRule optimal_fusion_rule(const QuantizerBank& bank, const ParamVector& params, const CostCoefficients& costs) {
    return optimal_fusion_rule(quantized_pmf(params.h0(), bank), quantized_pmf(params.h1(), bank), params.p0(), costs);
}

DesignState optimize_quantizers(DesignState state, const CellMassTable& h0_cells, const CellMassTable& h1_cells,
                                double p0, const CostCoefficients& costs, const DesignOptions& opts) {
    costs.validate();
    QuantizerBank& bank = state.bank;
    const std::size_t sensors = bank.sensor_count();
    if (h0_cells.shape != h1_cells.shape || h0_cells.shape.size() != sensors) {
        throw std::invalid_argument("cell tables do not match the quantizer bank");
    }
    for (std::size_t i = 0; i < sensors; ++i) {
        if (h0_cells.shape[i] != bank.sensor(i).grid.cell_count()) {
            throw std::invalid_argument("cell tables do not match the quantizer bank");
        }
    }
    const std::size_t outcomes = bank.outcome_count();
    if (state.rule.size() != outcomes) throw std::invalid_argument("fusion rule length does not match the bank");

    const CellMassTable t0 = normalized(h0_cells);
    const CellMassTable t1 = normalized(h1_cells);
    const double p1 = 1.0 - p0;

    auto full_cost = [&]() {
        return bayes_cost(pmf_from(t0, bank), pmf_from(t1, bank), state.rule, p0, costs).bayes_cost;
    };

    std::vector<std::size_t> stride(sensors, 1);
    for (std::size_t i = sensors - 1; i-- > 0;) stride[i] = stride[i + 1] * t0.shape[i + 1];

    state.cost_trace.clear();
    state.cost_trace.push_back(full_cost());
    state.sweeps = 0;
    state.converged = false;

    std::vector<double> a0(outcomes), a1(outcomes), s0, s1;
    while (state.sweeps < opts.max_sweeps) {
        ++state.sweeps;
        bool changed = false;
        for (std::size_t u = 0; u < outcomes; ++u) {
            a0[u] = p0 * (state.rule.decisions[u] ? costs.c10 : costs.c00);
            a1[u] = p1 * (state.rule.decisions[u] ? costs.c11 : costs.c01);
        }
        for (std::size_t i = 0; i < sensors; ++i) {
            auto& q = bank.sensor(i);
            const std::size_t cells = q.grid.cell_count();
            const std::size_t offset = bank.bit_offset(i);
            const std::uint32_t own_mask = ((1u << q.bit_count()) - 1u) << offset;
            const std::uint32_t patterns = 1u << q.bit_count();

            // Slice masses of every cell of sensor i, keyed by the other sensors' bits.
            const auto map = bank.cell_outcome_map();
            s0.assign(cells * outcomes, 0.0);
            s1.assign(cells * outcomes, 0.0);
            for (std::size_t c = 0; c < map.size(); ++c) {
                const std::size_t m = (c / stride[i]) % cells;
                const std::size_t o = map[c] & ~own_mask;
                s0[m * outcomes + o] += t0.mass[c];
                s1[m * outcomes + o] += t1.mass[c];
            }
            for (std::size_t m = 0; m < cells; ++m) {
                const double* r0 = &s0[m * outcomes];
                const double* r1 = &s1[m * outcomes];
                auto slice_cost = [&](std::uint32_t p) {
                    const std::uint32_t bits = p << offset;
                    double cost = 0.0;
                    for (std::size_t o = 0; o < outcomes; ++o) {
                        if (o & own_mask) continue;
                        const std::size_t u = o | bits;
                        cost += r0[o] * a0[u] + r1[o] * a1[u];
                    }
                    return cost;
                };
                const std::uint32_t incumbent = q.pattern(m);
                std::uint32_t best = incumbent;
                double best_cost = slice_cost(incumbent);
                for (std::uint32_t p = 0; p < patterns; ++p) {
                    if (p == incumbent) continue;
                    const double c = slice_cost(p);
                    if (c < best_cost - kImprovement) {
                        best = p;
                        best_cost = c;
                    }
                }
                if (best != incumbent) {
                    q.set_pattern(m, best);
                    changed = true;
                }
            }
        }
        const FusionRule next = optimal_fusion_rule(pmf_from(t0, bank), pmf_from(t1, bank), p0, costs);
        const bool rule_changed = !(next == state.rule);
        state.rule = next;
        state.cost_trace.push_back(full_cost());
        if (!changed && !rule_changed) {
            state.converged = true;
            break;
        }
    }
    return state;
}

DesignState optimize_quantizers(DesignState state, const ParamVector& params, const CostCoefficients& costs,
                                const DesignOptions& opts, CellMassCache* cache) {
    const auto grids = state.bank.grids();
    if (cache != nullptr) {
        const auto t0 = cache->get(params.h0(), grids);
        const auto t1 = cache->get(params.h1(), grids);
        return optimize_quantizers(std::move(state), *t0, *t1, params.p0(), costs, opts);
    }
    return optimize_quantizers(std::move(state), cell_mass(params.h0(), grids), cell_mass(params.h1(), grids),
                               params.p0(), costs, opts);
}

std::vector<FusionRule> starting_rules(const DesignState& entry) {
    const std::size_t outcomes = entry.bank.outcome_count();
    std::vector<FusionRule> rules{entry.rule};
    auto add = [&](FusionRule r) {
        if (std::find(rules.begin(), rules.end(), r) == rules.end()) rules.push_back(std::move(r));
    };
    if (outcomes <= 4) {
        for (std::uint32_t code = 1; code + 1 < (1u << outcomes); ++code) {
            FusionRule r = FusionRule::constant(outcomes, false);
            for (std::size_t u = 0; u < outcomes; ++u) r.decisions[u] = (code >> u) & 1u;
            add(std::move(r));
        }
    } else {
        add(FusionRule::or_rule(entry.bank));
        add(FusionRule::and_rule(entry.bank));
    }
    return rules;
}

DesignState design_system(const DesignState& entry, const CellMassTable& h0_cells, const CellMassTable& h1_cells,
                          double p0, const CostCoefficients& costs, const DesignOptions& opts) {
    DesignState best;
    bool have = false;
    for (const auto& rule : starting_rules(entry)) {
        DesignState start = entry;
        start.rule = rule;
        DesignState out = optimize_quantizers(std::move(start), h0_cells, h1_cells, p0, costs, opts);
        if (!have || out.cost_trace.back() < best.cost_trace.back() - kImprovement) {
            best = std::move(out);
            have = true;
        }
    }
    if (is_constant(best.rule)) best.bank = entry.bank;
    return best;
}

DesignState design_system(const DesignState& entry, const ParamVector& params, const CostCoefficients& costs,
                          const DesignOptions& opts, CellMassCache* cache) {
    const auto grids = entry.bank.grids();
    if (cache != nullptr) {
        const auto t0 = cache->get(params.h0(), grids);
        const auto t1 = cache->get(params.h1(), grids);
        return design_system(entry, *t0, *t1, params.p0(), costs, opts);
    }
    return design_system(entry, cell_mass(params.h0(), grids), cell_mass(params.h1(), grids), params.p0(), costs,
                         opts);
}

std::vector<double> sample_mixture(const ParamVector& params, Rng& rng, std::size_t n,
                                   std::vector<std::uint8_t>* labels) {
    if (n == 0) throw std::invalid_argument("sample_mixture needs n >= 1");
    std::vector<std::uint8_t> lab(n);
    std::size_t n1 = 0;
    for (auto& l : lab) {
        l = rng.bernoulli(params.p1()) ? 1 : 0;
        n1 += l;
    }
    const std::size_t dim = params.h0().dimension();
    std::vector<double> y0, y1;
    if (n - n1 > 0) y0 = sample_hypothesis(params.h0(), rng, n - n1);
    if (n1 > 0) y1 = sample_hypothesis(params.h1(), rng, n1);
    std::vector<double> out(n * dim);
    std::size_t k0 = 0, k1 = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double* src = lab[k] ? &y1[dim * k1++] : &y0[dim * k0++];
        std::copy(src, src + dim, &out[k * dim]);
    }
    if (labels != nullptr) *labels = std::move(lab);
    return out;
}

FeedbackTrace run_feedback_loop(const FeedbackConfig& config, Rng& rng, std::shared_ptr<CellMassCache> cache) {
    if (config.stages < 1) throw std::invalid_argument("feedback loop needs T >= 1");
    if (config.group_sizes.empty()) throw std::invalid_argument("feedback loop needs group sizes");
    if (config.group_sizes.size() != 1 && config.group_sizes.size() < config.stages) {
        throw std::invalid_argument("one group size per stage is required");
    }
    config.costs.validate();
    if (!cache) cache = std::make_shared<CellMassCache>();

    FeedbackTrace trace;
    QuantizerBank bank = config.initial_bank;
    FusionRule rule = config.initial_rule;
    ParamVector estimate = config.scenario;
    const auto grids = bank.grids();

    for (std::size_t t = 1; t <= config.stages; ++t) {
        const std::size_t n = config.group_sizes.size() == 1 ? config.group_sizes[0] : config.group_sizes[t - 1];
        if (n < 1) throw std::invalid_argument("group sizes must be positive");
        const auto obs = sample_mixture(config.truth, rng, n);

        StageRecord rec;
        rec.stage = t;
        rec.group = count_outcomes(bank, obs);
        trace.history.groups.push_back(rec.group);

        MleOptions mle_opts = config.mle;
        mle_opts.seed = mix_seed(config.mle.seed + t);
        rec.mle = mle_fit(trace.history, config.scenario, mle_opts, cache);
        if (rec.mle.converged) {
            estimate = rec.mle.params;
        } else {
            rec.reused_previous = true;
        }
        rec.estimate = estimate;

        DesignState state{t, bank, rule, estimate, {}, 0, false};
        rec.design = design_system(state, estimate, config.costs, config.design, cache.get());
        bank = rec.design.bank;
        rule = rec.design.rule;

        const auto t0 = cache->get(config.truth.h0(), grids);
        const auto t1 = cache->get(config.truth.h1(), grids);
        rec.metrics_at_truth =
            bayes_cost(quantized_pmf(*t0, bank), quantized_pmf(*t1, bank), rule, config.truth.p0(), config.costs);
        trace.stages.push_back(std::move(rec));
    }
    return trace;
}

}  // namespace copdet
