#pragma once

// Bayes-cost evaluation, the likelihood-ratio fusion rule, cell-wise quantizer
// descent, and the estimate/redesign/feedback loop run by the fusion center.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "copdet/estimation.hpp"
#include "copdet/model.hpp"
#include "copdet/quantization.hpp"
#include "copdet/random.hpp"

namespace copdet {

struct CostCoefficients {
    double c00 = 0.0;
    double c01 = 1.0;
    double c10 = 1.0;
    double c11 = 0.0;

    // Requires c10 > c00 and c01 > c11.
    void validate() const;
};

// decisions[u] == 1 means "decide H1" for joint outcome u.
struct FusionRule {
    std::vector<std::uint8_t> decisions;

    std::size_t size() const { return decisions.size(); }
    bool operator==(const FusionRule&) const = default;

    static FusionRule constant(std::size_t outcomes, bool decide_h1);
    // Decide H1 when any transmitted bit is 1.
    static FusionRule or_rule(const QuantizerBank& bank);
    // Decide H1 only when every transmitted bit is 1.
    static FusionRule and_rule(const QuantizerBank& bank);
};

struct DetectionMetrics {
    double p_false_alarm = 0.0;
    double p_detect = 0.0;
    double bayes_cost = 0.0;
};

DetectionMetrics bayes_cost(const QuantizedPmf& f0, const QuantizedPmf& f1, const FusionRule& rule, double p0,
                            const CostCoefficients& costs);
DetectionMetrics bayes_cost(const QuantizerBank& bank, const FusionRule& rule, const ParamVector& params,
                            const CostCoefficients& costs);

// Decide 1 iff P1 (C01 - C11) f1(u) >= P0 (C10 - C00) f0(u); outcomes with zero
// probability under both hypotheses decide 0.
FusionRule optimal_fusion_rule(const QuantizedPmf& f0, const QuantizedPmf& f1, double p0,
                               const CostCoefficients& costs);
FusionRule optimal_fusion_rule(const QuantizerBank& bank, const ParamVector& params, const CostCoefficients& costs);

struct DesignState {
    std::size_t stage = 0;
    QuantizerBank bank;
    FusionRule rule;
    ParamVector estimate;
    std::vector<double> cost_trace;  // cost at entry, then after every sweep
    std::size_t sweeps = 0;
    bool converged = false;
};

struct DesignOptions {
    std::size_t max_sweeps = 100;
};

// Gauss-Seidel descent over (sensor, cell, bit pattern) with the fusion rule
// refreshed after every full sweep. A move is accepted only when it lowers the
// cost by more than 1e-13; ties keep the incumbent. Both tables are normalized
// internally so costs match bayes_cost on renormalized pmfs.
DesignState optimize_quantizers(DesignState state, const CellMassTable& h0_cells, const CellMassTable& h1_cells,
                                double p0, const CostCoefficients& costs, const DesignOptions& opts = {});
DesignState optimize_quantizers(DesignState state, const ParamVector& params, const CostCoefficients& costs,
                                const DesignOptions& opts = {}, CellMassCache* cache = nullptr);

// Runs the descent from the incumbent rule and then from every non-constant
// rule (when there are at most 4 outcomes; otherwise OR and AND) and keeps the
// lowest final cost, earlier starts winning ties. If the winning rule is
// constant the quantizers do not affect the cost and the entry bank is kept.
DesignState design_system(const DesignState& entry, const CellMassTable& h0_cells, const CellMassTable& h1_cells,
                          double p0, const CostCoefficients& costs, const DesignOptions& opts = {});
DesignState design_system(const DesignState& entry, const ParamVector& params, const CostCoefficients& costs,
                          const DesignOptions& opts = {}, CellMassCache* cache = nullptr);

struct FeedbackConfig {
    std::size_t stages = 1;                  // T
    std::vector<std::size_t> group_sizes;    // N_t per stage; a single entry is reused
    QuantizerBank initial_bank;
    FusionRule initial_rule;
    ParamVector truth;                       // data-generating model
    ParamVector scenario;                    // free mask plus known values for the estimator
    CostCoefficients costs;
    MleOptions mle;
    DesignOptions design;
};

struct StageRecord {
    std::size_t stage = 0;
    HistogramGroup group;          // samples collected during this stage
    MleResult mle;
    bool reused_previous = false;  // MLE failed; previous estimate kept
    ParamVector estimate;
    DesignState design;            // bank and rule chosen at the end of the stage
    DetectionMetrics metrics_at_truth;
};

struct FeedbackTrace {
    std::vector<StageRecord> stages;
    QuantizedHistogram history;
};

FeedbackTrace run_feedback_loop(const FeedbackConfig& config, Rng& rng, std::shared_ptr<CellMassCache> cache = nullptr);

// Mixture draws: each sample's hypothesis is H1 with probability P1.
std::vector<double> sample_mixture(const ParamVector& params, Rng& rng, std::size_t n,
                                   std::vector<std::uint8_t>* labels = nullptr);

}  // namespace copdet
