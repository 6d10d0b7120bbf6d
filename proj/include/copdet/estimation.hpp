#pragma once

// Maximum likelihood estimation from quantized data collected under several
// quantizer banks, plus the Fisher information / Cramer-Rao machinery used to
// judge its efficiency.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "copdet/model.hpp"
#include "copdet/quantization.hpp"

namespace copdet {

// Evaluates sum_j sum_m K_m^(j) log f^(j)(u_m | theta) for candidate values of
// the free entries of a scenario. Cell tables are memoized per hypothesis so
// repeated evaluations with fixed H0 parameters stay cheap. Not thread-safe;
// use one evaluator per thread.
class LikelihoodEvaluator {
public:
    LikelihoodEvaluator(const QuantizedHistogram& hist, ParamVector scenario,
                        std::shared_ptr<CellMassCache> shared_cache = nullptr);

    double operator()(std::span<const double> free_values);
    double at(const ParamVector& params);

    // Mixture pmf of every group under `params`.
    std::vector<std::vector<double>> group_pmfs(const ParamVector& params);

    const ParamVector& scenario() const { return scenario_; }
    std::uint64_t total_count() const { return total_; }

private:
    // Groups sharing a bank are merged; their counts add up.
    struct Group {
        OutcomeAggregator aggregator;
        std::vector<std::uint64_t> counts;
        std::vector<SensorGrid> grids;
        std::size_t outcomes;
        // Last normalized outcome masses per hypothesis, keyed by table identity.
        std::shared_ptr<const CellMassTable> last_table[2];
        std::vector<double> last_masses[2];
    };
    struct Memo {
        std::vector<double> key;
        std::vector<SensorGrid> grids;
        std::shared_ptr<const CellMassTable> table;
    };

    std::shared_ptr<const CellMassTable> table_for(const HypothesisModel& h, const std::vector<SensorGrid>& grids);
    const std::vector<double>& masses(std::size_t k, int j, const HypothesisModel& h);
    std::vector<std::vector<double>> merged_pmfs(const ParamVector& params);

    std::vector<Group> groups_;
    std::optional<BankSetAggregator> batch_;  // all groups bivariate on one grid pair
    std::shared_ptr<const CellMassTable> batch_table_[2];
    std::vector<std::size_t> group_of_;  // input group -> merged group
    ParamVector scenario_;
    std::shared_ptr<CellMassCache> cache_;
    std::vector<Memo> memo_;
    std::uint64_t total_ = 0;
};

double log_likelihood(std::span<const double> free_values, const QuantizedHistogram& hist,
                      const ParamVector& scenario);

// Central-difference gradient with respect to the free entries.
std::vector<double> log_likelihood_gradient(std::span<const double> free_values, const QuantizedHistogram& hist,
                                            const ParamVector& scenario, double relative_step = 1e-5);

struct MleOptions {
    std::size_t restarts = 5;
    std::uint64_t seed = 0;
    double tolerance = 1e-6;  // simplex diameter in transformed coordinates
    std::size_t max_evaluations = 4000;  // per restart
};

struct MleResult {
    ParamVector params;             // scenario with the free entries at the estimate
    std::vector<double> estimate;   // free entries only, in mask order
    double log_likelihood = 0.0;
    bool converged = false;
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    std::size_t restarts_used = 0;
    // Norm of the per-sample score in transformed coordinates at the estimate.
    double gradient_norm = 0.0;
};

MleResult mle_fit(const QuantizedHistogram& hist, const ParamVector& scenario, const MleOptions& opts = {},
                  std::shared_ptr<CellMassCache> cache = nullptr);

struct FisherInfo {
    Eigen::MatrixXd matrix;
    std::vector<Eigen::MatrixXd> per_group;
    std::vector<double> weights;
};

// sum_m grad f_m grad f_m^T / f_m over outcomes with f_m > 0. `gradients` is
// outcomes x k.
Eigen::MatrixXd categorical_fisher(std::span<const double> pmf, const Eigen::MatrixXd& gradients);

// Per-sample Fisher information of the free entries of `at` for each bank and
// their convex combination with the given weights (normalized to sum to one).
FisherInfo fisher_info(const ParamVector& at, std::span<const QuantizerBank> banks, std::span<const double> weights,
                       std::shared_ptr<CellMassCache> cache = nullptr);

// (N * I)^-1, or nullopt when the combined matrix is singular.
std::optional<Eigen::MatrixXd> fisher_crlb(const FisherInfo& fi, double n_total);

}  // namespace copdet
