#pragma once

// Monte-Carlo experiments over a scenario: RMSE of the feedback MLE against
// the number of stages, ROC comparison of three detector designs, and single
// seeded traces. Replicate r runs on seed base ^ r; replicates may execute on
// several threads but reports are assembled in replicate order.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "copdet/config.hpp"
#include "copdet/design.hpp"
#include "copdet/io.hpp"

namespace copdet {

enum class ObservationSource { H0, H1, Mixture };

// Row-major n x L draws. For Mixture each row's hypothesis is H1 with
// probability P1; labels (1 = H1) are returned through `labels` if given.
std::vector<double> generate_observations(const ParamVector& params, ObservationSource source, std::size_t n,
                                          Rng& rng, std::vector<std::uint8_t>* labels = nullptr);

// Calls fn(i) for i in [0, n) on up to `threads` workers (0: hardware
// concurrency). The first exception thrown by any call is rethrown.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

enum class ReportKind { Rmse, Roc, Trace };

struct ExperimentReport {
    ReportKind kind = ReportKind::Trace;
    CsvTable table;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::size_t replicates = 0;
    std::size_t failures = 0;
    bool threshold_exceeded = false;  // more than 5% of replicates failed
    double runtime_seconds = 0.0;     // metadata only, never part of the CSV
};

struct RunOptions {
    std::uint64_t seed = 0;
    std::size_t replicates = 0;  // 0: take the count from the config
    unsigned threads = 0;        // 0: take the count from the config
};

FeedbackConfig feedback_config(const ScenarioConfig& cfg, std::size_t stages, std::size_t group_size,
                               const CostCoefficients& costs, std::uint64_t run_seed);

// One seeded feedback run with the config's stage plan.
FeedbackTrace run_trace(const ScenarioConfig& cfg, std::uint64_t seed, std::shared_ptr<CellMassCache> cache = nullptr);
ExperimentReport trace_report(const ScenarioConfig& cfg, std::uint64_t seed, const FeedbackTrace& trace);

// Refit of the first `groups` histogram groups (all when 0) with the restart
// seed a feedback run on `seed` uses at that stage, plus the CRLB at the
// estimate when the Fisher matrix is invertible.
struct EstimateOutcome {
    MleResult mle;
    std::optional<Eigen::MatrixXd> crlb;
};
EstimateOutcome estimate_from_histogram(const ScenarioConfig& cfg, const QuantizedHistogram& hist, std::uint64_t seed,
                                        std::size_t groups = 0);

// Per-replicate RMSE study data; index [r][J - j_min].
struct RmseData {
    std::vector<std::size_t> stages;  // J values
    std::vector<std::vector<double>> p1_hat, theta1_hat;
    std::vector<std::vector<std::uint8_t>> ok;
    std::vector<std::vector<double>> crlb_p1, crlb_theta1;  // variances, NaN when unavailable
};

RmseData run_rmse_replicates(const ScenarioConfig& cfg, const RunOptions& opts);
// Columns: rho, J, N_total, rmse_p1, rmse_theta1, crlb_sqrt_p1, crlb_sqrt_theta1.
ExperimentReport run_rmse_experiment(const ScenarioConfig& cfg, const RunOptions& opts);
ExperimentReport rmse_report(const ScenarioConfig& cfg, const RunOptions& opts, const RmseData& data);

enum class Detector { Feedback, Independence, Clairvoyant };
std::string to_string(Detector d);

struct RocOptions {
    std::vector<Detector> detectors{Detector::Feedback, Detector::Independence, Detector::Clairvoyant};
    std::size_t group_size = 0;  // 0: roc.group_size from the config
};

// Empirical (P_f, P_d) per detector, cost point and replicate: [d][k][r].
struct RocData {
    std::vector<Detector> detectors;
    std::vector<double> c01;
    std::vector<std::vector<std::vector<double>>> pf, pd;
    // Feedback replicates whose final-stage MLE did not converge, per cost point.
    std::vector<std::size_t> failures;
};

RocData run_roc_replicates(const ScenarioConfig& cfg, const RunOptions& opts, const RocOptions& roc = {});
// Columns: rho, detector, c01, pf_mean, pd_mean, pf_std, pd_std.
ExperimentReport run_roc_experiment(const ScenarioConfig& cfg, const RunOptions& opts, const RocOptions& roc = {});
ExperimentReport roc_report(const ScenarioConfig& cfg, const RunOptions& opts, const RocData& data);

}  // namespace copdet
