#include "copdet/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace copdet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kFailureShare = 0.05;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t replicates_of(const ScenarioConfig& cfg, const RunOptions& opts) {
    return opts.replicates > 0 ? opts.replicates : cfg.replicates;
}

unsigned threads_of(const ScenarioConfig& cfg, const RunOptions& opts) {
    return opts.threads > 0 ? opts.threads : cfg.threads;
}

// Position of a named entry among the free entries, if it is free.
std::optional<std::size_t> free_position(const ParamVector& p, const char* name) {
    const std::size_t idx = p.index_of(name);
    const auto free = p.free_indices();
    const auto it = std::find(free.begin(), free.end(), idx);
    if (it == free.end()) return std::nullopt;
    return static_cast<std::size_t>(it - free.begin());
}

std::string fixed4(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

// Variances of (p1, theta1) from the CRLB at the truth for the given groups.
std::pair<double, double> crlb_at_truth(const ParamVector& truth, const QuantizedHistogram& hist, std::size_t groups,
                                        const std::shared_ptr<CellMassCache>& cache) {
    std::vector<QuantizerBank> banks;
    std::vector<double> weights;
    double n = 0.0;
    for (std::size_t j = 0; j < groups; ++j) {
        banks.push_back(hist.groups[j].bank);
        weights.push_back(static_cast<double>(hist.groups[j].size()));
        n += weights.back();
    }
    const auto fi = fisher_info(truth, banks, weights, cache);
    const auto crlb = fisher_crlb(fi, n);
    if (!crlb) return {kNaN, kNaN};
    const auto ip = free_position(truth, "p0");
    const auto it = free_position(truth, "h1.theta");
    const auto diag = [&](const std::optional<std::size_t>& i) {
        return i ? (*crlb)(static_cast<Eigen::Index>(*i), static_cast<Eigen::Index>(*i)) : kNaN;
    };
    return {diag(ip), diag(it)};
}

struct EmpiricalRates {
    double pf = 0.0;
    double pd = 0.0;
};

EmpiricalRates empirical_rates(const QuantizerBank& bank, const FusionRule& rule, const std::vector<double>& y0,
                               const std::vector<double>& y1) {
    const std::size_t dim = bank.sensor_count();
    auto rate = [&](const std::vector<double>& y) {
        std::size_t hits = 0;
        for (std::size_t k = 0; k < y.size(); k += dim) {
            hits += rule.decisions[bank.quantize(std::span<const double>(y).subspan(k, dim))];
        }
        return static_cast<double>(hits) / static_cast<double>(y.size() / dim);
    };
    return {rate(y0), rate(y1)};
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
    return {mean, sd};
}

}  // namespace

std::vector<double> generate_observations(const ParamVector& params, ObservationSource source, std::size_t n,
                                          Rng& rng, std::vector<std::uint8_t>* labels) {
    switch (source) {
        case ObservationSource::H0:
            if (labels != nullptr) labels->assign(n, 0);
            return sample_hypothesis(params.h0(), rng, n);
        case ObservationSource::H1:
            if (labels != nullptr) labels->assign(n, 1);
            return sample_hypothesis(params.h1(), rng, n);
        case ObservationSource::Mixture:
            return sample_mixture(params, rng, n, labels);
    }
    throw std::invalid_argument("unknown observation source");
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

FeedbackConfig feedback_config(const ScenarioConfig& cfg, std::size_t stages, std::size_t group_size,
                               const CostCoefficients& costs, std::uint64_t run_seed) {
    FeedbackConfig fc;
    fc.stages = stages;
    fc.group_sizes = {group_size};
    fc.initial_bank = cfg.initial_bank;
    fc.initial_rule = cfg.initial_rule;
    fc.truth = cfg.truth;
    fc.scenario = cfg.truth;
    fc.costs = costs;
    fc.mle = cfg.mle;
    fc.mle.seed = run_seed;
    fc.design = cfg.design;
    return fc;
}

FeedbackTrace run_trace(const ScenarioConfig& cfg, std::uint64_t seed, std::shared_ptr<CellMassCache> cache) {
    Rng rng(seed);
    return run_feedback_loop(feedback_config(cfg, cfg.stages, cfg.group_size, cfg.costs, seed), rng, std::move(cache));
}

ExperimentReport trace_report(const ScenarioConfig& cfg, std::uint64_t seed, const FeedbackTrace& trace) {
    ExperimentReport rep;
    rep.kind = ReportKind::Trace;
    rep.config_hash = fnv1a(cfg.source);
    rep.seed = seed;
    rep.replicates = 1;
    rep.table.header = {"stage", "n", "p1_hat", "theta1_hat", "log_likelihood", "converged", "reused_previous",
                        "sweeps", "design_cost", "pf", "pd", "bayes_cost"};
    for (const auto& s : trace.stages) {
        if (s.reused_previous) ++rep.failures;
        rep.table.rows.push_back({std::to_string(s.stage), std::to_string(s.group.size()), format_double(s.estimate.p1()),
                                  format_double(s.estimate.h1().theta), format_double(s.mle.log_likelihood),
                                  s.mle.converged ? "1" : "0", s.reused_previous ? "1" : "0",
                                  std::to_string(s.design.sweeps),
                                  format_double(s.design.cost_trace.empty() ? kNaN : s.design.cost_trace.back()),
                                  format_double(s.metrics_at_truth.p_false_alarm),
                                  format_double(s.metrics_at_truth.p_detect),
                                  format_double(s.metrics_at_truth.bayes_cost)});
    }
    return rep;
}

EstimateOutcome estimate_from_histogram(const ScenarioConfig& cfg, const QuantizedHistogram& hist, std::uint64_t seed,
                                        std::size_t groups) {
    if (groups == 0) groups = hist.groups.size();
    if (groups > hist.groups.size()) throw std::invalid_argument("histogram has fewer groups than requested");
    QuantizedHistogram used;
    used.groups.assign(hist.groups.begin(), hist.groups.begin() + static_cast<std::ptrdiff_t>(groups));
    MleOptions opts = cfg.mle;
    opts.seed = mix_seed(seed + groups);

    EstimateOutcome out;
    out.mle = mle_fit(used, cfg.truth, opts);
    if (out.mle.converged && out.mle.params.admissible()) {
        std::vector<QuantizerBank> banks;
        std::vector<double> weights;
        for (const auto& g : used.groups) {
            banks.push_back(g.bank);
            weights.push_back(static_cast<double>(g.size()));
        }
        out.crlb = fisher_crlb(fisher_info(out.mle.params, banks, weights), static_cast<double>(used.total()));
    }
    return out;
}

RmseData run_rmse_replicates(const ScenarioConfig& cfg, const RunOptions& opts) {
    const std::size_t reps = replicates_of(cfg, opts);
    const auto& plan = cfg.rmse;
    RmseData data;
    for (std::size_t j = plan.j_min; j <= plan.j_max; ++j) data.stages.push_back(j);
    const std::size_t nj = data.stages.size();
    auto grid = [&] { return std::vector<std::vector<double>>(reps, std::vector<double>(nj, kNaN)); };
    data.p1_hat = grid();
    data.theta1_hat = grid();
    data.crlb_p1 = grid();
    data.crlb_theta1 = grid();
    data.ok.assign(reps, std::vector<std::uint8_t>(nj, 0));

    const bool theta_free = free_position(cfg.truth, "h1.theta").has_value();
    auto cache = std::make_shared<CellMassCache>();
    parallel_for(reps, threads_of(cfg, opts), [&](std::size_t r) {
        const std::uint64_t seed = opts.seed ^ static_cast<std::uint64_t>(r);
        Rng rng(seed);
        const auto trace =
            run_feedback_loop(feedback_config(cfg, plan.j_max, plan.group_size, cfg.costs, seed), rng, cache);
        for (std::size_t k = 0; k < nj; ++k) {
            const auto& st = trace.stages[data.stages[k] - 1];
            data.ok[r][k] = st.mle.converged ? 1 : 0;
            data.p1_hat[r][k] = st.mle.params.p1();
            data.theta1_hat[r][k] = theta_free ? st.mle.params.h1().theta : kNaN;
            const auto [v_p1, v_theta] = crlb_at_truth(cfg.truth, trace.history, data.stages[k], cache);
            data.crlb_p1[r][k] = v_p1;
            data.crlb_theta1[r][k] = v_theta;
        }
    });
    return data;
}

ExperimentReport rmse_report(const ScenarioConfig& cfg, const RunOptions& opts, const RmseData& data) {
    ExperimentReport rep;
    rep.kind = ReportKind::Rmse;
    rep.config_hash = fnv1a(cfg.source);
    rep.seed = opts.seed;
    rep.replicates = data.p1_hat.size();
    rep.table.header = {"rho", "J", "N_total", "rmse_p1", "rmse_theta1", "crlb_sqrt_p1", "crlb_sqrt_theta1"};
    const double p1 = cfg.truth.p1();
    const double theta1 = cfg.truth.h1().theta;
    for (std::size_t k = 0; k < data.stages.size(); ++k) {
        double se_p = 0.0, se_t = 0.0, v_p = 0.0, v_t = 0.0;
        std::size_t used = 0, with_crlb = 0, failed = 0;
        for (std::size_t r = 0; r < rep.replicates; ++r) {
            if (!data.ok[r][k]) {
                ++failed;
                continue;
            }
            ++used;
            se_p += (data.p1_hat[r][k] - p1) * (data.p1_hat[r][k] - p1);
            se_t += (data.theta1_hat[r][k] - theta1) * (data.theta1_hat[r][k] - theta1);
            if (std::isfinite(data.crlb_p1[r][k]) || std::isfinite(data.crlb_theta1[r][k])) {
                ++with_crlb;
                v_p += data.crlb_p1[r][k];
                v_t += data.crlb_theta1[r][k];
            }
        }
        rep.failures = std::max(rep.failures, failed);
        const double nu = static_cast<double>(used);
        const double nc = static_cast<double>(with_crlb);
        const std::size_t n_total = data.stages[k] * cfg.rmse.group_size;
        rep.table.rows.push_back({fixed4(cfg.rho), std::to_string(data.stages[k]), std::to_string(n_total),
                                  format_double(used ? std::sqrt(se_p / nu) : kNaN),
                                  format_double(used ? std::sqrt(se_t / nu) : kNaN),
                                  format_double(with_crlb ? std::sqrt(v_p / nc) : kNaN),
                                  format_double(with_crlb ? std::sqrt(v_t / nc) : kNaN)});
    }
    rep.threshold_exceeded = static_cast<double>(rep.failures) > kFailureShare * static_cast<double>(rep.replicates);
    return rep;
}

ExperimentReport run_rmse_experiment(const ScenarioConfig& cfg, const RunOptions& opts) {
    const auto t0 = Clock::now();
    auto rep = rmse_report(cfg, opts, run_rmse_replicates(cfg, opts));
    rep.runtime_seconds = seconds_since(t0);
    return rep;
}

std::string to_string(Detector d) {
    switch (d) {
        case Detector::Feedback:
            return "feedback";
        case Detector::Independence:
            return "independence";
        case Detector::Clairvoyant:
            return "clairvoyant";
    }
    return "unknown";
}

RocData run_roc_replicates(const ScenarioConfig& cfg, const RunOptions& opts, const RocOptions& roc) {
    if (cfg.roc.c01.empty()) throw std::invalid_argument("the config has no roc.c01 cost sweep");
    const std::size_t reps = replicates_of(cfg, opts);
    const std::size_t group_size = roc.group_size > 0 ? roc.group_size : cfg.roc.group_size;
    const std::size_t points = cfg.roc.c01.size();

    RocData data;
    data.detectors = roc.detectors;
    data.c01 = cfg.roc.c01;
    const auto blank = std::vector<std::vector<double>>(points, std::vector<double>(reps, kNaN));
    data.pf.assign(roc.detectors.size(), blank);
    data.pd.assign(roc.detectors.size(), blank);
    data.failures.assign(points, 0);

    auto cost_at = [&](std::size_t k) {
        CostCoefficients c = cfg.costs;
        c.c01 = cfg.roc.c01[k];
        return c;
    };
    auto cache = std::make_shared<CellMassCache>();

    // Model-based detectors do not depend on the replicate: design once per point.
    ParamVector assumed = cfg.truth;
    {
        HypothesisModel h1 = cfg.truth.h1();
        h1.copula.family = CopulaFamily::Independence;
        h1.theta = 0.0;
        assumed = ParamVector(cfg.truth.p0(), cfg.truth.h0(), h1);
    }
    std::vector<std::vector<DesignState>> fixed(roc.detectors.size());
    for (std::size_t d = 0; d < roc.detectors.size(); ++d) {
        if (roc.detectors[d] == Detector::Feedback) continue;
        const ParamVector& model = roc.detectors[d] == Detector::Clairvoyant ? cfg.truth : assumed;
        for (std::size_t k = 0; k < points; ++k) {
            DesignState entry{0, cfg.initial_bank, cfg.initial_rule, model, {}, 0, false};
            fixed[d].push_back(design_system(entry, model, cost_at(k), cfg.design, cache.get()));
        }
    }

    std::vector<std::vector<std::uint8_t>> failed(points, std::vector<std::uint8_t>(reps, 0));
    parallel_for(reps, threads_of(cfg, opts), [&](std::size_t r) {
        const std::uint64_t seed = opts.seed ^ static_cast<std::uint64_t>(r);
        Rng test_rng = Rng(seed).substream(1);
        const auto y1 = generate_observations(cfg.truth, ObservationSource::H1, cfg.roc.test_h1, test_rng);
        const auto y0 = generate_observations(cfg.truth, ObservationSource::H0, cfg.roc.test_h0, test_rng);
        for (std::size_t d = 0; d < roc.detectors.size(); ++d) {
            for (std::size_t k = 0; k < points; ++k) {
                EmpiricalRates rates;
                if (roc.detectors[d] == Detector::Feedback) {
                    Rng rng(seed);
                    const auto trace = run_feedback_loop(
                        feedback_config(cfg, cfg.roc.stages, group_size, cost_at(k), seed), rng, cache);
                    const auto& last = trace.stages.back();
                    failed[k][r] = last.mle.converged ? 0 : 1;
                    rates = empirical_rates(last.design.bank, last.design.rule, y0, y1);
                } else {
                    rates = empirical_rates(fixed[d][k].bank, fixed[d][k].rule, y0, y1);
                }
                data.pf[d][k][r] = rates.pf;
                data.pd[d][k][r] = rates.pd;
            }
        }
    });
    for (std::size_t k = 0; k < points; ++k) {
        for (auto f : failed[k]) data.failures[k] += f;
    }
    return data;
}

ExperimentReport roc_report(const ScenarioConfig& cfg, const RunOptions& opts, const RocData& data) {
    ExperimentReport rep;
    rep.kind = ReportKind::Roc;
    rep.config_hash = fnv1a(cfg.source);
    rep.seed = opts.seed;
    rep.replicates = data.pf.empty() || data.pf[0].empty() ? 0 : data.pf[0][0].size();
    rep.table.header = {"rho", "detector", "c01", "pf_mean", "pd_mean", "pf_std", "pd_std"};

    struct Row {
        Detector detector;
        double c01;
        std::vector<std::string> fields;
    };
    std::vector<Row> rows;
    for (std::size_t d = 0; d < data.detectors.size(); ++d) {
        for (std::size_t k = 0; k < data.c01.size(); ++k) {
            const auto [pf, pf_sd] = mean_std(data.pf[d][k]);
            const auto [pd, pd_sd] = mean_std(data.pd[d][k]);
            rows.push_back({data.detectors[d], data.c01[k],
                            {fixed4(cfg.rho), to_string(data.detectors[d]), format_double(data.c01[k]),
                             format_double(pf), format_double(pd), format_double(pf_sd), format_double(pd_sd)}});
        }
    }
    // Declared key order: detector, then c01 descending.
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.detector != b.detector) return a.detector < b.detector;
        return a.c01 > b.c01;
    });
    for (auto& r : rows) rep.table.rows.push_back(std::move(r.fields));
    for (auto f : data.failures) rep.failures = std::max(rep.failures, f);
    rep.threshold_exceeded = static_cast<double>(rep.failures) > kFailureShare * static_cast<double>(rep.replicates);
    return rep;
}

ExperimentReport run_roc_experiment(const ScenarioConfig& cfg, const RunOptions& opts, const RocOptions& roc) {
    const auto t0 = Clock::now();
    auto rep = roc_report(cfg, opts, run_roc_replicates(cfg, opts, roc));
    rep.runtime_seconds = seconds_since(t0);
    return rep;
}

}  // namespace copdet
