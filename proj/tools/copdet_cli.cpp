// copdet: estimate / design / rmse / roc / trace over a scenario file.
//
// Exit codes: 0 success, 1 runtime error, 2 config or input error,
// 3 experiment failure threshold exceeded.

#include <chrono>
#include <cstdio>
#include <functional>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "copdet/config.hpp"
#include "copdet/harness.hpp"
#include "copdet/io.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitThreshold = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t replicates = 0;
    unsigned threads = 0;
    std::string format = "csv";
};

void add_common(CLI::App* cmd, Common& c, bool experiment) {
    cmd->add_option("--config", c.config, "Scenario file (YAML)")->required();
    cmd->add_option("--seed", c.seed, "Base seed (default: the config's seed)");
    cmd->add_option("--out", c.out, "Output path (default: stdout)");
    if (experiment) {
        cmd->add_option("--replicates", c.replicates, "Monte-Carlo replicates (default: from the config)");
        cmd->add_option("--threads", c.threads, "Worker threads (default: from the config, 0 = all cores)");
    }
    cmd->add_option("--format", c.format, "Table format")->check(CLI::IsMember({"csv"}));
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    body(f);
}

int finish(const copdet::ExperimentReport& rep, const std::string& out, const char* kind) {
    emit(out, rep.table.str());
    std::fprintf(stderr, "%s: config_hash=%016llx seed=%llu replicates=%zu failures=%zu runtime=%.2fs\n", kind,
                 static_cast<unsigned long long>(rep.config_hash), static_cast<unsigned long long>(rep.seed),
                 rep.replicates, rep.failures, rep.runtime_seconds);
    if (rep.threshold_exceeded) {
        std::fprintf(stderr, "%s: more than 5%% of replicates failed\n", kind);
        return kExitThreshold;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed detection with copula-dependent sensors: estimation, design and experiments"};
    app.require_subcommand(1);

    Common est_c, des_c, rmse_c, roc_c, trace_c;
    std::string est_hist;
    std::size_t est_groups = 0;
    auto* est = app.add_subcommand("estimate", "Fit the free parameters from a histogram log");
    add_common(est, est_c, false);
    est->add_option("--histogram", est_hist, "Histogram log (JSON lines)")->required();
    est->add_option("--groups", est_groups, "Use only the first J groups (default: all)");

    auto* des = app.add_subcommand("design", "One design pass at the configured model from the initial system");
    add_common(des, des_c, false);

    auto* rmse = app.add_subcommand("rmse", "RMSE of the feedback MLE against the number of stages");
    add_common(rmse, rmse_c, true);

    std::size_t roc_group = 0;
    auto* roc = app.add_subcommand("roc", "Empirical ROC of the feedback, independence and clairvoyant designs");
    add_common(roc, roc_c, true);
    roc->add_option("--group-size", roc_group, "Samples per feedback stage (default: roc.group_size)");

    std::string trace_log, trace_hist;
    auto* trace = app.add_subcommand("trace", "Single seeded feedback run with per-stage logs");
    add_common(trace, trace_c, false);
    trace->add_option("--log", trace_log, "Stage trace log (JSON lines)");
    trace->add_option("--histogram", trace_hist, "Histogram log of the collected groups (JSON lines)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*est) {
            const auto cfg = copdet::load_config(est_c.config);
            std::ifstream in(est_hist);
            if (!in) throw copdet::ConfigError(est_hist + ":1:1: cannot open file");
            copdet::QuantizedHistogram hist;
            try {
                hist = copdet::read_histogram_log(in);
            } catch (const std::exception& e) {
                throw copdet::ConfigError(est_hist + ":" + e.what());
            }
            const auto res =
                copdet::estimate_from_histogram(cfg, hist, est_c.seed.value_or(cfg.seed), est_groups);
            emit(est_c.out, copdet::mle_record(res.mle, res.crlb) + "\n");
            return 0;
        }
        if (*des) {
            const auto cfg = copdet::load_config(des_c.config);
            copdet::DesignState entry{0, cfg.initial_bank, cfg.initial_rule, cfg.truth, {}, 0, false};
            const auto st = copdet::design_system(entry, cfg.truth, cfg.costs, cfg.design);
            copdet::FeedbackTrace t;
            copdet::StageRecord rec;
            rec.stage = 0;
            rec.group = {st.bank, std::vector<std::uint64_t>(st.bank.outcome_count(), 0)};
            rec.estimate = cfg.truth;
            rec.mle.params = cfg.truth;
            rec.design = st;
            rec.metrics_at_truth = copdet::bayes_cost(st.bank, st.rule, cfg.truth, cfg.costs);
            t.stages.push_back(rec);
            std::ostringstream os;
            copdet::write_stage_trace(os, t);
            emit(des_c.out, os.str());
            return 0;
        }
        if (*rmse) {
            const auto cfg = copdet::load_config(rmse_c.config);
            copdet::RunOptions o{rmse_c.seed.value_or(cfg.seed), rmse_c.replicates, rmse_c.threads};
            return finish(copdet::run_rmse_experiment(cfg, o), rmse_c.out, "rmse");
        }
        if (*roc) {
            const auto cfg = copdet::load_config(roc_c.config);
            copdet::RunOptions o{roc_c.seed.value_or(cfg.seed), roc_c.replicates, roc_c.threads};
            copdet::RocOptions ro;
            ro.group_size = roc_group;
            return finish(copdet::run_roc_experiment(cfg, o, ro), roc_c.out, "roc");
        }
        if (*trace) {
            const auto cfg = copdet::load_config(trace_c.config);
            const std::uint64_t seed = trace_c.seed.value_or(cfg.seed);
            const auto start = std::chrono::steady_clock::now();
            const auto tr = copdet::run_trace(cfg, seed);
            auto rep = copdet::trace_report(cfg, seed, tr);
            rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (!trace_log.empty()) write_file(trace_log, [&](std::ostream& o) { copdet::write_stage_trace(o, tr); });
            if (!trace_hist.empty()) {
                write_file(trace_hist, [&](std::ostream& o) { copdet::write_histogram_log(o, tr.history); });
            }
            return finish(rep, trace_c.out, "trace");
        }
    } catch (const copdet::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
