// Python bindings: copula helpers, quantized pmfs, fusion rules, and the
// experiment harness over scenario files.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "copdet/config.hpp"
#include "copdet/copula.hpp"
#include "copdet/harness.hpp"
#include "copdet/io.hpp"

namespace py = pybind11;
using namespace copdet;

namespace {

const CopulaModel kClayton{CopulaFamily::Clayton, 2};

CostCoefficients costs_from(double c00, double c01, double c10, double c11) {
    CostCoefficients c{c00, c01, c10, c11};
    c.validate();
    return c;
}

py::dict stage_dict(const StageRecord& s) {
    py::dict d;
    d["stage"] = s.stage;
    d["p1"] = s.estimate.p1();
    d["theta1"] = s.estimate.h1().theta;
    d["converged"] = s.mle.converged;
    d["reused_previous"] = s.reused_previous;
    d["rule"] = s.design.rule.decisions;
    d["design_cost"] = s.design.cost_trace.empty() ? 0.0 : s.design.cost_trace.back();
    d["p_false_alarm"] = s.metrics_at_truth.p_false_alarm;
    d["p_detect"] = s.metrics_at_truth.p_detect;
    d["bayes_cost"] = s.metrics_at_truth.bayes_cost;
    return d;
}

RunOptions run_options(const ScenarioConfig& cfg, std::optional<std::uint64_t> seed, std::size_t replicates,
                       unsigned threads) {
    return RunOptions{seed.value_or(cfg.seed), replicates, threads};
}

}  // namespace

PYBIND11_MODULE(_copdet, m) {
    m.doc() = "Distributed detection with Clayton-dependent sensors";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("clayton_density", [](double theta, double u, double v) {
        const double x[2] = {u, v};
        return copula_density(kClayton, theta, x);
    }, py::arg("theta"), py::arg("u"), py::arg("v"));
    m.def("clayton_cdf", [](double theta, double u, double v) {
        const double x[2] = {u, v};
        return copula_cdf(kClayton, theta, x);
    }, py::arg("theta"), py::arg("u"), py::arg("v"));
    m.def("spearman_rho", [](double theta) { return spearman_rho(kClayton, theta); }, py::arg("theta"));
    m.def("theta_from_rho", [](double rho) { return theta_from_rho(kClayton, rho); }, py::arg("rho"));
    m.def("gamma_cdf", [](double shape, double scale, double y) {
        return marginal_cdf({MarginalFamily::Gamma, shape, scale}, y);
    }, py::arg("shape"), py::arg("scale"), py::arg("y"));

    m.def("optimal_fusion_rule",
          [](std::vector<double> f0, std::vector<double> f1, double p0, double c00, double c01, double c10,
             double c11) {
              return optimal_fusion_rule({std::move(f0), "f0"}, {std::move(f1), "f1"}, p0,
                                         costs_from(c00, c01, c10, c11))
                  .decisions;
          },
          py::arg("f0"), py::arg("f1"), py::arg("p0"), py::arg("c00") = 0.0, py::arg("c01") = 1.0,
          py::arg("c10") = 1.0, py::arg("c11") = 0.0);
    m.def("bayes_cost",
          [](std::vector<double> f0, std::vector<double> f1, std::vector<std::uint8_t> rule, double p0, double c00,
             double c01, double c10, double c11) {
              const auto r = bayes_cost({std::move(f0), "f0"}, {std::move(f1), "f1"}, FusionRule{std::move(rule)}, p0,
                                        costs_from(c00, c01, c10, c11));
              return py::make_tuple(r.p_false_alarm, r.p_detect, r.bayes_cost);
          },
          py::arg("f0"), py::arg("f1"), py::arg("rule"), py::arg("p0"), py::arg("c00") = 0.0, py::arg("c01") = 1.0,
          py::arg("c10") = 1.0, py::arg("c11") = 0.0);

    py::class_<ScenarioConfig>(m, "Scenario")
        .def_static("load", &load_config, py::arg("path"))
        .def_static("parse", &parse_config, py::arg("text"), py::arg("origin") = "<config>")
        .def_readonly("name", &ScenarioConfig::name)
        .def_readonly("seed", &ScenarioConfig::seed)
        .def_readonly("rho", &ScenarioConfig::rho)
        .def_property_readonly("p1", [](const ScenarioConfig& c) { return c.truth.p1(); })
        .def_property_readonly("theta1", [](const ScenarioConfig& c) { return c.truth.h1().theta; })
        .def("initial_pmfs", [](const ScenarioConfig& c) {
            return py::make_tuple(quantized_pmf(c.truth.h0(), c.initial_bank).probabilities,
                                  quantized_pmf(c.truth.h1(), c.initial_bank).probabilities);
        }, "Outcome pmfs of the initial quantizers under H0 and H1.")
        .def("design", [](const ScenarioConfig& c) {
            DesignState entry{0, c.initial_bank, c.initial_rule, c.truth, {}, 0, false};
            const auto st = design_system(entry, c.truth, c.costs, c.design);
            const auto m = bayes_cost(st.bank, st.rule, c.truth, c.costs);
            py::dict d;
            d["rule"] = st.rule.decisions;
            d["cost_trace"] = st.cost_trace;
            d["sweeps"] = st.sweeps;
            d["p_false_alarm"] = m.p_false_alarm;
            d["p_detect"] = m.p_detect;
            return d;
        }, "Quantizer and fusion design at the true parameters.")
        .def("trace", [](const ScenarioConfig& c, std::optional<std::uint64_t> seed, std::optional<std::string> log) {
            FeedbackTrace tr;
            {
                py::gil_scoped_release release;
                tr = run_trace(c, seed.value_or(c.seed));
            }
            if (log) {
                std::ofstream f(*log, std::ios::binary);
                write_histogram_log(f, tr.history);
            }
            py::list out;
            for (const auto& s : tr.stages) out.append(stage_dict(s));
            return out;
        }, py::arg("seed") = py::none(), py::arg("histogram_log") = py::none())
        .def("estimate", [](const ScenarioConfig& c, const std::string& path, std::optional<std::uint64_t> seed,
                            std::size_t groups) {
            std::ifstream in(path);
            if (!in) throw std::runtime_error("cannot open " + path);
            const auto hist = read_histogram_log(in);
            const auto res = estimate_from_histogram(c, hist, seed.value_or(c.seed), groups);
            return mle_record(res.mle, res.crlb);
        }, py::arg("histogram_log"), py::arg("seed") = py::none(), py::arg("groups") = 0,
           "MLE record (JSON text) from a histogram log.")
        .def("rmse", [](const ScenarioConfig& c, std::optional<std::uint64_t> seed, std::size_t replicates,
                        unsigned threads) {
            py::gil_scoped_release release;
            return run_rmse_experiment(c, run_options(c, seed, replicates, threads)).table.str();
        }, py::arg("seed") = py::none(), py::arg("replicates") = 0, py::arg("threads") = 0, "RMSE table as CSV text.")
        .def("roc", [](const ScenarioConfig& c, std::optional<std::uint64_t> seed, std::size_t replicates,
                       unsigned threads) {
            py::gil_scoped_release release;
            return run_roc_experiment(c, run_options(c, seed, replicates, threads)).table.str();
        }, py::arg("seed") = py::none(), py::arg("replicates") = 0, py::arg("threads") = 0, "ROC table as CSV text.");
}
