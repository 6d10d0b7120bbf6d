// Acceptance run: one PASS/FAIL line per criterion, followed by its numbers.
// Criteria can be selected by number on the command line (default: all).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "copdet/copula.hpp"
#include "copdet/harness.hpp"

using namespace copdet;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

ScenarioConfig scenario(const char* name) {
    return load_config(std::string(COPDET_SOURCE_DIR) + "/configs/" + name);
}

SensorGrid grid() { return SensorGrid(0.0, 60.0, 0.5); }

QuantizerBank random_bank(Rng& rng, std::size_t max_bits) {
    std::vector<SensorQuantizer> s;
    for (int i = 0; i < 2; ++i) {
        const std::size_t bits = 1 + rng.next_u64() % max_bits;
        SensorQuantizer q = SensorQuantizer::constant(grid(), bits, 0);
        for (std::size_t m = 0; m < 120; ++m) q.set_pattern(m, static_cast<std::uint32_t>(rng.next_u64() % (1u << bits)));
        s.push_back(std::move(q));
    }
    return QuantizerBank(std::move(s));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. Spearman rho of the three shipped dependence levels.
Verdict c1() {
    const CopulaModel m{CopulaFamily::Clayton, 2};
    const double thetas[] = {0.5109, 1.0759, 2.1316};
    const double target[] = {0.30, 0.50, 0.70};
    Verdict v{true, "rho ="};
    for (int k = 0; k < 3; ++k) {
        const double r = spearman_rho(m, thetas[k]);
        v.pass = v.pass && std::abs(r - target[k]) <= 0.01;
        v.detail += fmt(" %.5f", r);
    }
    return v;
}

// 2. Initial-system pmf under H0 against the factorized CDF values and 1e5 draws.
Verdict c2() {
    const auto cfg = scenario("s5_rho05.yaml");
    const auto& h0 = cfg.truth.h0();
    const auto f = quantized_pmf(h0, cfg.initial_bank);
    const double a = 1.0 - marginal_cdf(h0.marginals[0], 20.0);
    const double b = marginal_cdf(h0.marginals[1], 20.0);
    const double exact[4] = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
    Rng rng(cfg.seed);
    const std::size_t n = 100000;
    const auto g = count_outcomes(cfg.initial_bank, sample_hypothesis(h0, rng, n));
    double worst_exact = 0.0, worst_emp = 0.0;
    for (std::size_t u = 0; u < 4; ++u) {
        worst_exact = std::max(worst_exact, std::abs(f[u] - exact[u]));
        worst_emp = std::max(worst_emp, std::abs(static_cast<double>(g.counts[u]) / n - f[u]));
    }
    const double tol = 4.0 / std::sqrt(static_cast<double>(n));
    return {worst_exact <= 1e-3 && worst_emp <= tol,
            fmt("max |pmf - analytic| = %.2e (tol 1e-3), max |freq - pmf| = %.2e (tol %.2e)", worst_exact, worst_emp,
                tol)};
}

// 3. Likelihood-ratio rule against all 16 rules on random instances.
Verdict c3() {
    Rng rng(303);
    std::size_t exact = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a(4), b(4);
        for (int u = 0; u < 4; ++u) {
            a[u] = rng.uniform();
            b[u] = rng.uniform();
        }
        const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
        for (int u = 0; u < 4; ++u) {
            a[u] /= sa;
            b[u] /= sb;
        }
        const QuantizedPmf f0{a, "random"}, f1{b, "random"};
        const double p0 = 0.05 + 0.9 * rng.uniform();
        const CostCoefficients c{0.0, 0.5 + rng.uniform(), 0.5 + 2.0 * rng.uniform(), 0.0};
        const double opt = bayes_cost(f0, f1, optimal_fusion_rule(f0, f1, p0, c), p0, c).bayes_cost;
        double best = INFINITY;
        for (int code = 0; code < 16; ++code) {
            FusionRule r = FusionRule::constant(4, false);
            for (int u = 0; u < 4; ++u) r.decisions[u] = (code >> u) & 1;
            best = std::min(best, bayes_cost(f0, f1, r, p0, c).bayes_cost);
        }
        exact += (opt == best);
    }
    return {exact == 20, fmt("%zu/20 instances attain the exhaustive minimum", exact)};
}

// 4. Descent soundness from random starts plus the exhaustive toy comparison.
Verdict c4() {
    const auto cfg = scenario("s5_rho05.yaml");
    const auto& p = cfg.truth;
    const SensorGrid gs[2] = {grid(), grid()};
    const auto t0 = cell_mass(p.h0(), gs);
    const auto t1 = cell_mass(p.h1(), gs);
    Rng rng(404);
    bool monotone = true;
    std::size_t max_sweeps = 0;
    for (int s = 0; s < 10; ++s) {
        const QuantizerBank bank = random_bank(rng, 1);
        DesignState st{0, bank, FusionRule::or_rule(bank), p, {}, 0, false};
        const auto out = optimize_quantizers(st, t0, t1, p.p0(), cfg.costs);
        for (std::size_t k = 1; k < out.cost_trace.size(); ++k) {
            monotone = monotone && out.cost_trace[k] <= out.cost_trace[k - 1];
        }
        monotone = monotone && out.converged;
        max_sweeps = std::max(max_sweeps, out.sweeps);
    }

    // One sensor, four cells: all 16 banks with their optimal rules.
    const SensorGrid toy(0.0, 4.0, 1.0);
    std::size_t equal = 0;
    double worst_gap = 0.0;
    bool bounded = true;
    for (int k = 0; k < 10; ++k) {
        CellMassTable a{{4}, std::vector<double>(4)}, b{{4}, std::vector<double>(4)};
        for (int m = 0; m < 4; ++m) {
            a.mass[m] = rng.uniform();
            b.mass[m] = rng.uniform();
        }
        const double p0 = 0.2 + 0.6 * rng.uniform();
        double global = INFINITY;
        for (std::uint32_t code = 0; code < 16; ++code) {
            SensorQuantizer q = SensorQuantizer::constant(toy, 1, 0);
            for (std::size_t m = 0; m < 4; ++m) q.set_pattern(m, (code >> m) & 1u);
            const QuantizerBank bank({q});
            const auto f0 = quantized_pmf(a, bank), f1 = quantized_pmf(b, bank);
            global = std::min(global,
                              bayes_cost(f0, f1, optimal_fusion_rule(f0, f1, p0, cfg.costs), p0, cfg.costs).bayes_cost);
        }
        SensorQuantizer q = SensorQuantizer::constant(toy, 1, 0);
        for (std::size_t m = 0; m < 4; ++m) q.set_pattern(m, static_cast<std::uint32_t>(rng.next_u64() & 1u));
        const QuantizerBank start({q});
        const auto out = optimize_quantizers(DesignState{0, start, FusionRule::or_rule(start), p, {}, 0, false}, a, b,
                                             p0, cfg.costs);
        const double gap = out.cost_trace.back() - global;
        bounded = bounded && gap >= -1e-15;
        worst_gap = std::max(worst_gap, gap);
        equal += gap <= 1e-12;
    }
    return {monotone && max_sweeps <= 50 && bounded && equal >= 8,
            fmt("monotone traces %s, max sweeps %zu (limit 50); toy gap: %zu/10 at the global optimum, worst gap %.3e",
                monotone ? "yes" : "no", max_sweeps, equal, worst_gap)};
}

// 5. MLE at J = 10 groups of 1000 against the CRLB at truth.
Verdict c5() {
    auto cfg = scenario("s5_rho05.yaml");
    cfg.rmse = {10, 10, 1000};
    const auto data = run_rmse_replicates(cfg, {cfg.seed, 200, 0});
    std::vector<double> ep, et, vp, vt;
    for (std::size_t r = 0; r < data.ok.size(); ++r) {
        if (!data.ok[r][0]) continue;
        ep.push_back(std::abs(data.p1_hat[r][0] - 0.2));
        et.push_back(std::abs(data.theta1_hat[r][0] - cfg.truth.h1().theta));
        if (std::isfinite(data.crlb_p1[r][0]) && std::isfinite(data.crlb_theta1[r][0])) {
            vp.push_back(data.crlb_p1[r][0]);
            vt.push_back(data.crlb_theta1[r][0]);
        }
    }
    if (ep.empty() || vp.empty()) return {false, "no converged replicates with a CRLB"};
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    auto rms = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s / v.size());
    };
    const double sp = std::sqrt(mean(vp)), st = std::sqrt(mean(vt));
    const double mp = median(ep), mt = median(et);
    const double rp = rms(ep) / sp, rt = rms(et) / st;
    const bool a = mp <= 3 * sp && mt <= 3 * st;
    const bool b = rp >= 1.0 && rp <= 1.5 && rt >= 1.0 && rt <= 1.5;
    return {a && b, fmt("%zu/200 converged; (a) median |err| P1 %.4f vs 3sd %.4f, theta1 %.4f vs 3sd %.4f; "
                        "(b) RMSE/CRLB P1 %.3f, theta1 %.3f (band [1.0, 1.5])",
                        ep.size(), mp, 3 * sp, mt, 3 * st, rp, rt)};
}

// 6. RMSE trends over J and across dependence levels.
Verdict c6() {
    const char* names[] = {"s5_rho03.yaml", "s5_rho05.yaml", "s5_rho07.yaml"};
    std::vector<std::vector<double>> rp(3), rt(3);
    bool decreasing = true;
    std::string detail;
    for (int k = 0; k < 3; ++k) {
        const auto cfg = scenario(names[k]);
        const RunOptions opts{cfg.seed, 200, 0};
        const auto rep = rmse_report(cfg, opts, run_rmse_replicates(cfg, opts));
        for (const auto& row : rep.table.rows) {
            rp[k].push_back(std::stod(row[3]));
            rt[k].push_back(std::stod(row[4]));
        }
        for (std::size_t j = 1; j < rp[k].size(); ++j) {
            decreasing = decreasing && rp[k][j] < rp[k][j - 1] && rt[k][j] < rt[k][j - 1];
        }
        detail += fmt("rho %.1f: P1 %.4f->%.4f theta1 %.3f->%.3f (failures %zu); ", cfg.rho, rp[k].front(),
                      rp[k].back(), rt[k].front(), rt[k].back(), rep.failures);
    }
    const bool p_order = rp[2].back() <= rp[0].back();
    const bool t_order = rt[0].back() <= rt[2].back();
    detail += fmt("strictly decreasing %s; RMSE(P1) rho .7 <= rho .3 %s; RMSE(theta1) rho .3 <= rho .7 %s",
                  decreasing ? "yes" : "no", p_order ? "yes" : "no", t_order ? "yes" : "no");
    for (int k = 0; k < 3; ++k) {
        detail += fmt("\n    rho %s P1:", names[k]);
        for (double x : rp[k]) detail += fmt(" %.4f", x);
        detail += " theta1:";
        for (double x : rt[k]) detail += fmt(" %.3f", x);
    }
    return {decreasing && p_order && t_order, detail};
}

struct RocPoint {
    double pf, pd, se_pf, se_pd;
};

std::vector<RocPoint> curve(const RocData& d, std::size_t det) {
    std::vector<RocPoint> out;
    for (std::size_t k = 0; k < d.c01.size(); ++k) {
        const auto& f = d.pf[det][k];
        const auto& g = d.pd[det][k];
        const double n = static_cast<double>(f.size());
        const double mf = std::accumulate(f.begin(), f.end(), 0.0) / n;
        const double mg = std::accumulate(g.begin(), g.end(), 0.0) / n;
        double vf = 0.0, vg = 0.0;
        for (std::size_t r = 0; r < f.size(); ++r) {
            vf += (f[r] - mf) * (f[r] - mf);
            vg += (g[r] - mg) * (g[r] - mg);
        }
        const double dn = std::max(1.0, n - 1.0);
        out.push_back({mf, mg, std::sqrt(vf / dn / n), std::sqrt(vg / dn / n)});
    }
    return out;
}

// Linear interpolation of a curve's (pf, pd) points, anchored at (0, 0) and
// (1, 1); returns P_d and the standard error of the nearer point.
std::pair<double, double> pd_at(std::vector<RocPoint> c, double pf) {
    c.push_back({0.0, 0.0, 0.0, 0.0});
    c.push_back({1.0, 1.0, 0.0, 0.0});
    std::sort(c.begin(), c.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.pf < b.pf || (a.pf == b.pf && a.pd < b.pd);
    });
    for (std::size_t i = 1; i < c.size(); ++i) {
        if (pf <= c[i].pf) {
            const auto& lo = c[i - 1];
            const auto& hi = c[i];
            if (hi.pf == lo.pf) return {hi.pd, hi.se_pd};
            const double w = (pf - lo.pf) / (hi.pf - lo.pf);
            return {lo.pd + w * (hi.pd - lo.pd), w < 0.5 ? lo.se_pd : hi.se_pd};
        }
    }
    return {1.0, 0.0};
}

// Points of `lower` at which `upper` is at least as high, within two standard
// errors of the difference.
std::size_t dominated_points(const std::vector<RocPoint>& upper, const std::vector<RocPoint>& lower) {
    std::size_t n = 0;
    for (const auto& p : lower) {
        const auto [pd, se] = pd_at(upper, p.pf);
        n += pd >= p.pd - 2.0 * std::sqrt(se * se + p.se_pd * p.se_pd);
    }
    return n;
}

std::string describe(const char* name, const std::vector<RocPoint>& c) {
    std::string s = fmt("\n    %-12s", name);
    for (const auto& p : c) s += fmt(" (%.3f,%.3f)", p.pf, p.pd);
    return s;
}

// 7. ROC ordering at rho = 0.7 and improvement with the per-stage budget.
Verdict c7() {
    const auto cfg = scenario("s5_rho07.yaml");
    const RunOptions opts{cfg.seed, 100, 0};
    const auto d = run_roc_replicates(cfg, opts);
    const auto fb = curve(d, 0), ind = curve(d, 1), clair = curve(d, 2);
    RocOptions big;
    big.detectors = {Detector::Feedback};
    big.group_size = 2 * cfg.roc.group_size;
    const auto fb2 = curve(run_roc_replicates(cfg, opts, big), 0);

    const std::size_t a = dominated_points(clair, fb);
    const std::size_t b = dominated_points(fb, ind);
    const std::size_t c = dominated_points(fb2, fb);
    std::size_t trivial = 0;
    for (const auto& p : fb) trivial += (p.pf == 0.0 && p.pd == 0.0);
    std::string detail = fmt("clairvoyant >= feedback at %zu/10, feedback >= independence at %zu/10, "
                             "10x%zu >= 10x%zu at %zu/10 (feedback points at (0,0): %zu)",
                             a, b, big.group_size, cfg.roc.group_size, c, trivial);
    detail += describe("clairvoyant", clair) + describe("feedback", fb) + describe("feedback x2", fb2) +
              describe("independence", ind);
    return {a >= 8 && b >= 8 && c >= 8, detail};
}

// 8. Re-running an experiment gives the same bytes.
Verdict c8() {
    auto cfg = scenario("s5_rho05.yaml");
    cfg.rmse = {2, 4, 100};
    const auto a = run_rmse_experiment(cfg, {7, 4, 0}).table.str();
    const auto b = run_rmse_experiment(cfg, {7, 4, 0}).table.str();
    auto rcfg = scenario("s5_rho07.yaml");
    rcfg.roc.stages = 2;
    const auto c = run_roc_experiment(rcfg, {7, 2, 0}).table.str();
    const auto d = run_roc_experiment(rcfg, {7, 2, 0}).table.str();
    return {a == b && c == d && !a.empty() && !c.empty(),
            fmt("rmse csv %zu bytes %s, roc csv %zu bytes %s", a.size(), a == b ? "identical" : "DIFFERENT", c.size(),
                c == d ? "identical" : "DIFFERENT")};
}

// 9. Normalization, Fisher symmetry and PSD-ness, likelihood derivatives.
Verdict c9() {
    const auto cfg = scenario("s5_rho05.yaml");
    Rng rng(909);
    double worst_norm = 0.0, worst_asym = 0.0, min_eig = INFINITY, worst_score = 0.0, worst_step = 0.0;
    for (int k = 0; k < 100; ++k) {
        const QuantizerBank bank = random_bank(rng, 2);
        ParamVector p = cfg.truth;
        p.set_value(p.index_of("h1.theta"), 0.2 + 4.0 * rng.uniform());
        p.set_value(p.index_of("p0"), 0.5 + 0.45 * rng.uniform());
        for (const auto* h : {&p.h0(), &p.h1()}) {
            const auto f = quantized_pmf(*h, bank);
            worst_norm = std::max(worst_norm, std::abs(std::accumulate(f.probabilities.begin(), f.probabilities.end(), 0.0) - 1.0));
        }
        const std::vector<QuantizerBank> banks{bank};
        const std::vector<double> w{1.0};
        const auto fi = fisher_info(p, banks, w);
        worst_asym = std::max(worst_asym, (fi.matrix - fi.matrix.transpose()).cwiseAbs().maxCoeff());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fi.matrix);
        min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());

        // Counts drawn from the model; score in p0 is sum K (a - b) / f exactly.
        const auto a = quantized_pmf(p.h0(), bank), b = quantized_pmf(p.h1(), bank);
        QuantizedHistogram hist;
        hist.groups.push_back(count_outcomes(bank, sample_mixture(p, rng, 500)));
        double score = 0.0;
        for (std::size_t u = 0; u < a.size(); ++u) {
            const double f = p.p0() * a[u] + (1 - p.p0()) * b[u];
            if (hist.groups[0].counts[u]) score += hist.groups[0].counts[u] * (a[u] - b[u]) / f;
        }
        const std::vector<double> x{p.p0(), p.h1().theta};
        const auto g = log_likelihood_gradient(x, hist, p);
        worst_score = std::max(worst_score, std::abs(g[0] - score) / std::max(1.0, std::abs(score)));
        const auto g2 = log_likelihood_gradient(x, hist, p, 2e-5);
        worst_step = std::max(worst_step, std::abs(g[1] - g2[1]) / std::max(1.0, std::abs(g[1])));
    }
    return {worst_norm <= 1e-6 && worst_asym <= 1e-12 && min_eig >= -1e-10 && worst_score <= 1e-4 && worst_step <= 1e-4,
            fmt("max |sum f - 1| %.1e; max Fisher asymmetry %.1e; min eigenvalue %.2e; p0 score rel err %.1e; "
                "theta1 derivative step-halving rel diff %.1e",
                worst_norm, worst_asym, min_eig, worst_score, worst_step)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Verdict()>> criteria{c1, c2, c3, c4, c5, c6, c7, c8, c9};
    std::set<int> chosen;
    for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
    int failed = 0;
    for (int k = 1; k <= static_cast<int>(criteria.size()); ++k) {
        if (!chosen.empty() && !chosen.count(k)) continue;
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[k - 1]();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("criterion %d: %s (%.1fs)\n    %s\n", k, v.pass ? "PASS" : "FAIL", secs, v.detail.c_str());
        std::fflush(stdout);
        failed += !v.pass;
    }
    return failed == 0 ? 0 : 1;
}
