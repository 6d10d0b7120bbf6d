#include "copdet/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "copdet/random.hpp"

namespace copdet {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> hypothesis_key(const HypothesisModel& h) {
    std::vector<double> key{static_cast<double>(h.copula.family), h.theta};
    for (const auto& m : h.marginals) {
        key.push_back(m.shape);
        key.push_back(m.scale);
    }
    return key;
}

bool hypothesis_fixed(const ParamVector& p, int j) {
    const std::string prefix = "h" + std::to_string(j) + ".";
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.free_mask()[i] && p.entries()[i].name.rfind(prefix, 0) == 0) return false;
    }
    return true;
}

// Unconstrained coordinates: logit for the prior, log for positive entries.
double to_z(ParamKind kind, double x) {
    if (kind == ParamKind::Prior) return std::log(x / (1.0 - x));
    return std::log(x);
}

double from_z(ParamKind kind, double z) {
    if (kind == ParamKind::Prior) return 1.0 / (1.0 + std::exp(-z));
    return std::exp(z);
}

double radical_inverse(std::size_t index, unsigned base) {
    double result = 0.0;
    double f = 1.0 / base;
    while (index > 0) {
        result += f * static_cast<double>(index % base);
        index /= base;
        f /= base;
    }
    return result;
}

constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

struct SimplexResult {
    std::vector<double> x;
    double f = std::numeric_limits<double>::infinity();
    bool converged = false;
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
};

// Nelder-Mead minimization with every trial point projected into [lo, hi].
template <typename F>
SimplexResult nelder_mead(F&& f, std::vector<double> start, const std::vector<double>& lo,
                          const std::vector<double>& hi, double step, double tolerance,
                          std::size_t max_evaluations) {
    const std::size_t k = start.size();
    auto clamp = [&](std::vector<double>& x) {
        for (std::size_t i = 0; i < k; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    };
    SimplexResult res;
    auto eval = [&](const std::vector<double>& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
    };

    clamp(start);
    std::vector<std::vector<double>> pts(k + 1, start);
    for (std::size_t i = 0; i < k; ++i) {
        pts[i + 1][i] += (start[i] + step <= hi[i]) ? step : -step;
        clamp(pts[i + 1]);
    }
    std::vector<double> val(k + 1);
    for (std::size_t i = 0; i <= k; ++i) val[i] = eval(pts[i]);

    std::vector<std::size_t> order(k + 1);
    std::vector<double> centroid(k), trial(k), trial2(k);
    for (;;) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
        const std::size_t best = order[0];
        const std::size_t worst = order[k];
        const std::size_t second = order[k - 1 > 0 ? k - 1 : 0];

        double diameter = 0.0;
        for (std::size_t i = 0; i <= k; ++i) {
            for (std::size_t d = 0; d < k; ++d) diameter = std::max(diameter, std::abs(pts[i][d] - pts[best][d]));
        }
        if (diameter < tolerance) {
            res.converged = true;
            break;
        }
        if (res.evaluations >= max_evaluations) break;
        ++res.iterations;

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i <= k; ++i) {
            if (i == worst) continue;
            for (std::size_t d = 0; d < k; ++d) centroid[d] += pts[i][d] / static_cast<double>(k);
        }
        for (std::size_t d = 0; d < k; ++d) trial[d] = centroid[d] + (centroid[d] - pts[worst][d]);
        clamp(trial);
        const double fr = eval(trial);

        if (fr < val[best]) {
            for (std::size_t d = 0; d < k; ++d) trial2[d] = centroid[d] + 2.0 * (trial[d] - centroid[d]);
            clamp(trial2);
            const double fe = eval(trial2);
            if (fe < fr) {
                pts[worst] = trial2;
                val[worst] = fe;
            } else {
                pts[worst] = trial;
                val[worst] = fr;
            }
            continue;
        }
        if (fr < val[second]) {
            pts[worst] = trial;
            val[worst] = fr;
            continue;
        }
        bool shrink = false;
        if (fr < val[worst]) {
            for (std::size_t d = 0; d < k; ++d) trial2[d] = centroid[d] + 0.5 * (trial[d] - centroid[d]);
            clamp(trial2);
            const double fc = eval(trial2);
            if (fc <= fr) {
                pts[worst] = trial2;
                val[worst] = fc;
            } else {
                shrink = true;
            }
        } else {
            for (std::size_t d = 0; d < k; ++d) trial2[d] = centroid[d] + 0.5 * (pts[worst][d] - centroid[d]);
            clamp(trial2);
            const double fc = eval(trial2);
            if (fc < val[worst]) {
                pts[worst] = trial2;
                val[worst] = fc;
            } else {
                shrink = true;
            }
        }
        if (shrink) {
            for (std::size_t i = 0; i <= k; ++i) {
                if (i == best) continue;
                for (std::size_t d = 0; d < k; ++d) pts[i][d] = pts[best][d] + 0.5 * (pts[i][d] - pts[best][d]);
                val[i] = eval(pts[i]);
            }
        }
    }
    const auto it = std::min_element(val.begin(), val.end());
    res.x = pts[static_cast<std::size_t>(it - val.begin())];
    res.f = *it;
    return res;
}

}  // namespace

LikelihoodEvaluator::LikelihoodEvaluator(const QuantizedHistogram& hist, ParamVector scenario,
                                         std::shared_ptr<CellMassCache> shared_cache)
    : scenario_(std::move(scenario)), cache_(std::move(shared_cache)) {
    hist.validate();
    std::vector<const QuantizerBank*> seen;
    for (const auto& g : hist.groups) {
        if (g.bank.sensor_count() != scenario_.h0().dimension()) {
            throw std::invalid_argument("histogram bank and scenario disagree on the number of sensors");
        }
        total_ += g.size();
        std::size_t k = 0;
        while (k < seen.size() && !(*seen[k] == g.bank)) ++k;
        group_of_.push_back(k);
        if (k < seen.size()) {
            for (std::size_t u = 0; u < g.counts.size(); ++u) groups_[k].counts[u] += g.counts[u];
            continue;
        }
        seen.push_back(&g.bank);
        groups_.push_back({OutcomeAggregator(g.bank), g.counts, g.bank.grids(), g.bank.outcome_count(), {}, {}});
    }
    std::vector<QuantizerBank> banks;
    for (const auto* b : seen) banks.push_back(*b);
    if (BankSetAggregator::supports(banks)) batch_.emplace(banks);
}

std::shared_ptr<const CellMassTable> LikelihoodEvaluator::table_for(const HypothesisModel& h,
                                                                     const std::vector<SensorGrid>& grids) {
    auto key = hypothesis_key(h);
    for (std::size_t i = 0; i < memo_.size(); ++i) {
        if (memo_[i].key == key && memo_[i].grids == grids) {
            auto table = memo_[i].table;
            std::rotate(memo_.begin(), memo_.begin() + static_cast<std::ptrdiff_t>(i),
                        memo_.begin() + static_cast<std::ptrdiff_t>(i) + 1);
            return table;
        }
    }
    std::shared_ptr<const CellMassTable> table;
    const bool cacheable = cache_ && ((&h == &scenario_.h0() && hypothesis_fixed(scenario_, 0)) ||
                                      (&h == &scenario_.h1() && hypothesis_fixed(scenario_, 1)));
    if (cacheable) {
        table = cache_->get(h, grids);
    } else {
        table = std::make_shared<const CellMassTable>(cell_mass(h, grids));
    }
    memo_.insert(memo_.begin(), {std::move(key), grids, table});
    if (memo_.size() > 6) memo_.pop_back();
    return table;
}

const std::vector<double>& LikelihoodEvaluator::masses(std::size_t k, int j, const HypothesisModel& h) {
    Group& g = groups_[k];
    if (batch_) {
        auto table = table_for(h, g.grids);
        if (table != batch_table_[j]) {
            auto all = (*batch_)(*table);
            for (std::size_t i = 0; i < groups_.size(); ++i) {
                const double total = std::accumulate(all[i].begin(), all[i].end(), 0.0);
                for (double& x : all[i]) x /= total;
                groups_[i].last_masses[j] = std::move(all[i]);
                groups_[i].last_table[j] = table;
            }
            batch_table_[j] = std::move(table);
        }
        return g.last_masses[j];
    }
    auto table = table_for(h, g.grids);
    if (table != g.last_table[j]) {
        auto a = g.aggregator(*table);
        const double total = std::accumulate(a.begin(), a.end(), 0.0);
        for (double& x : a) x /= total;
        g.last_masses[j] = std::move(a);
        g.last_table[j] = std::move(table);
    }
    return g.last_masses[j];
}

std::vector<std::vector<double>> LikelihoodEvaluator::merged_pmfs(const ParamVector& params) {
    std::vector<std::vector<double>> out;
    out.reserve(groups_.size());
    const double p0 = params.p0();
    for (std::size_t k = 0; k < groups_.size(); ++k) {
        const Group& g = groups_[k];
        const auto& a0 = masses(k, 0, params.h0());
        const auto& a1 = masses(k, 1, params.h1());
        std::vector<double> f(g.outcomes);
        for (std::size_t u = 0; u < g.outcomes; ++u) f[u] = p0 * a0[u] + (1.0 - p0) * a1[u];
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<std::vector<double>> LikelihoodEvaluator::group_pmfs(const ParamVector& params) {
    const auto merged = merged_pmfs(params);
    std::vector<std::vector<double>> out;
    out.reserve(group_of_.size());
    for (std::size_t k : group_of_) out.push_back(merged[k]);
    return out;
}

double LikelihoodEvaluator::at(const ParamVector& params) {
    if (!params.admissible()) return kNegInf;
    // Evaluate through scenario_ so fixed hypotheses hit the shared cache.
    const auto saved = scenario_.values();
    const auto values = params.values();
    for (std::size_t i = 0; i < values.size(); ++i) scenario_.set_value(i, values[i]);
    const auto pmfs = merged_pmfs(scenario_);
    for (std::size_t i = 0; i < saved.size(); ++i) scenario_.set_value(i, saved[i]);

    double ll = 0.0;
    for (std::size_t j = 0; j < groups_.size(); ++j) {
        const auto& counts = groups_[j].counts;
        for (std::size_t u = 0; u < counts.size(); ++u) {
            if (counts[u] == 0) continue;
            if (!(pmfs[j][u] > 0.0)) return kNegInf;
            ll += static_cast<double>(counts[u]) * std::log(pmfs[j][u]);
        }
    }
    return ll;
}

double LikelihoodEvaluator::operator()(std::span<const double> free_values) {
    ParamVector p = scenario_;
    p.set_free_values(free_values);
    return at(p);
}

double log_likelihood(std::span<const double> free_values, const QuantizedHistogram& hist,
                      const ParamVector& scenario) {
    LikelihoodEvaluator eval(hist, scenario);
    return eval(free_values);
}

std::vector<double> log_likelihood_gradient(std::span<const double> free_values, const QuantizedHistogram& hist,
                                            const ParamVector& scenario, double relative_step) {
    LikelihoodEvaluator eval(hist, scenario);
    std::vector<double> x(free_values.begin(), free_values.end());
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = relative_step * std::max(std::abs(x[i]), 1e-3);
        const double keep = x[i];
        x[i] = keep + h;
        const double up = eval(x);
        x[i] = keep - h;
        const double down = eval(x);
        x[i] = keep;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

MleResult mle_fit(const QuantizedHistogram& hist, const ParamVector& scenario, const MleOptions& opts,
                  std::shared_ptr<CellMassCache> cache) {
    if (hist.groups.empty()) throw std::invalid_argument("mle_fit needs a nonempty histogram");
    const auto free_idx = scenario.free_indices();
    const std::size_t k = free_idx.size();
    if (k == 0) throw std::invalid_argument("mle_fit needs at least one free parameter");
    if (k > std::size(kPrimes)) throw std::invalid_argument("too many free parameters");

    LikelihoodEvaluator eval(hist, scenario, std::move(cache));
    const double n_total = std::max<double>(1.0, static_cast<double>(eval.total_count()));

    std::vector<ParamKind> kinds(k);
    std::vector<double> lo(k), hi(k), init_lo(k), init_hi(k);
    for (std::size_t d = 0; d < k; ++d) {
        const auto kind = scenario.entries()[free_idx[d]].kind;
        kinds[d] = kind;
        const auto b = admissible_bounds(kind);
        lo[d] = to_z(kind, b.lo);
        hi[d] = to_z(kind, b.hi);
        switch (kind) {
            case ParamKind::Prior:
                init_lo[d] = 0.05;
                init_hi[d] = 0.95;
                break;
            case ParamKind::Dependence:
                init_lo[d] = std::log(0.1);
                init_hi[d] = std::log(10.0);
                break;
            default: {
                const double x = scenario.value(free_idx[d]);
                init_lo[d] = std::log(0.5 * x);
                init_hi[d] = std::log(2.0 * x);
            }
        }
    }

    std::vector<double> natural(k);
    auto objective = [&](const std::vector<double>& z) {
        for (std::size_t d = 0; d < k; ++d) natural[d] = from_z(kinds[d], z[d]);
        return -eval(natural);
    };

    // Halton points with a seed-dependent Cranley-Patterson rotation.
    std::vector<double> shift(k);
    for (std::size_t d = 0; d < k; ++d) {
        shift[d] = static_cast<double>(mix_seed(opts.seed * 0x100 + d) >> 11) * 0x1.0p-53;
    }

    MleResult best;
    best.params = scenario;
    best.log_likelihood = kNegInf;
    const std::size_t restarts = std::max<std::size_t>(1, opts.restarts);
    for (std::size_t r = 0; r < restarts; ++r) {
        std::vector<double> start(k);
        for (std::size_t d = 0; d < k; ++d) {
            double u = radical_inverse(r + 1, kPrimes[d]) + shift[d];
            u -= std::floor(u);
            if (kinds[d] == ParamKind::Prior) {
                start[d] = to_z(kinds[d], init_lo[d] + u * (init_hi[d] - init_lo[d]));
            } else {
                start[d] = init_lo[d] + u * (init_hi[d] - init_lo[d]);
            }
        }
        const auto sr = nelder_mead(objective, start, lo, hi, 0.5, opts.tolerance, opts.max_evaluations);
        best.evaluations += sr.evaluations;
        ++best.restarts_used;
        const double ll = -sr.f;
        if (ll > best.log_likelihood || (r == 0 && std::isinf(ll))) {
            best.log_likelihood = ll;
            best.converged = sr.converged && std::isfinite(ll);
            best.iterations = sr.iterations;
            best.estimate.resize(k);
            for (std::size_t d = 0; d < k; ++d) best.estimate[d] = from_z(kinds[d], sr.x[d]);
        }
    }
    best.params.set_free_values(best.estimate);

    if (std::isfinite(best.log_likelihood)) {
        // Stationarity check on the per-sample log-likelihood, transformed space.
        std::vector<double> z(k);
        for (std::size_t d = 0; d < k; ++d) z[d] = to_z(kinds[d], best.estimate[d]);
        double norm2 = 0.0;
        for (std::size_t d = 0; d < k; ++d) {
            const double h = 1e-5;
            auto zp = z;
            auto zm = z;
            zp[d] = std::min(z[d] + h, hi[d]);
            zm[d] = std::max(z[d] - h, lo[d]);
            if (zp[d] == zm[d]) continue;
            const double g = (objective(zm) - objective(zp)) / ((zp[d] - zm[d]) * n_total);
            norm2 += g * g;
        }
        best.gradient_norm = std::sqrt(norm2);
    } else {
        best.converged = false;
        best.gradient_norm = std::numeric_limits<double>::infinity();
    }
    return best;
}

Eigen::MatrixXd categorical_fisher(std::span<const double> pmf, const Eigen::MatrixXd& gradients) {
    if (static_cast<std::size_t>(gradients.rows()) != pmf.size()) {
        throw std::invalid_argument("gradient rows must match the pmf size");
    }
    const Eigen::Index k = gradients.cols();
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t u = 0; u < pmf.size(); ++u) {
        if (!(pmf[u] > 0.0)) continue;
        const Eigen::VectorXd g = gradients.row(static_cast<Eigen::Index>(u)).transpose();
        info.noalias() += (g * g.transpose()) / pmf[u];
    }
    return 0.5 * (info + info.transpose());
}

FisherInfo fisher_info(const ParamVector& at, std::span<const QuantizerBank> banks, std::span<const double> weights,
                       std::shared_ptr<CellMassCache> cache) {
    if (banks.empty() || banks.size() != weights.size()) {
        throw std::invalid_argument("fisher_info needs one weight per bank");
    }
    if (!at.admissible()) throw std::invalid_argument("fisher_info needs an interior parameter point");
    const auto free_idx = at.free_indices();
    const std::size_t k = free_idx.size();
    if (k == 0) throw std::invalid_argument("fisher_info needs at least one free parameter");
    const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(weight_sum > 0.0)) throw std::invalid_argument("fisher_info weights must be positive");

    // A histogram with empty counts gives access to the per-bank pmfs.
    QuantizedHistogram shell;
    for (const auto& b : banks) shell.groups.push_back({b, std::vector<std::uint64_t>(b.outcome_count(), 0)});
    LikelihoodEvaluator eval(shell, at, std::move(cache));

    const auto center = eval.group_pmfs(at);
    std::vector<Eigen::MatrixXd> grads(banks.size());
    for (std::size_t j = 0; j < banks.size(); ++j) {
        grads[j] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(center[j].size()), static_cast<Eigen::Index>(k));
    }
    for (std::size_t d = 0; d < k; ++d) {
        const std::size_t idx = free_idx[d];
        const double x = at.value(idx);
        const auto bounds = admissible_bounds(at.entries()[idx].kind);
        double h = 1e-5 * std::max(std::abs(x), 1e-3);
        h = std::min({h, 0.5 * (x - bounds.lo), 0.5 * (bounds.hi - x)});
        ParamVector up = at;
        ParamVector down = at;
        up.set_value(idx, x + h);
        down.set_value(idx, x - h);
        const auto fu = eval.group_pmfs(up);
        const auto fd = eval.group_pmfs(down);
        for (std::size_t j = 0; j < banks.size(); ++j) {
            for (std::size_t u = 0; u < center[j].size(); ++u) {
                grads[j](static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(d)) = (fu[j][u] - fd[j][u]) / (2.0 * h);
            }
        }
    }

    FisherInfo fi;
    fi.matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < banks.size(); ++j) {
        fi.per_group.push_back(categorical_fisher(center[j], grads[j]));
        fi.weights.push_back(weights[j] / weight_sum);
        fi.matrix += fi.weights.back() * fi.per_group.back();
    }
    return fi;
}

std::optional<Eigen::MatrixXd> fisher_crlb(const FisherInfo& fi, double n_total) {
    if (!(n_total > 0.0)) throw std::invalid_argument("fisher_crlb needs N > 0");
    const Eigen::MatrixXd scaled = n_total * fi.matrix;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    if (eig.info() != Eigen::Success) return std::nullopt;
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300))) return std::nullopt;
    Eigen::MatrixXd inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                          eig.eigenvectors().transpose();
    return 0.5 * (inv + inv.transpose());
}

}  // namespace copdet
