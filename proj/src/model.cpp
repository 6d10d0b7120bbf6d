#include "copdet/model.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace copdet {

std::string_view to_string(MarginalFamily family) {
    switch (family) {
        case MarginalFamily::Gamma: return "gamma";
    }
    return "unknown";
}

MarginalFamily marginal_family_from_string(std::string_view name) {
    if (name == "gamma") return MarginalFamily::Gamma;
    throw std::invalid_argument("unknown marginal family '" + std::string(name) + "'");
}

void MarginalModel::validate() const {
    if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape) || !std::isfinite(scale)) {
        throw std::invalid_argument("Gamma marginal needs shape > 0 and scale > 0");
    }
}

double marginal_log_pdf(const MarginalModel& m, double y) {
    m.validate();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    if (y < 0.0) return kNegInf;
    if (y == 0.0) {
        if (m.shape == 1.0) return -std::log(m.scale);
        return m.shape < 1.0 ? std::numeric_limits<double>::infinity() : kNegInf;
    }
    return (m.shape - 1.0) * std::log(y) - y / m.scale - std::lgamma(m.shape) -
           m.shape * std::log(m.scale);
}

double marginal_pdf(const MarginalModel& m, double y) {
    return std::exp(marginal_log_pdf(m, y));
}

double marginal_cdf(const MarginalModel& m, double y) {
    m.validate();
    if (y <= 0.0) return 0.0;
    if (std::isinf(y)) return 1.0;
    return boost::math::gamma_p(m.shape, y / m.scale);
}

double marginal_quantile(const MarginalModel& m, double u) {
    m.validate();
    if (!(u > 0.0 && u < 1.0)) {
        throw std::invalid_argument("marginal_quantile needs u in (0, 1), got " + std::to_string(u));
    }
    return m.scale * boost::math::gamma_p_inv(m.shape, u);
}

void HypothesisModel::validate() const {
    if (marginals.size() != copula.dimension) {
        throw std::invalid_argument("hypothesis has " + std::to_string(marginals.size()) +
                                    " marginals but copula dimension " +
                                    std::to_string(copula.dimension));
    }
    validate_theta(copula, theta);
    for (const auto& m : marginals) m.validate();
}

HypothesisModel independent_model(std::vector<MarginalModel> marginals) {
    HypothesisModel h;
    h.copula = {CopulaFamily::Independence, marginals.size()};
    h.theta = 0.0;
    h.marginals = std::move(marginals);
    return h;
}

HypothesisModel clayton_model(double theta, std::vector<MarginalModel> marginals) {
    HypothesisModel h;
    h.copula = {CopulaFamily::Clayton, marginals.size()};
    h.theta = theta;
    h.marginals = std::move(marginals);
    return h;
}

double joint_pdf(const HypothesisModel& h, std::span<const double> y) {
    h.validate();
    if (y.size() != h.dimension()) throw std::invalid_argument("observation dimension mismatch");
    double product = 1.0;
    std::vector<double> v(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0.0) return 0.0;
        product *= marginal_pdf(h.marginals[i], y[i]);
        v[i] = marginal_cdf(h.marginals[i], y[i]);
    }
    if (product == 0.0) return 0.0;
    if (h.copula.family == CopulaFamily::Independence) return product;
    return copula_density(h.copula, h.theta, v) * product;
}

double mixture_pdf(double p0, const HypothesisModel& h0, const HypothesisModel& h1,
                   std::span<const double> y) {
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw std::invalid_argument("p0 must lie in [0, 1]");
    return p0 * joint_pdf(h0, y) + (1.0 - p0) * joint_pdf(h1, y);
}

std::vector<double> sample_hypothesis(const HypothesisModel& h, Rng& rng, std::size_t n) {
    h.validate();
    std::vector<double> out = sample_copula(h.copula, h.theta, rng, n);
    const std::size_t dim = h.dimension();
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < dim; ++i) {
            double& x = out[k * dim + i];
            x = marginal_quantile(h.marginals[i], x);
        }
    }
    return out;
}

ParamBounds admissible_bounds(ParamKind kind) {
    switch (kind) {
        case ParamKind::Prior: return {1e-6, 1.0 - 1e-6};
        case ParamKind::Dependence: return {1e-3, 50.0};
        case ParamKind::MarginalShape:
        case ParamKind::MarginalScale: return {1e-3, 1e3};
    }
    return {0.0, 0.0};
}

ParamVector::ParamVector(double p0, HypothesisModel h0, HypothesisModel h1) : p0_(p0) {
    // Boundary priors are accepted for degenerate-mixture evaluation; the
    // estimator only ever produces interior values.
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw std::invalid_argument("p0 must lie in [0, 1]");
    h0.validate();
    h1.validate();
    if (h0.dimension() != h1.dimension()) {
        throw std::invalid_argument("hypotheses disagree on the number of sensors");
    }
    h_[0] = std::move(h0);
    h_[1] = std::move(h1);
    build_entries();
    free_.assign(entries_.size(), false);
}

void ParamVector::build_entries() {
    entries_.clear();
    entries_.push_back({"p0", ParamKind::Prior});
    for (int j = 0; j < 2; ++j) {
        const std::string prefix = "h" + std::to_string(j) + ".";
        if (h_[j].copula.parameter_count() == 1) {
            entries_.push_back({prefix + "theta", ParamKind::Dependence});
        }
        for (std::size_t i = 0; i < h_[j].marginals.size(); ++i) {
            const std::string m = prefix + "m" + std::to_string(i) + ".";
            entries_.push_back({m + "shape", ParamKind::MarginalShape});
            entries_.push_back({m + "scale", ParamKind::MarginalScale});
        }
    }
}

std::size_t ParamVector::index_of(std::string_view name) const {
    if (name == "p1") name = "p0";
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return i;
    }
    throw std::invalid_argument("unknown parameter '" + std::string(name) + "'");
}

std::vector<double> ParamVector::values() const {
    std::vector<double> out;
    out.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) out.push_back(value(i));
    return out;
}

double ParamVector::value(std::size_t i) const {
    if (i == 0) return p0_;
    std::size_t k = 1;
    for (int j = 0; j < 2; ++j) {
        if (h_[j].copula.parameter_count() == 1) {
            if (k++ == i) return h_[j].theta;
        }
        for (const auto& m : h_[j].marginals) {
            if (k++ == i) return m.shape;
            if (k++ == i) return m.scale;
        }
    }
    throw std::out_of_range("parameter index out of range");
}

void ParamVector::set_value(std::size_t i, double x) {
    if (i == 0) {
        p0_ = x;
        return;
    }
    std::size_t k = 1;
    for (int j = 0; j < 2; ++j) {
        if (h_[j].copula.parameter_count() == 1) {
            if (k++ == i) {
                h_[j].theta = x;
                return;
            }
        }
        for (auto& m : h_[j].marginals) {
            if (k++ == i) {
                m.shape = x;
                return;
            }
            if (k++ == i) {
                m.scale = x;
                return;
            }
        }
    }
    throw std::out_of_range("parameter index out of range");
}

void ParamVector::set_free(std::string_view name, bool is_free) {
    free_[index_of(name)] = is_free;
}

void ParamVector::set_free_mask(std::vector<bool> mask) {
    if (mask.size() != entries_.size()) throw std::invalid_argument("free mask size mismatch");
    free_ = std::move(mask);
}

std::size_t ParamVector::free_count() const {
    std::size_t n = 0;
    for (bool b : free_) n += b ? 1 : 0;
    return n;
}

std::vector<std::size_t> ParamVector::free_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < free_.size(); ++i) {
        if (free_[i]) out.push_back(i);
    }
    return out;
}

std::vector<double> ParamVector::free_values() const {
    std::vector<double> out;
    for (std::size_t i : free_indices()) out.push_back(value(i));
    return out;
}

void ParamVector::set_free_values(std::span<const double> values) {
    const auto idx = free_indices();
    if (values.size() != idx.size()) {
        throw std::invalid_argument("expected " + std::to_string(idx.size()) +
                                    " free parameter values, got " + std::to_string(values.size()));
    }
    for (std::size_t k = 0; k < idx.size(); ++k) set_value(idx[k], values[k]);
}

bool ParamVector::admissible() const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const double x = value(i);
        if (entries_[i].kind == ParamKind::Prior) {
            if (!(x > 0.0 && x < 1.0)) return false;
        } else if (!(x > 0.0) || !std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

}  // namespace copdet
