#include "copdet/copula.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace copdet {

namespace {

constexpr double kThetaLo = 1e-3;
constexpr double kThetaHi = 50.0;

void check_dimension(const CopulaModel& model, std::span<const double> v) {
    if (v.size() != model.dimension) {
        throw std::invalid_argument("copula argument has " + std::to_string(v.size()) +
                                    " components, model dimension is " +
                                    std::to_string(model.dimension));
    }
}

void check_unit_interval(std::span<const double> v) {
    for (double x : v) {
        if (!(x >= 0.0 && x <= 1.0)) {
            throw std::invalid_argument("copula argument outside [0, 1]: " + std::to_string(x));
        }
    }
}

// log(sum_i v_i^-theta - L + 1) from l_i = -theta * log v_i >= 0.
double clayton_log_generator_sum(std::span<const double> l) {
    const double top = *std::max_element(l.begin(), l.end());
    if (top < 30.0) {
        double s = 0.0;
        for (double x : l) s += std::expm1(x);
        return std::log1p(s);
    }
    double s = 0.0;
    for (double x : l) s += std::exp(x - top);
    s -= static_cast<double>(l.size() - 1) * std::exp(-top);
    return top + std::log(s);
}

}  // namespace

std::string_view to_string(CopulaFamily family) {
    switch (family) {
        case CopulaFamily::Independence: return "independence";
        case CopulaFamily::Clayton: return "clayton";
    }
    return "unknown";
}

CopulaFamily copula_family_from_string(std::string_view name) {
    if (name == "independence") return CopulaFamily::Independence;
    if (name == "clayton") return CopulaFamily::Clayton;
    throw std::invalid_argument("unknown copula family '" + std::string(name) + "'");
}

void validate_theta(const CopulaModel& model, double theta) {
    if (model.dimension < 1) throw std::invalid_argument("copula dimension must be positive");
    if (model.family == CopulaFamily::Clayton) {
        if (!(theta > 0.0) || !std::isfinite(theta)) {
            throw std::invalid_argument("Clayton theta must be finite and > 0, got " +
                                        std::to_string(theta));
        }
    }
}

double copula_log_density(const CopulaModel& model, double theta, std::span<const double> v) {
    validate_theta(model, theta);
    check_dimension(model, v);
    check_unit_interval(v);
    if (model.family == CopulaFamily::Independence) return 0.0;

    const std::size_t dim = v.size();
    double log_norm = 0.0;
    for (std::size_t k = 1; k < dim; ++k) log_norm += std::log1p(static_cast<double>(k) * theta);

    double sum_log_v = 0.0;
    double l_buf[16];
    std::vector<double> l_heap;
    double* l = l_buf;
    if (dim > 16) {
        l_heap.resize(dim);
        l = l_heap.data();
    }
    for (std::size_t i = 0; i < dim; ++i) {
        const double x = std::clamp(v[i], kCopulaClamp, 1.0 - kCopulaClamp);
        const double lv = std::log(x);
        sum_log_v += lv;
        l[i] = -theta * lv;
    }
    const double log_s = clayton_log_generator_sum({l, dim});
    return log_norm + (-1.0 - theta) * sum_log_v +
           (-static_cast<double>(dim) - 1.0 / theta) * log_s;
}

double copula_density(const CopulaModel& model, double theta, std::span<const double> v) {
    return std::exp(copula_log_density(model, theta, v));
}

double copula_cdf(const CopulaModel& model, double theta, std::span<const double> v) {
    validate_theta(model, theta);
    check_dimension(model, v);
    check_unit_interval(v);
    for (double x : v) {
        if (x == 0.0) return 0.0;
    }
    if (model.family == CopulaFamily::Independence) {
        double p = 1.0;
        for (double x : v) p *= x;
        return p;
    }
    std::vector<double> l(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) l[i] = -theta * std::log(v[i]);
    return std::exp(-clayton_log_generator_sum(l) / theta);
}

double spearman_rho(const CopulaModel& model, double theta, std::size_t grid) {
    validate_theta(model, theta);
    if (model.dimension != 2) throw std::invalid_argument("spearman_rho is defined for bivariate copulas");
    if (grid == 0) throw std::invalid_argument("spearman_rho grid must be positive");
    const double h = 1.0 / static_cast<double>(grid);

    double total = 0.0;
    if (model.family == CopulaFamily::Independence) {
        double s = 0.0;
        for (std::size_t i = 0; i < grid; ++i) s += (static_cast<double>(i) + 0.5) * h;
        total = s * s;
    } else {
        // C(u, v) = exp(-log1p(t_u + t_v) / theta), t_x = x^-theta - 1.
        std::vector<double> t(grid);
        for (std::size_t i = 0; i < grid; ++i) {
            t[i] = std::expm1(-theta * std::log((static_cast<double>(i) + 0.5) * h));
        }
        const double inv_theta = 1.0 / theta;
        for (std::size_t i = 0; i < grid; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < grid; ++j) row += std::exp(-std::log1p(t[i] + t[j]) * inv_theta);
            total += row;
        }
    }
    return 12.0 * total * h * h - 3.0;
}

double theta_from_rho(const CopulaModel& model, double rho, std::size_t grid) {
    if (model.family != CopulaFamily::Clayton) {
        throw std::invalid_argument("theta_from_rho needs a parametric family");
    }
    double lo = kThetaLo;
    double hi = kThetaHi;
    const double rho_lo = spearman_rho(model, lo, grid);
    const double rho_hi = spearman_rho(model, hi, grid);
    if (!(rho > 0.0 && rho < 1.0) || rho < rho_lo || rho > rho_hi) {
        throw std::invalid_argument("Spearman rho " + std::to_string(rho) +
                                    " is outside the achievable range of the Clayton family");
    }
    while (hi - lo > 1e-6) {
        const double mid = 0.5 * (lo + hi);
        if (spearman_rho(model, mid, grid) < rho) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

std::vector<double> sample_copula(const CopulaModel& model, double theta, Rng& rng, std::size_t n) {
    validate_theta(model, theta);
    if (n == 0) throw std::invalid_argument("sample_copula needs n >= 1");
    const std::size_t dim = model.dimension;
    std::vector<double> out(n * dim);
    if (model.family == CopulaFamily::Independence) {
        for (double& x : out) x = rng.uniform();
        return out;
    }
    if (dim != 2) throw std::invalid_argument("Clayton sampling is implemented for L = 2 only");

    constexpr double kTop = 1.0 - 0x1.0p-53;
    const double exponent = -theta / (1.0 + theta);
    for (std::size_t k = 0; k < n; ++k) {
        const double v1 = rng.uniform();
        const double w = rng.uniform();
        // v2 = ((w^{-theta/(1+theta)} - 1) * v1^{-theta} + 1)^{-1/theta}
        const double log_a = std::log(std::expm1(exponent * std::log(w))) - theta * std::log(v1);
        const double log1p_a = log_a > 700.0 ? log_a : std::log1p(std::exp(log_a));
        const double v2 = std::exp(-log1p_a / theta);
        out[2 * k] = v1;
        out[2 * k + 1] = std::clamp(v2, std::numeric_limits<double>::min(), kTop);
    }
    return out;
}

}  // namespace copdet
