#pragma once

// Parametric copula families used to describe dependence between sensor
// observations. Only positive-dependence Clayton (theta > 0) and the
// independence copula are implemented.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "copdet/random.hpp"

namespace copdet {

enum class CopulaFamily { Independence, Clayton };

std::string_view to_string(CopulaFamily family);
CopulaFamily copula_family_from_string(std::string_view name);

struct CopulaModel {
    CopulaFamily family = CopulaFamily::Independence;
    std::size_t dimension = 2;

    std::size_t parameter_count() const {
        return family == CopulaFamily::Independence ? 0 : 1;
    }
};

// Lower clamp applied to copula arguments before power evaluation.
inline constexpr double kCopulaClamp = 1e-12;

// Throws std::invalid_argument when theta is not admissible for the family.
void validate_theta(const CopulaModel& model, double theta);

// c(v | theta). Every v_i must lie strictly inside (0, 1).
double copula_density(const CopulaModel& model, double theta, std::span<const double> v);

// log c(v | theta), stable for large theta and arguments near 0.
double copula_log_density(const CopulaModel& model, double theta, std::span<const double> v);

// C(v | theta) for v in [0, 1]^L.
double copula_cdf(const CopulaModel& model, double theta, std::span<const double> v);

// Population Spearman rho, 12 * int C(u, v) du dv - 3, by the midpoint rule on
// a grid x grid mesh. Bivariate only.
double spearman_rho(const CopulaModel& model, double theta, std::size_t grid = 400);

// Inverse of spearman_rho by bisection over theta in [1e-3, 50].
double theta_from_rho(const CopulaModel& model, double rho, std::size_t grid = 400);

// n draws from the copula, row-major n x L. Clayton uses conditional inversion
// and is bivariate only.
std::vector<double> sample_copula(const CopulaModel& model, double theta, Rng& rng, std::size_t n);

}  // namespace copdet
