#pragma once

// Marginal families, hypothesis-conditional joint densities built from a
// copula and marginals, and the full parameter vector [P0, theta_0, theta_1]
// with its estimated/known mask.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "copdet/copula.hpp"
#include "copdet/random.hpp"

namespace copdet {

enum class MarginalFamily { Gamma };

std::string_view to_string(MarginalFamily family);
MarginalFamily marginal_family_from_string(std::string_view name);

// Gamma(shape, scale): mean shape * scale.
struct MarginalModel {
    MarginalFamily family = MarginalFamily::Gamma;
    double shape = 1.0;
    double scale = 1.0;

    void validate() const;
};

double marginal_pdf(const MarginalModel& m, double y);
double marginal_log_pdf(const MarginalModel& m, double y);
double marginal_cdf(const MarginalModel& m, double y);
double marginal_quantile(const MarginalModel& m, double u);

struct HypothesisModel {
    CopulaModel copula;
    double theta = 0.0;
    std::vector<MarginalModel> marginals;

    std::size_t dimension() const { return marginals.size(); }
    void validate() const;
};

HypothesisModel independent_model(std::vector<MarginalModel> marginals);
HypothesisModel clayton_model(double theta, std::vector<MarginalModel> marginals);

// c(F_1(y_1), ..., F_L(y_L)) * prod_i p_i(y_i).
double joint_pdf(const HypothesisModel& h, std::span<const double> y);

double mixture_pdf(double p0, const HypothesisModel& h0, const HypothesisModel& h1,
                   std::span<const double> y);

// n observation vectors from h, row-major n x L.
std::vector<double> sample_hypothesis(const HypothesisModel& h, Rng& rng, std::size_t n);

enum class ParamKind { Prior, Dependence, MarginalShape, MarginalScale };

struct ParamEntry {
    std::string name;
    ParamKind kind;
};

// Admissible interval for one scalar parameter.
struct ParamBounds {
    double lo;
    double hi;
};

ParamBounds admissible_bounds(ParamKind kind);

// Flattened layout: p0, then for each hypothesis j in {0, 1} its dependence
// parameter (if the family has one) followed by shape/scale per sensor.
// Names are "p0", "h<j>.theta", "h<j>.m<i>.shape", "h<j>.m<i>.scale".
class ParamVector {
public:
    ParamVector() = default;
    ParamVector(double p0, HypothesisModel h0, HypothesisModel h1);

    double p0() const { return p0_; }
    double p1() const { return 1.0 - p0_; }
    const HypothesisModel& h0() const { return h_[0]; }
    const HypothesisModel& h1() const { return h_[1]; }
    const HypothesisModel& hypothesis(int j) const { return h_[j]; }

    std::size_t size() const { return entries_.size(); }
    const std::vector<ParamEntry>& entries() const { return entries_; }
    // Accepts "p1" as an alias of "p0" (they share one degree of freedom).
    std::size_t index_of(std::string_view name) const;

    std::vector<double> values() const;
    double value(std::size_t i) const;
    void set_value(std::size_t i, double x);

    const std::vector<bool>& free_mask() const { return free_; }
    void set_free(std::string_view name, bool is_free = true);
    void set_free_mask(std::vector<bool> mask);
    std::size_t free_count() const;
    std::vector<std::size_t> free_indices() const;
    std::vector<double> free_values() const;
    void set_free_values(std::span<const double> values);

    // True when every scalar sits inside its admissible interval.
    bool admissible() const;

private:
    void build_entries();

    double p0_ = 0.5;
    HypothesisModel h_[2];
    std::vector<ParamEntry> entries_;
    std::vector<bool> free_;
};

}  // namespace copdet
