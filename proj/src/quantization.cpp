#include "copdet/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>

#include <Eigen/Dense>
#include <stdexcept>

#include "cell_kernel.hpp"

namespace copdet {

SensorGrid::SensorGrid(double y_min, double y_max, double delta)
    : y_min_(y_min), y_max_(y_max), delta_(delta) {
    if (!(delta > 0.0) || !(y_max > y_min)) {
        throw std::invalid_argument("grid needs y_max > y_min and delta > 0");
    }
    const double cells = (y_max - y_min) / delta;
    const double rounded = std::round(cells);
    if (rounded < 1.0 || std::abs(cells - rounded) > 1e-9 * std::max(1.0, cells)) {
        throw std::invalid_argument("grid step " + std::to_string(delta) + " does not divide [" +
                                    std::to_string(y_min) + ", " + std::to_string(y_max) + ")");
    }
    cells_ = static_cast<std::size_t>(rounded);
}

std::size_t SensorGrid::cell_of(double y) const {
    if (!(y > y_min_)) return 0;  // also catches NaN
    const double k = std::floor((y - y_min_) / delta_);
    if (k >= static_cast<double>(cells_)) return cells_ - 1;
    return static_cast<std::size_t>(k);
}

std::uint32_t SensorQuantizer::pattern(std::size_t cell) const {
    std::uint32_t p = 0;
    for (std::size_t t = 0; t < bits.size(); ++t) p |= static_cast<std::uint32_t>(bits[t][cell] & 1u) << t;
    return p;
}

void SensorQuantizer::set_pattern(std::size_t cell, std::uint32_t pattern) {
    for (std::size_t t = 0; t < bits.size(); ++t) bits[t][cell] = static_cast<std::uint8_t>((pattern >> t) & 1u);
}

SensorQuantizer SensorQuantizer::affine(const SensorGrid& grid, double a, double b) {
    return from_indicator(grid, [a, b](double y) { return a * y + b >= 0.0; });
}

SensorQuantizer SensorQuantizer::from_indicator(const SensorGrid& grid, const std::function<bool(double)>& ind) {
    SensorQuantizer q{grid, {std::vector<std::uint8_t>(grid.cell_count())}};
    for (std::size_t m = 0; m < grid.cell_count(); ++m) q.bits[0][m] = ind(grid.midpoint(m)) ? 1 : 0;
    return q;
}

SensorQuantizer SensorQuantizer::constant(const SensorGrid& grid, std::size_t bit_count, std::uint32_t pattern) {
    SensorQuantizer q{grid, std::vector<std::vector<std::uint8_t>>(bit_count, std::vector<std::uint8_t>(grid.cell_count()))};
    for (std::size_t m = 0; m < grid.cell_count(); ++m) q.set_pattern(m, pattern);
    return q;
}

QuantizerBank::QuantizerBank(std::vector<SensorQuantizer> sensors) : sensors_(std::move(sensors)) {
    if (sensors_.empty()) throw std::invalid_argument("quantizer bank needs at least one sensor");
    for (const auto& s : sensors_) {
        if (s.bits.empty()) throw std::invalid_argument("every sensor needs at least one bit");
        for (const auto& b : s.bits) {
            if (b.size() != s.grid.cell_count()) {
                throw std::invalid_argument("bit vector length does not match the sensor grid");
            }
        }
        offsets_.push_back(total_bits_);
        total_bits_ += s.bits.size();
    }
    if (total_bits_ > 20) throw std::invalid_argument("more than 20 total bits is not supported");
}

std::vector<SensorGrid> QuantizerBank::grids() const {
    std::vector<SensorGrid> out;
    for (const auto& s : sensors_) out.push_back(s.grid);
    return out;
}

std::uint32_t QuantizerBank::quantize(std::span<const double> y) const {
    if (y.size() != sensors_.size()) throw std::invalid_argument("observation dimension mismatch");
    std::uint32_t u = 0;
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
        u |= sensors_[i].pattern(sensors_[i].grid.cell_of(y[i])) << offsets_[i];
    }
    return u;
}

std::uint32_t QuantizerBank::outcome_of_cells(std::span<const std::size_t> cells) const {
    std::uint32_t u = 0;
    for (std::size_t i = 0; i < sensors_.size(); ++i) u |= sensors_[i].pattern(cells[i]) << offsets_[i];
    return u;
}

std::vector<std::uint32_t> QuantizerBank::cell_outcome_map() const {
    std::vector<std::uint32_t> map{0};
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
        const auto& s = sensors_[i];
        const std::size_t cells = s.grid.cell_count();
        std::vector<std::uint32_t> next(map.size() * cells);
        for (std::size_t k = 0; k < map.size(); ++k) {
            for (std::size_t m = 0; m < cells; ++m) next[k * cells + m] = map[k] | (s.pattern(m) << offsets_[i]);
        }
        map = std::move(next);
    }
    return map;
}

double CellMassTable::total() const {
    return std::accumulate(mass.begin(), mass.end(), 0.0);
}

namespace {

struct AxisTerms {
    std::vector<double> log_pdf;  // log p_i(mid) + log delta
    std::vector<double> log_cdf;  // log F_i(mid), clamped
};

AxisTerms compute_axis_terms(const MarginalModel& m, const SensorGrid& g) {
    AxisTerms t;
    const std::size_t n = g.cell_count();
    t.log_pdf.resize(n);
    t.log_cdf.resize(n);
    const double log_delta = std::log(g.delta());
    for (std::size_t k = 0; k < n; ++k) {
        const double y = g.midpoint(k);
        t.log_pdf[k] = marginal_log_pdf(m, y) + log_delta;
        const double v = std::clamp(marginal_cdf(m, y), kCopulaClamp, 1.0 - kCopulaClamp);
        t.log_cdf[k] = std::log(v);
    }
    return t;
}

// Marginal terms only depend on (marginal, grid); a small per-thread memo
// avoids recomputing incomplete gamma values when only theta changes.
const AxisTerms& axis_terms(const MarginalModel& m, const SensorGrid& g) {
    struct Entry {
        MarginalModel marginal;
        SensorGrid grid;
        AxisTerms terms;
    };
    thread_local std::vector<Entry> memo;
    for (const auto& e : memo) {
        if (e.marginal.family == m.family && e.marginal.shape == m.shape && e.marginal.scale == m.scale &&
            e.grid == g) {
            return e.terms;
        }
    }
    if (memo.size() >= 16) memo.erase(memo.begin());
    memo.push_back({m, g, compute_axis_terms(m, g)});
    return memo.back().terms;
}

// Clayton, L = 2: log mass = a_m + b_n + e * log(1 + x_m + x_n) with
// x = v^-theta - 1, written so a single log/exp pair runs per cell.
void clayton_bivariate(double theta, const AxisTerms& t0, const AxisTerms& t1, std::vector<double>& out) {
    const std::size_t n0 = t0.log_pdf.size();
    const std::size_t n1 = t1.log_pdf.size();
    const double e = -2.0 - 1.0 / theta;
    const double c = std::log1p(theta);
    std::vector<double> a(n0), x0(n0), b(n1), x1(n1);
    bool large = false;
    for (std::size_t m = 0; m < n0; ++m) {
        a[m] = c + t0.log_pdf[m] + (-1.0 - theta) * t0.log_cdf[m];
        const double l = -theta * t0.log_cdf[m];
        large = large || l > 600.0;
        x0[m] = std::expm1(l);
    }
    for (std::size_t n = 0; n < n1; ++n) {
        b[n] = t1.log_pdf[n] + (-1.0 - theta) * t1.log_cdf[n];
        const double l = -theta * t1.log_cdf[n];
        large = large || l > 600.0;
        x1[n] = std::expm1(l);
    }
    if (!large) {
        detail::clayton_cell_kernel(a.data(), x0.data(), n0, b.data(), x1.data(), n1, e, out.data());
        return;
    }
    for (std::size_t m = 0; m < n0; ++m) {
        for (std::size_t n = 0; n < n1; ++n) {
            const double l[2] = {-theta * t0.log_cdf[m], -theta * t1.log_cdf[n]};
            const double top = std::max(l[0], l[1]);
            const double log_s = top < 30.0 ? std::log1p(std::expm1(l[0]) + std::expm1(l[1]))
                                            : top + std::log(std::exp(l[0] - top) + std::exp(l[1] - top) - std::exp(-top));
            out[m * n1 + n] = std::exp(a[m] + b[n] + e * log_s);
        }
    }
}

std::string table_key(const HypothesisModel& h, std::span<const SensorGrid> grids) {
    std::string key;
    char buf[64];
    auto put = [&](double x) {
        std::snprintf(buf, sizeof buf, "%a,", x);
        key += buf;
    };
    key += to_string(h.copula.family);
    key += ':';
    put(h.theta);
    for (const auto& m : h.marginals) {
        put(m.shape);
        put(m.scale);
    }
    for (const auto& g : grids) {
        put(g.y_min());
        put(g.y_max());
        put(g.delta());
    }
    return key;
}

}  // namespace

CellMassTable cell_mass(const HypothesisModel& h, std::span<const SensorGrid> grids) {
    h.validate();
    if (grids.size() != h.dimension()) throw std::invalid_argument("model and grid dimensions disagree");
    const std::size_t dim = grids.size();

    CellMassTable table;
    std::size_t total = 1;
    for (const auto& g : grids) {
        table.shape.push_back(g.cell_count());
        total *= g.cell_count();
    }
    table.mass.assign(total, 0.0);

    std::vector<AxisTerms> axes;
    for (std::size_t i = 0; i < dim; ++i) axes.push_back(axis_terms(h.marginals[i], grids[i]));
    if (h.copula.family == CopulaFamily::Independence && dim == 2) {
        for (std::size_t m = 0; m < table.shape[0]; ++m) {
            for (std::size_t n = 0; n < table.shape[1]; ++n) {
                table.mass[m * table.shape[1] + n] = std::exp(axes[0].log_pdf[m] + axes[1].log_pdf[n]);
            }
        }
        return table;
    }

    if (h.copula.family == CopulaFamily::Clayton && dim == 2) {
        clayton_bivariate(h.theta, axes[0], axes[1], table.mass);
        return table;
    }

    // Generic path: walk cells in row-major order.
    std::vector<std::size_t> idx(dim, 0);
    std::vector<double> v(dim);
    for (std::size_t flat = 0; flat < total; ++flat) {
        double log_mass = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            log_mass += axes[i].log_pdf[idx[i]];
            v[i] = std::exp(axes[i].log_cdf[idx[i]]);
        }
        if (h.copula.family != CopulaFamily::Independence) log_mass += copula_log_density(h.copula, h.theta, v);
        table.mass[flat] = std::exp(log_mass);
        for (std::size_t i = dim; i-- > 0;) {
            if (++idx[i] < table.shape[i]) break;
            idx[i] = 0;
        }
    }
    return table;
}

CellMassTable cell_mass(const HypothesisModel& h, const QuantizerBank& bank) {
    const auto grids = bank.grids();
    return cell_mass(h, grids);
}

std::shared_ptr<const CellMassTable> CellMassCache::get(const HypothesisModel& h, std::span<const SensorGrid> grids) {
    const std::string key = table_key(h, grids);
    {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(key);
        if (it != entries_.end()) return it->second;
    }
    auto table = std::make_shared<const CellMassTable>(cell_mass(h, grids));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, table);
    if (inserted) {
        order_.push_back(key);
        if (order_.size() > capacity_) {
            entries_.erase(order_.front());
            order_.erase(order_.begin());
        }
    }
    return it->second;
}

std::size_t CellMassCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

std::vector<double> aggregate_outcomes(const CellMassTable& table, std::span<const std::uint32_t> outcome_map,
                                       std::size_t outcome_count) {
    if (outcome_map.size() != table.mass.size()) throw std::invalid_argument("outcome map does not match the table");
    std::vector<double> out(outcome_count, 0.0);
    for (std::size_t c = 0; c < table.mass.size(); ++c) out[outcome_map[c]] += table.mass[c];
    return out;
}

OutcomeAggregator::OutcomeAggregator(const QuantizerBank& bank) : outcomes_(bank.outcome_count()) {
    if (bank.sensor_count() != 2) {
        map_ = bank.cell_outcome_map();
        return;
    }
    bivariate_ = true;
    const auto& s0 = bank.sensor(0);
    const auto& s1 = bank.sensor(1);
    rows_ = s0.grid.cell_count();
    cols_ = s1.grid.cell_count();
    for (std::size_t m = 0; m < rows_; ++m) row_bits_.push_back(s0.pattern(m));
    const std::size_t patterns = std::size_t{1} << s1.bit_count();
    for (std::uint32_t p = 0; p < patterns; ++p) {
        std::vector<double> w(cols_, 0.0);
        bool used = false;
        for (std::size_t n = 0; n < cols_; ++n) {
            if (s1.pattern(n) == p) {
                w[n] = 1.0;
                used = true;
            }
        }
        if (used) {
            col_patterns_.push_back(p << bank.bit_offset(1));
            col_weights_.push_back(std::move(w));
        }
    }
}

std::vector<double> OutcomeAggregator::operator()(const CellMassTable& table) const {
    if (!bivariate_) return aggregate_outcomes(table, map_, outcomes_);
    if (table.shape.size() != 2 || table.shape[0] != rows_ || table.shape[1] != cols_) {
        throw std::invalid_argument("cell table does not match the quantizer bank");
    }
    std::vector<double> out(outcomes_, 0.0);
    std::vector<double> dots(rows_);
    for (std::size_t k = 0; k < col_patterns_.size(); ++k) {
        detail::row_dot(table.mass.data(), rows_, cols_, col_weights_[k].data(), dots.data());
        for (std::size_t m = 0; m < rows_; ++m) out[row_bits_[m] | col_patterns_[k]] += dots[m];
    }
    return out;
}

bool BankSetAggregator::supports(std::span<const QuantizerBank> banks) {
    if (banks.empty()) return false;
    for (const auto& b : banks) {
        if (b.sensor_count() != 2 || !(b.sensor(0).grid == banks[0].sensor(0).grid) ||
            !(b.sensor(1).grid == banks[0].sensor(1).grid)) {
            return false;
        }
    }
    return true;
}

BankSetAggregator::BankSetAggregator(std::span<const QuantizerBank> banks) {
    if (!supports(banks)) throw std::invalid_argument("banks must be bivariate on a common grid pair");
    rows_ = banks[0].sensor(0).grid.cell_count();
    cols_ = banks[0].sensor(1).grid.cell_count();
    weights_.assign(cols_, 1.0);
    columns_ = 1;
    auto column_of = [&](const std::vector<double>& w) {
        for (std::size_t k = 1; k < columns_; ++k) {
            if (std::equal(w.begin(), w.end(), weights_.begin() + static_cast<std::ptrdiff_t>(k * cols_))) return k;
        }
        weights_.insert(weights_.end(), w.begin(), w.end());
        return columns_++;
    };
    for (const auto& bank : banks) {
        Bank b;
        b.outcomes = bank.outcome_count();
        const auto& s0 = bank.sensor(0);
        const auto& s1 = bank.sensor(1);
        for (std::size_t m = 0; m < rows_; ++m) b.row_bits.push_back(s0.pattern(m));
        const std::size_t patterns = std::size_t{1} << s1.bit_count();
        std::vector<std::size_t> cells(patterns, 0);
        for (std::size_t n = 0; n < cols_; ++n) ++cells[s1.pattern(n)];
        const auto widest =
            static_cast<std::uint32_t>(std::max_element(cells.begin(), cells.end()) - cells.begin());
        for (std::uint32_t p = 0; p < patterns; ++p) {
            if (cells[p] == 0 || p == widest) continue;
            std::vector<double> w(cols_, 0.0);
            for (std::size_t n = 0; n < cols_; ++n) w[n] = s1.pattern(n) == p ? 1.0 : 0.0;
            b.terms.push_back({column_of(w), p << bank.bit_offset(1), false});
        }
        b.terms.push_back({0, widest << bank.bit_offset(1), true});
        banks_.push_back(std::move(b));
    }
}

std::vector<std::vector<double>> BankSetAggregator::operator()(const CellMassTable& table) const {
    if (table.shape.size() != 2 || table.shape[0] != rows_ || table.shape[1] != cols_) {
        throw std::invalid_argument("cell table does not match the quantizer banks");
    }
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMajor> t(table.mass.data(), static_cast<Eigen::Index>(rows_),
                                       static_cast<Eigen::Index>(cols_));
    const Eigen::Map<const Eigen::MatrixXd> w(weights_.data(), static_cast<Eigen::Index>(cols_),
                                              static_cast<Eigen::Index>(columns_));
    const Eigen::MatrixXd r = t * w;  // rows_ x columns_

    std::vector<std::vector<double>> out;
    out.reserve(banks_.size());
    for (const auto& b : banks_) {
        std::vector<double> masses(b.outcomes, 0.0);
        for (std::size_t m = 0; m < rows_; ++m) {
            const auto row = static_cast<Eigen::Index>(m);
            double rest = r(row, 0);
            for (const auto& term : b.terms) {
                if (term.complement) {
                    masses[b.row_bits[m] | term.bits] += std::max(rest, 0.0);
                } else {
                    const double x = r(row, static_cast<Eigen::Index>(term.column));
                    masses[b.row_bits[m] | term.bits] += x;
                    rest -= x;
                }
            }
        }
        out.push_back(std::move(masses));
    }
    return out;
}

QuantizedPmf quantized_pmf(const CellMassTable& table, const QuantizerBank& bank) {
    QuantizedPmf pmf{OutcomeAggregator(bank)(table), "table"};
    const double total = std::accumulate(pmf.probabilities.begin(), pmf.probabilities.end(), 0.0);
    if (!(total > 0.0)) throw std::domain_error("model places no mass on the grid window");
    for (double& p : pmf.probabilities) p /= total;
    return pmf;
}

QuantizedPmf quantized_pmf(const HypothesisModel& h, const QuantizerBank& bank) {
    QuantizedPmf pmf = quantized_pmf(cell_mass(h, bank), bank);
    pmf.source = std::string(to_string(h.copula.family));
    return pmf;
}

QuantizedPmf quantized_pmf(double p0, const HypothesisModel& h0, const HypothesisModel& h1,
                           const QuantizerBank& bank) {
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw std::invalid_argument("p0 must lie in [0, 1]");
    const QuantizedPmf f0 = quantized_pmf(h0, bank);
    const QuantizedPmf f1 = quantized_pmf(h1, bank);
    QuantizedPmf out{std::vector<double>(f0.size()), "mixture"};
    for (std::size_t u = 0; u < f0.size(); ++u) out.probabilities[u] = p0 * f0[u] + (1.0 - p0) * f1[u];
    return out;
}

QuantizedPmf quantized_pmf(const ParamVector& params, const QuantizerBank& bank) {
    return quantized_pmf(params.p0(), params.h0(), params.h1(), bank);
}

std::uint64_t HistogramGroup::size() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t QuantizedHistogram::total() const {
    std::uint64_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
}

void QuantizedHistogram::validate() const {
    for (std::size_t j = 0; j < groups.size(); ++j) {
        if (groups[j].counts.size() != groups[j].bank.outcome_count()) {
            throw std::invalid_argument("histogram group " + std::to_string(j + 1) +
                                        " has the wrong number of outcome counts");
        }
    }
}

HistogramGroup count_outcomes(const QuantizerBank& bank, std::span<const double> observations) {
    const std::size_t dim = bank.sensor_count();
    if (observations.size() % dim != 0) throw std::invalid_argument("observation buffer is not n x L");
    HistogramGroup g{bank, std::vector<std::uint64_t>(bank.outcome_count(), 0)};
    for (std::size_t k = 0; k < observations.size(); k += dim) ++g.counts[bank.quantize(observations.subspan(k, dim))];
    return g;
}

}  // namespace copdet
