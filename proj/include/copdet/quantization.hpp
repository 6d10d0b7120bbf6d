#pragma once

// Discretized sensor grids, multi-bit indicator quantizers stored as bit
// labels on grid cells, and quantized-outcome pmfs obtained by integrating the
// joint density cell by cell.
//
// Outcome indexing: the bits of all sensors are concatenated sensor-major,
// bit-minor and read as a little-endian integer, so bit t of sensor i lands at
// position offset(i) + t with offset(i) = r_0 + ... + r_{i-1}.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "copdet/model.hpp"

namespace copdet {

// Uniform grid over [y_min, y_max) split into half-open cells of width delta.
class SensorGrid {
public:
    SensorGrid() = default;
    SensorGrid(double y_min, double y_max, double delta);

    double y_min() const { return y_min_; }
    double y_max() const { return y_max_; }
    double delta() const { return delta_; }
    std::size_t cell_count() const { return cells_; }
    double lower(std::size_t m) const { return y_min_ + static_cast<double>(m) * delta_; }
    double midpoint(std::size_t m) const { return lower(m) + 0.5 * delta_; }
    // Values outside the window are clamped to the boundary cell.
    std::size_t cell_of(double y) const;

    bool operator==(const SensorGrid&) const = default;

private:
    double y_min_ = 0.0;
    double y_max_ = 1.0;
    double delta_ = 1.0;
    std::size_t cells_ = 1;
};

// r_i indicator functions of one sensor, each a 0/1 label per grid cell.
struct SensorQuantizer {
    SensorGrid grid;
    std::vector<std::vector<std::uint8_t>> bits;  // bits[t][m]

    std::size_t bit_count() const { return bits.size(); }
    std::uint32_t pattern(std::size_t cell) const;
    void set_pattern(std::size_t cell, std::uint32_t pattern);

    // Single bit I[a*y + b] with I[x] = 1 iff x >= 0, evaluated at cell midpoints.
    static SensorQuantizer affine(const SensorGrid& grid, double a, double b);
    static SensorQuantizer from_indicator(const SensorGrid& grid, const std::function<bool(double)>& ind);
    static SensorQuantizer constant(const SensorGrid& grid, std::size_t bit_count, std::uint32_t pattern);

    bool operator==(const SensorQuantizer&) const = default;
};

class QuantizerBank {
public:
    QuantizerBank() = default;
    explicit QuantizerBank(std::vector<SensorQuantizer> sensors);

    std::size_t sensor_count() const { return sensors_.size(); }
    const SensorQuantizer& sensor(std::size_t i) const { return sensors_[i]; }
    SensorQuantizer& sensor(std::size_t i) { return sensors_[i]; }
    std::vector<SensorGrid> grids() const;

    std::size_t total_bits() const { return total_bits_; }
    std::size_t outcome_count() const { return std::size_t{1} << total_bits_; }
    std::size_t bit_offset(std::size_t i) const { return offsets_[i]; }

    std::uint32_t quantize(std::span<const double> y) const;
    std::uint32_t outcome_of_cells(std::span<const std::size_t> cells) const;
    // Outcome index of every joint cell, row-major with sensor 0 slowest.
    std::vector<std::uint32_t> cell_outcome_map() const;

    bool operator==(const QuantizerBank& other) const { return sensors_ == other.sensors_; }

private:
    std::vector<SensorQuantizer> sensors_;
    std::vector<std::size_t> offsets_;
    std::size_t total_bits_ = 0;
};

// Midpoint-rule probability of each joint grid cell, row-major with sensor 0
// slowest. Mass outside the grid window is not included, so total() < 1.
struct CellMassTable {
    std::vector<std::size_t> shape;
    std::vector<double> mass;

    double total() const;
};

CellMassTable cell_mass(const HypothesisModel& h, std::span<const SensorGrid> grids);
CellMassTable cell_mass(const HypothesisModel& h, const QuantizerBank& bank);

// Thread-safe memo of cell tables keyed by (hypothesis parameters, grids).
// Concurrent lookups share a reader lock; insertion takes the writer lock.
class CellMassCache {
public:
    explicit CellMassCache(std::size_t capacity = 64) : capacity_(capacity) {}

    std::shared_ptr<const CellMassTable> get(const HypothesisModel& h, std::span<const SensorGrid> grids);
    std::size_t size() const;

private:
    std::size_t capacity_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<const CellMassTable>> entries_;
    std::vector<std::string> order_;
};

struct QuantizedPmf {
    std::vector<double> probabilities;
    std::string source;

    std::size_t size() const { return probabilities.size(); }
    double operator[](std::size_t u) const { return probabilities[u]; }
};

// Raw (unnormalized) outcome masses of a table under a cell->outcome map.
std::vector<double> aggregate_outcomes(const CellMassTable& table, std::span<const std::uint32_t> outcome_map,
                                       std::size_t outcome_count);

// Maps cell tables to outcome masses for a fixed bank. Bivariate banks use row
// dot products against indicator vectors of the second sensor's patterns.
class OutcomeAggregator {
public:
    explicit OutcomeAggregator(const QuantizerBank& bank);

    std::vector<double> operator()(const CellMassTable& table) const;
    std::size_t outcome_count() const { return outcomes_; }

private:
    std::size_t outcomes_ = 0;
    std::vector<std::uint32_t> map_;
    bool bivariate_ = false;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint32_t> row_bits_;
    std::vector<std::uint32_t> col_patterns_;
    std::vector<std::vector<double>> col_weights_;
};

// Outcome masses of several two-sensor banks sharing one grid pair, from a
// single product of the cell table with the distinct second-sensor bit
// patterns. The pattern covering the most cells is obtained from row totals.
class BankSetAggregator {
public:
    static bool supports(std::span<const QuantizerBank> banks);
    explicit BankSetAggregator(std::span<const QuantizerBank> banks);

    // One raw mass vector per bank, in input order.
    std::vector<std::vector<double>> operator()(const CellMassTable& table) const;

private:
    struct Term {
        std::size_t column;
        std::uint32_t bits;
        bool complement;  // row total minus the bank's other columns
    };
    struct Bank {
        std::size_t outcomes;
        std::vector<std::uint32_t> row_bits;
        std::vector<Term> terms;
    };

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> weights_;  // cols_ x K, column-major; column 0 is all ones
    std::size_t columns_ = 0;
    std::vector<Bank> banks_;
};

// Outcome pmf renormalized to sum to one.
QuantizedPmf quantized_pmf(const CellMassTable& table, const QuantizerBank& bank);
QuantizedPmf quantized_pmf(const HypothesisModel& h, const QuantizerBank& bank);
QuantizedPmf quantized_pmf(double p0, const HypothesisModel& h0, const HypothesisModel& h1,
                           const QuantizerBank& bank);
QuantizedPmf quantized_pmf(const ParamVector& params, const QuantizerBank& bank);

// Outcome counts K_m for the N_j samples quantized with one bank.
struct HistogramGroup {
    QuantizerBank bank;
    std::vector<std::uint64_t> counts;

    std::uint64_t size() const;
};

struct QuantizedHistogram {
    std::vector<HistogramGroup> groups;

    std::uint64_t total() const;
    void validate() const;
};

// Quantizes row-major observations (n x L) into a histogram group.
HistogramGroup count_outcomes(const QuantizerBank& bank, std::span<const double> observations);

}  // namespace copdet
