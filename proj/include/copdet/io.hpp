#pragma once

// Line-delimited JSON logs: quantized histograms (everything the estimator
// needs), per-stage feedback traces with delta-encoded quantizers, and MLE
// result records. Also RFC-4180 CSV writing for experiment tables.

#include <iosfwd>
#include <stdexcept>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "copdet/design.hpp"
#include "copdet/estimation.hpp"
#include "copdet/quantization.hpp"

namespace copdet {

// Raised for malformed log input; the message carries "line N: ...".
class LogFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bit vector packed LSB-first: cell 8b + k is bit k of byte b, bytes written
// as two lowercase hex digits each.
std::string pack_bits(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> unpack_bits(const std::string& hex, std::size_t cells);

// One record per group:
//   {"stage":j,"n":N_j,"sensors":[{"y_min":..,"y_max":..,"delta":..,"bits":["hex",..]}],"counts":[..]}
void write_histogram_log(std::ostream& out, const QuantizedHistogram& hist);
QuantizedHistogram read_histogram_log(std::istream& in);

// One record per stage holding the bank fed back at the end of the stage, the
// fusion rule as a bit string, the estimate and the metrics at truth. The bank
// is written in full at the first stage and afterwards as the cells whose bit
// flipped, per (sensor, bit).
void write_stage_trace(std::ostream& out, const FeedbackTrace& trace);
// Rebuilds the bank fed back after every stage from a trace log.
std::vector<QuantizerBank> read_stage_trace_banks(std::istream& in);

// {"estimate":{name:value},"log_likelihood":..,"converged":..,...,"crlb_diag":{name:value}|null}
std::string mle_record(const MleResult& result, const std::optional<Eigen::MatrixXd>& crlb);

// RFC-4180 field quoting.
std::string csv_field(const std::string& s);
// Shortest decimal text that round-trips to the same double.
std::string format_double(double x);

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write(std::ostream& out) const;
    std::string str() const;
};

}  // namespace copdet
