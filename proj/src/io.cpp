#include "copdet/io.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace copdet {

using nlohmann::json;

namespace {

json bank_to_json(const QuantizerBank& bank) {
    json sensors = json::array();
    for (std::size_t i = 0; i < bank.sensor_count(); ++i) {
        const auto& s = bank.sensor(i);
        json bits = json::array();
        for (const auto& b : s.bits) bits.push_back(pack_bits(b));
        sensors.push_back({{"y_min", s.grid.y_min()}, {"y_max", s.grid.y_max()}, {"delta", s.grid.delta()}, {"bits", bits}});
    }
    return sensors;
}

QuantizerBank bank_from_json(const json& sensors) {
    std::vector<SensorQuantizer> qs;
    for (const auto& s : sensors) {
        SensorGrid grid(s.at("y_min").get<double>(), s.at("y_max").get<double>(), s.at("delta").get<double>());
        SensorQuantizer q{grid, {}};
        for (const auto& hex : s.at("bits")) q.bits.push_back(unpack_bits(hex.get<std::string>(), grid.cell_count()));
        qs.push_back(std::move(q));
    }
    return QuantizerBank(std::move(qs));
}

json bank_delta(const QuantizerBank& from, const QuantizerBank& to) {
    json out = json::array();
    for (std::size_t i = 0; i < to.sensor_count(); ++i) {
        for (std::size_t t = 0; t < to.sensor(i).bit_count(); ++t) {
            const auto& a = from.sensor(i).bits[t];
            const auto& b = to.sensor(i).bits[t];
            json cells = json::array();
            for (std::size_t m = 0; m < b.size(); ++m) {
                if (a[m] != b[m]) cells.push_back(m);
            }
            if (!cells.empty()) out.push_back({{"sensor", i}, {"bit", t}, {"cells", cells}});
        }
    }
    return out;
}

std::string rule_bits(const FusionRule& rule) {
    std::string s;
    for (auto d : rule.decisions) s += d ? '1' : '0';
    return s;
}

json named_values(const ParamVector& p, const std::vector<double>& values) {
    json out = json::object();
    const auto idx = p.free_indices();
    for (std::size_t d = 0; d < idx.size(); ++d) {
        const auto& name = p.entries()[idx[d]].name;
        out[name] = values[d];
        if (name == "p0") out["p1"] = 1.0 - values[d];
    }
    return out;
}

template <typename F>
void for_each_record(std::istream& in, F&& f) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            f(json::parse(line));
        } catch (const std::exception& e) {
            throw LogFormatError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

std::string pack_bits(const std::vector<std::uint8_t>& bits) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (std::size_t b = 0; b < bits.size(); b += 8) {
        unsigned byte = 0;
        for (std::size_t k = 0; k < 8 && b + k < bits.size(); ++k) byte |= (bits[b + k] & 1u) << k;
        out += digits[byte >> 4];
        out += digits[byte & 15u];
    }
    return out;
}

std::vector<std::uint8_t> unpack_bits(const std::string& hex, std::size_t cells) {
    if (hex.size() != 2 * ((cells + 7) / 8)) throw std::invalid_argument("hex bit vector has the wrong length");
    std::vector<std::uint8_t> bits(cells);
    for (std::size_t b = 0; b * 2 < hex.size(); ++b) {
        unsigned byte = 0;
        const auto r = std::from_chars(hex.data() + 2 * b, hex.data() + 2 * b + 2, byte, 16);
        if (r.ec != std::errc() || r.ptr != hex.data() + 2 * b + 2) throw std::invalid_argument("bad hex digit");
        for (std::size_t k = 0; k < 8; ++k) {
            if (8 * b + k < cells) {
                bits[8 * b + k] = (byte >> k) & 1u;
            } else if ((byte >> k) & 1u) {
                throw std::invalid_argument("padding bits must be zero");
            }
        }
    }
    return bits;
}

void write_histogram_log(std::ostream& out, const QuantizedHistogram& hist) {
    for (std::size_t j = 0; j < hist.groups.size(); ++j) {
        const auto& g = hist.groups[j];
        json rec = {{"stage", j + 1}, {"n", g.size()}, {"sensors", bank_to_json(g.bank)}, {"counts", g.counts}};
        out << rec.dump() << '\n';
    }
}

QuantizedHistogram read_histogram_log(std::istream& in) {
    QuantizedHistogram hist;
    for_each_record(in, [&](const json& rec) {
        HistogramGroup g{bank_from_json(rec.at("sensors")), rec.at("counts").get<std::vector<std::uint64_t>>()};
        if (g.counts.size() != g.bank.outcome_count()) throw std::invalid_argument("count vector length is not 2^r");
        if (rec.contains("n") && rec.at("n").get<std::uint64_t>() != g.size()) {
            throw std::invalid_argument("counts do not sum to n");
        }
        hist.groups.push_back(std::move(g));
    });
    return hist;
}

void write_stage_trace(std::ostream& out, const FeedbackTrace& trace) {
    const QuantizerBank* prev = nullptr;
    for (const auto& s : trace.stages) {
        json rec = {{"stage", s.stage}, {"n", s.group.size()}, {"counts", s.group.counts}};
        if (prev == nullptr) {
            rec["bank"] = {{"full", bank_to_json(s.design.bank)}};
        } else {
            rec["bank"] = {{"delta", bank_delta(*prev, s.design.bank)}};
        }
        prev = &s.design.bank;
        rec["rule"] = rule_bits(s.design.rule);
        rec["estimate"] = named_values(s.estimate, s.estimate.free_values());
        rec["log_likelihood"] = s.mle.log_likelihood;
        rec["converged"] = s.mle.converged;
        rec["reused_previous"] = s.reused_previous;
        rec["sweeps"] = s.design.sweeps;
        rec["design_cost"] = s.design.cost_trace.empty() ? 0.0 : s.design.cost_trace.back();
        rec["metrics"] = {{"p_false_alarm", s.metrics_at_truth.p_false_alarm},
                          {"p_detect", s.metrics_at_truth.p_detect},
                          {"bayes_cost", s.metrics_at_truth.bayes_cost}};
        out << rec.dump() << '\n';
    }
}

std::vector<QuantizerBank> read_stage_trace_banks(std::istream& in) {
    std::vector<QuantizerBank> banks;
    for_each_record(in, [&](const json& rec) {
        const auto& b = rec.at("bank");
        if (b.contains("full")) {
            banks.push_back(bank_from_json(b.at("full")));
            return;
        }
        if (banks.empty()) throw std::invalid_argument("first stage must carry the full bank");
        QuantizerBank next = banks.back();
        for (const auto& d : b.at("delta")) {
            auto& bits = next.sensor(d.at("sensor").get<std::size_t>()).bits.at(d.at("bit").get<std::size_t>());
            for (const auto& m : d.at("cells")) {
                auto& cell = bits.at(m.get<std::size_t>());
                cell ^= 1u;
            }
        }
        banks.push_back(std::move(next));
    });
    return banks;
}

std::string mle_record(const MleResult& result, const std::optional<Eigen::MatrixXd>& crlb) {
    json rec;
    rec["estimate"] = named_values(result.params, result.estimate);
    rec["log_likelihood"] = result.log_likelihood;
    rec["converged"] = result.converged;
    rec["iterations"] = result.iterations;
    rec["evaluations"] = result.evaluations;
    rec["restarts_used"] = result.restarts_used;
    rec["gradient_norm"] = result.gradient_norm;
    if (crlb) {
        std::vector<double> diag(static_cast<std::size_t>(crlb->rows()));
        for (std::size_t d = 0; d < diag.size(); ++d) diag[d] = (*crlb)(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        json c = named_values(result.params, diag);
        if (c.contains("p1")) c["p1"] = c["p0"];
        rec["crlb_diag"] = c;
    } else {
        rec["crlb_diag"] = nullptr;
    }
    return rec.dump();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

void CsvTable::write(std::ostream& out) const {
    auto line = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out << ',';
            out << csv_field(fields[i]);
        }
        out << "\r\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
}

std::string CsvTable::str() const {
    std::ostringstream os;
    write(os);
    return os.str();
}

}  // namespace copdet
