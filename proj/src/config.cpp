#include "copdet/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "copdet/copula.hpp"

namespace copdet {

namespace {

class Parser {
public:
    explicit Parser(std::string origin) : origin_(std::move(origin)) {}

    [[noreturn]] void fail(const YAML::Node& at, const std::string& what) const {
        const auto mark = at.Mark();
        std::ostringstream os;
        os << origin_ << ':' << (mark.line + 1) << ':' << (mark.column + 1) << ": " << what;
        throw ConfigError(os.str());
    }

    void only_keys(const YAML::Node& map, std::initializer_list<const char*> keys, const std::string& where) const {
        if (!map.IsMap()) fail(map, where + " must be a mapping");
        for (const auto& kv : map) {
            const auto k = kv.first.as<std::string>();
            bool known = false;
            for (const char* allowed : keys) known = known || k == allowed;
            if (!known) fail(kv.first, "unknown key '" + k + "' in " + where);
        }
    }

    YAML::Node need(const YAML::Node& map, const char* key, const std::string& where) const {
        const YAML::Node n = map[key];
        if (!n) fail(map, "missing key '" + std::string(key) + "' in " + where);
        return n;
    }

    template <typename T>
    T scalar(const YAML::Node& n, const std::string& what) const {
        if (!n.IsScalar()) fail(n, what + " must be a scalar");
        try {
            return n.as<T>();
        } catch (const YAML::Exception&) {
            fail(n, "cannot read " + what + " from '" + n.Scalar() + "'");
        }
    }

    template <typename T>
    T get(const YAML::Node& map, const char* key, T fallback) const {
        const YAML::Node n = map[key];
        return n ? scalar<T>(n, key) : fallback;
    }

    double positive(const YAML::Node& map, const char* key, const std::string& where) const {
        const YAML::Node n = need(map, key, where);
        const double x = scalar<double>(n, key);
        if (!(x > 0.0)) fail(n, std::string(key) + " must be positive");
        return x;
    }

    std::size_t count(const YAML::Node& map, const char* key, std::size_t fallback, std::size_t min = 1) const {
        const YAML::Node n = map[key];
        if (!n) return fallback;
        const auto v = scalar<long long>(n, key);
        if (v < static_cast<long long>(min)) fail(n, std::string(key) + " must be at least " + std::to_string(min));
        return static_cast<std::size_t>(v);
    }

    MarginalModel marginal(const YAML::Node& n) const {
        only_keys(n, {"family", "shape", "scale"}, "marginal");
        const auto family = scalar<std::string>(need(n, "family", "marginal"), "family");
        if (family != "gamma") fail(n["family"], "unsupported marginal family '" + family + "'");
        return {MarginalFamily::Gamma, positive(n, "shape", "marginal"), positive(n, "scale", "marginal")};
    }

    HypothesisModel hypothesis(const YAML::Node& n, const std::string& where) const {
        only_keys(n, {"copula", "marginals"}, where);
        const YAML::Node cop = need(n, "copula", where);
        only_keys(cop, {"family", "theta", "rho"}, where + ".copula");
        const YAML::Node fam = need(cop, "family", where + ".copula");
        CopulaFamily family;
        try {
            family = copula_family_from_string(scalar<std::string>(fam, "family"));
        } catch (const std::invalid_argument& e) {
            fail(fam, e.what());
        }
        const YAML::Node margs = need(n, "marginals", where);
        if (!margs.IsSequence() || margs.size() < 1) fail(margs, "marginals must be a nonempty list");
        std::vector<MarginalModel> ms;
        for (const auto& m : margs) ms.push_back(marginal(m));

        HypothesisModel h;
        h.copula = {family, ms.size()};
        h.marginals = ms;
        if (family == CopulaFamily::Independence) {
            if (cop["theta"] || cop["rho"]) fail(cop, "the independence copula takes no parameter");
            return h;
        }
        if (cop["theta"] && cop["rho"]) fail(cop, "give either theta or rho, not both");
        if (cop["theta"]) {
            h.theta = scalar<double>(cop["theta"], "theta");
            try {
                validate_theta(h.copula, h.theta);
            } catch (const std::invalid_argument& e) {
                fail(cop["theta"], e.what());
            }
        } else if (cop["rho"]) {
            try {
                h.theta = theta_from_rho(h.copula, scalar<double>(cop["rho"], "rho"));
            } catch (const std::invalid_argument& e) {
                fail(cop["rho"], e.what());
            }
        } else {
            fail(cop, "copula needs theta or rho");
        }
        return h;
    }

    SensorQuantizer indicator(const YAML::Node& n, const SensorGrid& grid) const {
        only_keys(n, {"a", "b"}, "affine indicator");
        return SensorQuantizer::affine(grid, scalar<double>(need(n, "a", "affine indicator"), "a"),
                                       scalar<double>(need(n, "b", "affine indicator"), "b"));
    }

    SensorQuantizer sensor_quantizer(const YAML::Node& n, const SensorGrid& grid) const {
        if (n.IsMap()) return indicator(n, grid);
        if (!n.IsSequence() || n.size() == 0) fail(n, "a sensor quantizer is an {a, b} map or a list of them");
        SensorQuantizer q{grid, {}};
        for (const auto& bit : n) q.bits.push_back(indicator(bit, grid).bits[0]);
        return q;
    }

private:
    std::string origin_;
};

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

ScenarioConfig parse_config(const std::string& text, const std::string& origin) {
    Parser p(origin);
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(origin + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                          ": " + e.msg);
    }
    if (!root || !root.IsMap()) throw ConfigError(origin + ":1:1: config must be a mapping");
    p.only_keys(root,
                {"version", "name", "seed", "grid", "prior", "hypotheses", "free", "initial_quantizers",
                 "initial_rule", "costs", "mle", "design", "stages", "monte_carlo", "rmse", "roc"},
                "config");

    ScenarioConfig cfg;
    cfg.source = text;
    cfg.version = p.get<int>(root, "version", 1);
    if (cfg.version != 1) p.fail(root["version"], "unsupported config version " + std::to_string(cfg.version));
    cfg.name = p.get<std::string>(root, "name", "");
    cfg.seed = p.get<std::uint64_t>(root, "seed", 0);

    const YAML::Node g = p.need(root, "grid", "config");
    p.only_keys(g, {"y_min", "y_max", "delta"}, "grid");
    try {
        cfg.grid = SensorGrid(p.scalar<double>(p.need(g, "y_min", "grid"), "y_min"),
                              p.scalar<double>(p.need(g, "y_max", "grid"), "y_max"), p.positive(g, "delta", "grid"));
    } catch (const std::invalid_argument& e) {
        p.fail(g, e.what());
    }

    const YAML::Node prior = p.need(root, "prior", "config");
    p.only_keys(prior, {"p0", "p1"}, "prior");
    double p0 = 0.0;
    if (prior["p0"] && prior["p1"]) p.fail(prior, "give either p0 or p1, not both");
    if (prior["p1"]) {
        p0 = 1.0 - p.scalar<double>(prior["p1"], "p1");
    } else {
        p0 = p.scalar<double>(p.need(prior, "p0", "prior"), "p0");
    }
    if (!(p0 > 0.0 && p0 < 1.0)) p.fail(prior, "prior probabilities must lie strictly between 0 and 1");

    const YAML::Node hyps = p.need(root, "hypotheses", "config");
    p.only_keys(hyps, {"h0", "h1"}, "hypotheses");
    const auto h0 = p.hypothesis(p.need(hyps, "h0", "hypotheses"), "h0");
    const auto h1 = p.hypothesis(p.need(hyps, "h1", "hypotheses"), "h1");
    if (h0.dimension() != h1.dimension()) p.fail(hyps, "h0 and h1 disagree on the number of sensors");
    cfg.truth = ParamVector(p0, h0, h1);
    cfg.rho = h1.copula.family == CopulaFamily::Independence ? 0.0 : spearman_rho(h1.copula, h1.theta);

    const YAML::Node free = p.need(root, "free", "config");
    if (!free.IsSequence() || free.size() == 0) p.fail(free, "free must be a nonempty list of parameter names");
    for (const auto& f : free) {
        try {
            cfg.truth.set_free(p.scalar<std::string>(f, "free parameter"));
        } catch (const std::invalid_argument& e) {
            p.fail(f, e.what());
        }
    }

    const std::size_t sensors = h0.dimension();
    const YAML::Node iq = root["initial_quantizers"];
    std::vector<SensorQuantizer> qs;
    if (iq) {
        if (!iq.IsSequence() || iq.size() != sensors) p.fail(iq, "initial_quantizers needs one entry per sensor");
        for (const auto& s : iq) qs.push_back(p.sensor_quantizer(s, cfg.grid));
    } else {
        for (std::size_t i = 0; i < sensors; ++i) qs.push_back(SensorQuantizer::constant(cfg.grid, 1, 0));
    }
    try {
        cfg.initial_bank = QuantizerBank(std::move(qs));
    } catch (const std::invalid_argument& e) {
        p.fail(iq ? iq : root, e.what());
    }

    const YAML::Node rule = root["initial_rule"];
    const std::string r = rule ? p.scalar<std::string>(rule, "initial_rule") : "or";
    if (r == "or") {
        cfg.initial_rule = FusionRule::or_rule(cfg.initial_bank);
    } else if (r == "and") {
        cfg.initial_rule = FusionRule::and_rule(cfg.initial_bank);
    } else {
        if (r.size() != cfg.initial_bank.outcome_count() || r.find_first_not_of("01") != std::string::npos) {
            p.fail(rule, "initial_rule must be 'or', 'and' or a 0/1 string of length 2^r");
        }
        cfg.initial_rule = FusionRule::constant(r.size(), false);
        for (std::size_t u = 0; u < r.size(); ++u) cfg.initial_rule.decisions[u] = r[u] == '1';
    }

    if (const YAML::Node c = root["costs"]) {
        p.only_keys(c, {"c00", "c01", "c10", "c11"}, "costs");
        cfg.costs = {p.get<double>(c, "c00", 0.0), p.get<double>(c, "c01", 1.0), p.get<double>(c, "c10", 1.0),
                     p.get<double>(c, "c11", 0.0)};
        try {
            cfg.costs.validate();
        } catch (const std::invalid_argument& e) {
            p.fail(c, e.what());
        }
    }

    if (const YAML::Node m = root["mle"]) {
        p.only_keys(m, {"restarts", "tolerance", "max_evaluations"}, "mle");
        cfg.mle.restarts = p.count(m, "restarts", cfg.mle.restarts);
        cfg.mle.tolerance = m["tolerance"] ? p.positive(m, "tolerance", "mle") : cfg.mle.tolerance;
        cfg.mle.max_evaluations = p.count(m, "max_evaluations", cfg.mle.max_evaluations);
    }
    if (const YAML::Node d = root["design"]) {
        p.only_keys(d, {"max_sweeps"}, "design");
        cfg.design.max_sweeps = p.count(d, "max_sweeps", cfg.design.max_sweeps);
    }
    if (const YAML::Node s = root["stages"]) {
        p.only_keys(s, {"count", "group_size"}, "stages");
        cfg.stages = p.count(s, "count", cfg.stages);
        cfg.group_size = p.count(s, "group_size", cfg.group_size);
    }
    if (const YAML::Node mc = root["monte_carlo"]) {
        p.only_keys(mc, {"replicates", "threads"}, "monte_carlo");
        cfg.replicates = p.count(mc, "replicates", cfg.replicates);
        cfg.threads = static_cast<unsigned>(p.count(mc, "threads", 0, 0));
    }
    if (const YAML::Node rm = root["rmse"]) {
        p.only_keys(rm, {"j_min", "j_max", "group_size"}, "rmse");
        cfg.rmse.j_min = p.count(rm, "j_min", cfg.rmse.j_min);
        cfg.rmse.j_max = p.count(rm, "j_max", cfg.rmse.j_max);
        cfg.rmse.group_size = p.count(rm, "group_size", cfg.rmse.group_size);
        if (cfg.rmse.j_max < cfg.rmse.j_min) p.fail(rm, "rmse.j_max must be at least j_min");
    }
    if (const YAML::Node ro = root["roc"]) {
        p.only_keys(ro, {"c01", "test_h1", "test_h0", "stages", "group_size"}, "roc");
        if (const YAML::Node c = ro["c01"]) {
            if (!c.IsSequence() || c.size() == 0) p.fail(c, "roc.c01 must be a nonempty list");
            for (const auto& x : c) {
                const double v = p.scalar<double>(x, "c01");
                if (!(v > cfg.costs.c11)) p.fail(x, "every c01 must exceed c11");
                cfg.roc.c01.push_back(v);
            }
        }
        cfg.roc.test_h1 = p.count(ro, "test_h1", cfg.roc.test_h1);
        cfg.roc.test_h0 = p.count(ro, "test_h0", cfg.roc.test_h0);
        cfg.roc.stages = p.count(ro, "stages", cfg.roc.stages);
        cfg.roc.group_size = p.count(ro, "group_size", cfg.roc.group_size);
    }
    return cfg;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ":1:1: cannot open file");
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str(), path);
}

}  // namespace copdet
