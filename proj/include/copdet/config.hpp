#pragma once

// Scenario files (YAML). See README.md for the schema; every experiment is a
// pure function of a parsed ScenarioConfig and a seed.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "copdet/design.hpp"

namespace copdet {

// Message format: "<file>:<line>:<column>: <what>".
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RmsePlan {
    std::size_t j_min = 2;
    std::size_t j_max = 10;
    std::size_t group_size = 100;
};

struct RocPlan {
    std::vector<double> c01;
    std::size_t test_h1 = 400;
    std::size_t test_h0 = 1600;
    std::size_t stages = 10;
    std::size_t group_size = 100;
};

struct ScenarioConfig {
    int version = 1;
    std::string name;
    std::uint64_t seed = 0;
    SensorGrid grid;
    ParamVector truth;  // carries the free mask used by the estimator
    double rho = 0.0;   // Spearman rho of the H1 copula
    QuantizerBank initial_bank;
    FusionRule initial_rule;
    CostCoefficients costs;
    MleOptions mle;
    DesignOptions design;
    std::size_t stages = 10;
    std::size_t group_size = 100;
    std::size_t replicates = 200;
    unsigned threads = 0;  // 0: hardware concurrency
    RmsePlan rmse;
    RocPlan roc;
    std::string source;  // raw file text, hashed into report metadata
};

ScenarioConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ScenarioConfig load_config(const std::string& path);

// FNV-1a 64-bit.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace copdet
