#pragma once

#include "ddc/latency.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ddc {

/// A declarative scenario file. The workload and failure sections stay as
/// JSON until run; load() validates every field up front.
struct ScenarioConfig {
    std::string name;
    std::string description;
    std::uint64_t seed = 1;
    LatencyProfile profile = LatencyProfile::current();
    /// "shuffle", "straggler", "paxos", "primitive-script" or "heap".
    std::string workload;
    nlohmann::json raw;  ///< the whole validated document
    std::string origin;  ///< file path, for diagnostics

    /// Throws Error(config_invalid) naming the offending field, or the
    /// line and column of a syntax error.
    static ScenarioConfig parse(const std::string& text, const std::string& origin = "<string>");
    static ScenarioConfig from_json(const nlohmann::json& doc, const std::string& origin = "<json>");
    static ScenarioConfig load(const std::filesystem::path& path);
};

struct CheckResult {
    std::string property;
    bool passed = true;
    std::string detail;
};

struct RunReport {
    std::string scenario;
    std::string workload;
    std::uint64_t seed = 0;
    std::string profile;
    nlohmann::json metrics = nlohmann::json::object();
    /// One entry per enabled check, in evaluation order.
    std::vector<CheckResult> checks;
    std::optional<std::filesystem::path> trace_path;
    /// Line-delimited JSON trace of every simulated run, in run order.
    std::string trace;

    /// Adds or tightens a check; a property appears once however often it
    /// is evaluated, and fails if any evaluation failed.
    void check(const std::string& property, bool passed, const std::string& detail = {});
    [[nodiscard]] bool ok() const;
    [[nodiscard]] const CheckResult* find(const std::string& property) const;
    /// Stable JSON without the trace body.
    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] std::string to_text() const;
};

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::optional<std::filesystem::path> trace_out;
};

RunReport run_scenario(const ScenarioConfig& config, const RunOverrides& overrides = {});

struct FuzzReport {
    std::string scenario;
    std::uint64_t first_seed = 0;
    std::size_t runs = 0;
    /// property -> runs in which it failed; every property seen is present.
    std::map<std::string, std::size_t> failed;
    /// seed -> first failing check of that run
    std::map<std::uint64_t, std::string> failures;
    nlohmann::json totals = nlohmann::json::object();

    [[nodiscard]] bool ok() const { return failures.empty(); }
    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] std::string to_text() const;
};

/// Runs the scenario under seeds first_seed .. first_seed + n - 1. Each
/// failure is reproduced by run_scenario with that seed.
FuzzReport fuzz_scenario(const ScenarioConfig& config, std::size_t n_seeds, const RunOverrides& overrides = {});

/// Crash sweep of a heap scenario. Throws Error(config_invalid) for other
/// workloads.
RunReport crash_sweep(const ScenarioConfig& config, const RunOverrides& overrides = {});

/// Directory of the bundled scenario files.
std::filesystem::path bundled_scenario_dir();
/// Bundled scenario names, sorted.
std::vector<std::string> bundled_scenarios();
/// A path, or the name of a bundled scenario.
std::filesystem::path resolve_scenario(const std::string& name_or_path);

}  // namespace ddc
