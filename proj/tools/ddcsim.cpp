// ddcsim: runs, fuzzes and crash-sweeps scenario files.
//
// Exit codes: 0 success, 1 invariant violation, 2 config error.

#include "ddc/error.hpp"
#include "ddc/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kViolation = 1;
constexpr int kConfigError = 2;

struct Common {
    std::string scenario;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    std::optional<std::string> trace_out;
    bool json = false;

    void add_to(CLI::App* cmd, bool with_trace)
    {
        cmd->add_option("scenario", scenario, "scenario file or bundled scenario name")->required();
        cmd->add_option("--seed", seed, "seed (first seed for fuzz)");
        cmd->add_option("--profile", profile, "latency profile")
            ->check(CLI::IsMember({"current", "future", "cloud"}));
        if (with_trace) cmd->add_option("--trace-out", trace_out, "write the line-delimited JSON trace here");
        cmd->add_flag("--json", json, "print the report as JSON");
    }

    [[nodiscard]] ddc::RunOverrides overrides() const
    {
        ddc::RunOverrides o;
        o.seed = seed;
        o.profile = profile;
        if (trace_out) o.trace_out = *trace_out;
        return o;
    }
};

template <typename Report>
int emit(const Report& r, bool json)
{
    if (json)
        std::cout << r.to_json().dump(2) << "\n";
    else
        std::cout << r.to_text();
    return r.ok() ? kOk : kViolation;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Disaggregated rack simulator"};
    app.require_subcommand(1);

    Common run_opts, fuzz_opts, sweep_opts;
    std::size_t n_seeds = 1000;
    bool list_json = false;

    auto* run = app.add_subcommand("run", "run a scenario once");
    run_opts.add_to(run, true);
    auto* fuzz = app.add_subcommand("fuzz", "run a scenario under consecutive seeds");
    fuzz_opts.add_to(fuzz, false);
    fuzz->add_option("-n,--seeds", n_seeds, "number of seeds")->capture_default_str();
    auto* sweep = app.add_subcommand("crash-sweep", "crash a heap workload at every write and recover");
    sweep_opts.add_to(sweep, true);
    auto* list = app.add_subcommand("list-scenarios", "list the bundled scenarios");
    list->add_flag("--json", list_json, "print as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (*list) {
            const auto names = ddc::bundled_scenarios();
            if (list_json) {
                nlohmann::json out = nlohmann::json::array();
                for (const auto& n : names) {
                    const auto sc = ddc::ScenarioConfig::load(ddc::resolve_scenario(n));
                    out.push_back({{"name", n}, {"workload", sc.workload}, {"description", sc.description}});
                }
                std::cout << out.dump(2) << "\n";
            } else {
                for (const auto& n : names) {
                    const auto sc = ddc::ScenarioConfig::load(ddc::resolve_scenario(n));
                    std::cout << n << "  [" << sc.workload << "]  " << sc.description << "\n";
                }
            }
            return kOk;
        }
        if (*run) {
            const auto sc = ddc::ScenarioConfig::load(ddc::resolve_scenario(run_opts.scenario));
            return emit(ddc::run_scenario(sc, run_opts.overrides()), run_opts.json);
        }
        if (*fuzz) {
            const auto sc = ddc::ScenarioConfig::load(ddc::resolve_scenario(fuzz_opts.scenario));
            return emit(ddc::fuzz_scenario(sc, n_seeds, fuzz_opts.overrides()), fuzz_opts.json);
        }
        const auto sc = ddc::ScenarioConfig::load(ddc::resolve_scenario(sweep_opts.scenario));
        return emit(ddc::crash_sweep(sc, sweep_opts.overrides()), sweep_opts.json);
    } catch (const ddc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.errc() == ddc::Errc::config_invalid ? kConfigError : kViolation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kViolation;
    }
}
