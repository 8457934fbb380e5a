#include "ddc/error.hpp"
#include "ddc/scenario.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace ddc;
using nlohmann::json;

namespace {

ScenarioConfig bundled(const std::string& name) { return ScenarioConfig::load(resolve_scenario(name)); }

ScenarioConfig with(const std::string& name, const std::function<void(json&)>& edit)
{
    json doc = bundled(name).raw;
    edit(doc);
    return ScenarioConfig::from_json(doc, name + "-edited");
}

std::string config_error(const std::string& text)
{
    try {
        (void)ScenarioConfig::parse(text, "t.json");
    } catch (const Error& e) {
        EXPECT_EQ(e.errc(), Errc::config_invalid);
        return e.what();
    }
    ADD_FAILURE() << "accepted: " << text;
    return {};
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(ScenarioConfig, BundledScenariosAllLoad)
{
    const auto names = bundled_scenarios();
    EXPECT_GE(names.size(), 9u);
    for (const auto& n : names) {
        const auto sc = bundled(n);
        EXPECT_EQ(sc.name, n);
        EXPECT_FALSE(sc.description.empty()) << n;
    }
}

TEST(ScenarioConfig, ErrorsNameTheBadField)
{
    EXPECT_NE(config_error(R"({"workload": {"kind": "shuffle", "mappers": "four"}})").find("workload.mappers"),
              std::string::npos);
    EXPECT_NE(config_error(R"({"workload": {"kind": "shuffle", "mapers": 2}})").find("workload.mapers"),
              std::string::npos);
    EXPECT_NE(config_error(R"({"workload": {"kind": "teleport"}})").find("workload.kind"), std::string::npos);
    EXPECT_NE(config_error(R"({"seed": 1})").find("workload"), std::string::npos);
    EXPECT_NE(config_error(R"({"profile": "warp", "workload": {"kind": "heap"}})").find("profile"), std::string::npos);
    EXPECT_NE(config_error(R"({"profile": {"rack_mmu_rtt_us": -1}, "workload": {"kind": "heap"}})")
                  .find("profile.rack_mmu_rtt_us"),
              std::string::npos);
    EXPECT_NE(config_error(R"({"workload": {"kind": "paxos"}, "failures": [{"kind": "crash-compute", "member": 9}]})")
                  .find("failures[0].member"),
              std::string::npos);
    EXPECT_NE(config_error(R"({"workload": {"kind": "paxos", "strategies": ["pray"]}})").find("workload.strategies"),
              std::string::npos);
    EXPECT_NE(config_error(R"({"workload": {"kind": "heap"}, "rack": {"compute_elements": 0}})")
                  .find("rack.compute_elements"),
              std::string::npos);
    EXPECT_NE(config_error(R"({"workload": {"kind": "heap"}, "extra": 1})").find("extra"), std::string::npos);
}

TEST(ScenarioConfig, SyntaxErrorsGiveLineAndColumn)
{
    const auto what = config_error("{\n  \"workload\": {\n    \"kind\": \"heap\",,\n  }\n}\n");
    EXPECT_NE(what.find("t.json:3:"), std::string::npos) << what;
}

TEST(ScenarioConfig, RackOverridesBelowTheWorkloadsNeedsAreRejected)
{
    auto sc = with("shuffle_3rtt_vs_grant", [](json& d) { d["rack"] = {{"compute_elements", 2}}; });
    try {
        (void)run_scenario(sc);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.errc(), Errc::config_invalid);
        EXPECT_NE(std::string(e.what()).find("rack.compute_elements"), std::string::npos);
    }
}

TEST(RunReport, RepeatedChecksMergeIntoOneEntry)
{
    RunReport r;
    r.check("agreement", true);
    r.check("fencing", true);
    r.check("agreement", false, "slot 3");
    r.check("agreement", true);
    ASSERT_EQ(r.checks.size(), 2u);
    EXPECT_FALSE(r.find("agreement")->passed);
    EXPECT_EQ(r.find("agreement")->detail, "slot 3");
    EXPECT_FALSE(r.ok());
}

TEST(RunReport, EveryBundledScenarioPassesAndListsEachCheckOnce)
{
    for (const auto& n : bundled_scenarios()) {
        const auto r = run_scenario(bundled(n));
        EXPECT_TRUE(r.ok()) << n << "\n" << r.to_text();
        std::set<std::string> seen;
        for (const auto& c : r.checks) EXPECT_TRUE(seen.insert(c.property).second) << n << " " << c.property;
        EXPECT_FALSE(r.checks.empty()) << n;
        EXPECT_EQ(r.to_json()["checks"].size(), r.checks.size());
    }
}

TEST(RunReport, SameSeedSameReportAndTrace)
{
    for (const auto& n : {"paxos_fuzz", "primitives_fuzz", "straggler_steal"}) {
        const auto sc = bundled(n);
        const auto a = run_scenario(sc, {.seed = 17});
        const auto b = run_scenario(sc, {.seed = 17});
        EXPECT_EQ(a.to_json().dump(), b.to_json().dump()) << n;
        EXPECT_EQ(a.trace, b.trace) << n;
        EXPECT_FALSE(a.trace.empty());
    }
}

TEST(RunReport, TraceFileIsLineDelimitedJson)
{
    const auto path = std::filesystem::temp_directory_path() / "ddc_scenario_trace.jsonl";
    const auto r = run_scenario(bundled("paxos_reincarnate"), {.trace_out = path});
    ASSERT_TRUE(r.trace_path);
    const auto text = slurp(path);
    EXPECT_EQ(text, r.trace);
    std::istringstream lines(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = json::parse(line);
        ASSERT_TRUE(j.contains("t") && j.contains("actor") && j.contains("kind")) << line;
        ++n;
    }
    EXPECT_GT(n, 100u);
    std::filesystem::remove(path);
}

TEST(RunReport, ProfileOverrideChangesTheLatencies)
{
    const auto r = run_scenario(bundled("shuffle_3rtt_vs_grant"), {.profile = "future"});
    EXPECT_EQ(r.profile, "future");
    EXPECT_EQ(r.metrics["modes"]["transparent"]["partition_transfer_us"].get<double>(), 3.0);
    EXPECT_EQ(r.metrics["modes"]["grant"]["partition_transfer_us"].get<double>(), 1.0);
    // the file's own expectations no longer hold
    EXPECT_FALSE(r.find("expect:modes.grant.partition_transfer_us")->passed);
    EXPECT_TRUE(r.find("expect:speedup")->passed);
}

TEST(RunReport, UnmetExpectationFails)
{
    auto sc = with("shuffle_3rtt_vs_grant", [](json& d) {
        d["expect"] = {{"speedup", 2.0}, {"modes.grant.nonexistent", 1}};
    });
    const auto r = run_scenario(sc);
    EXPECT_FALSE(r.ok());
    EXPECT_FALSE(r.find("expect:speedup")->passed);
    EXPECT_NE(r.find("expect:modes.grant.nonexistent")->detail.find("missing"), std::string::npos);
}

TEST(Fuzz, ZeroSeedsIsAnEmptySuccess)
{
    const auto f = fuzz_scenario(bundled("primitives_fuzz"), 0);
    EXPECT_EQ(f.runs, 0u);
    EXPECT_TRUE(f.ok());
    EXPECT_TRUE(f.failed.empty());
}

TEST(Fuzz, BrokenMmuFailuresReproduceUnderRun)
{
    auto sc = with("primitives_fuzz", [](json& d) { d["workload"]["defect"] = "keep-source-mapping"; });
    const auto f = fuzz_scenario(sc, 20, {.seed = 100});
    ASSERT_FALSE(f.ok());
    EXPECT_GT(f.failed.at("single-owner"), 0u);
    for (const auto& [seed, what] : f.failures) {
        const auto r = run_scenario(sc, {.seed = seed});
        EXPECT_FALSE(r.ok()) << seed;
        const auto property = what.substr(0, what.find(':'));
        ASSERT_NE(r.find(property), nullptr);
        EXPECT_FALSE(r.find(property)->passed) << seed;
    }
}

TEST(Fuzz, CleanSeedsStayClean)
{
    const auto f = fuzz_scenario(bundled("paxos_fuzz"), 25);
    EXPECT_EQ(f.runs, 25u);
    EXPECT_TRUE(f.ok()) << f.to_text();
    EXPECT_EQ(f.failed.at("agreement"), 0u);
    EXPECT_EQ(f.failed.at("fencing"), 0u);
}

TEST(CrashSweep, HeapWorkloadRecoversAtEveryPoint)
{
    const auto r = crash_sweep(bundled("heap_50tx"));
    EXPECT_TRUE(r.ok());
    EXPECT_GE(r.metrics["crash_points"].get<std::size_t>(), 200u);
}

TEST(CrashSweep, ZeroTransactionsTriviallyPass)
{
    const auto r = crash_sweep(with("heap_50tx", [](json& d) { d["workload"]["transactions"] = 0; }));
    EXPECT_TRUE(r.ok());
    EXPECT_EQ(r.metrics["total_writes"].get<std::size_t>(), 0u);
}

TEST(CrashSweep, DataBeforeLogIsDetected)
{
    const auto r = crash_sweep(with("heap_50tx", [](json& d) { d["workload"]["defect"] = "data-before-log"; }));
    EXPECT_FALSE(r.ok());
    EXPECT_FALSE(r.find("committed-prefix-recovery")->passed);
}

TEST(CrashSweep, OtherWorkloadsAreAConfigError)
{
    try {
        (void)crash_sweep(bundled("paxos_reincarnate"));
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.errc(), Errc::config_invalid);
    }
}
