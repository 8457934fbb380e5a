// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include "ddc/latency.hpp"
#include "ddc/scenario.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace ddc;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

ScenarioConfig bundled(const std::string& name) { return ScenarioConfig::load(resolve_scenario(name)); }

ScenarioConfig edited(const std::string& name, const std::function<void(json&)>& edit)
{
    json doc = bundled(name).raw;
    edit(doc);
    return ScenarioConfig::from_json(doc, name);
}

bool passed(const RunReport& r, const std::string& property)
{
    const auto* c = r.find(property);
    return c && c->passed;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

Outcome shuffle_speedup()
{
    const auto r = run_scenario(bundled("shuffle_3rtt_vs_grant"));
    const auto& t = r.metrics["modes"]["transparent"];
    const auto& g = r.metrics["modes"]["grant"];
    // every partition, not just the slowest
    const bool exact = t["partition_transfer_us"] == 6.0 && t["partition_transfer_min_us"] == 6.0 &&
                       g["partition_transfer_us"] == 2.0 && g["partition_transfer_min_us"] == 2.0;
    const bool speedup = r.metrics["speedup"] == 3.0;
    std::ostringstream d;
    d << "transparent " << t["partition_transfer_us"] << "us, grant " << g["partition_transfer_us"] << "us, speedup "
      << r.metrics["speedup"];
    return {exact && speedup && r.profile == "current", d.str()};
}

Outcome latency_table()
{
    const auto cur = LatencyProfile::by_name("current");
    const auto fut = LatencyProfile::by_name("future");
    const auto cloud = LatencyProfile::by_name("cloud");
    const SimTime us1 = SimTime::from_us(1), us2 = SimTime::from_us(2), us45 = SimTime::from_us(45);
    bool ok = cur.rtt(LinkClass::CrossRackTor) == us45 && cur.rtt(LinkClass::IntraRackTor) == us2 &&
              cur.rtt(LinkClass::RackMmu) == us2 && fut.rtt(LinkClass::IntraRackTor) == us1 &&
              fut.rtt(LinkClass::RackMmu) == us1 && fut.rtt(LinkClass::CrossRackTor) == us45 &&
              cloud.rtt(LinkClass::CrossRackTor) == us45;
    // the bundled scenarios pick the same tables up by name
    ok = ok && bundled("shuffle_future_profile").profile.rtt(LinkClass::IntraRackTor) == us1 &&
         bundled("paxos_memory_failure").profile.rtt(LinkClass::CrossRackTor) == us45;
    std::ostringstream d;
    d << "cross-rack " << cur.rtt(LinkClass::CrossRackTor).str() << ", intra-rack "
      << cur.rtt(LinkClass::IntraRackTor).str() << ", future intra-rack " << fut.rtt(LinkClass::IntraRackTor).str();
    return {ok, d.str()};
}

Outcome paxos_safety()
{
    const auto f = fuzz_scenario(bundled("paxos_fuzz"), 1000);
    const auto agreement = f.failed.count("agreement") ? f.failed.at("agreement") : 0;
    const auto fencing = f.failed.count("fencing") ? f.failed.at("fencing") : 0;
    std::ostringstream d;
    d << f.runs << " seeds, " << agreement << " agreement violations, " << fencing << " post-fence writes";
    if (!f.failures.empty()) d << "; seed " << f.failures.begin()->first << ": " << f.failures.begin()->second;
    return {f.runs >= 1000 && f.failed.count("agreement") && f.failed.count("fencing") && agreement == 0 &&
                fencing == 0,
            d.str()};
}

Outcome reincarnation_advantage()
{
    bool ok = true;
    std::ostringstream d;
    for (int member = 1; member <= 3; ++member) {
        const auto r = run_scenario(edited("paxos_recovery_compare", [&](json& doc) {
            doc["failures"][0]["member"] = member;
        }));
        const bool good = passed(r, "reincarnation-faster") && passed(r, "reincarnation-no-state-transfer") &&
                          passed(r, "reincarnation-epoch-unchanged") && passed(r, "agreement") &&
                          r.metrics["runs"]["transfer"]["snapshot_bytes"].get<std::uint64_t>() > 0;
        ok = ok && good;
        d << "member " << member << ": " << r.find("reincarnation-faster")->detail << "; ";
    }
    return {ok, d.str() + "reincarnation copied 0 bytes, epoch unchanged"};
}

Outcome early_detection()
{
    std::size_t runs = 0, detected = 0, noticed = 0, notice_runs = 0;
    double worst_detection = 0, worst_margin = 1e9;
    for (int member = 1; member <= 3; ++member) {
        for (int k = 0; k < 8; ++k) {
            const double at = 300 + 0.5 * k;
            const auto r = run_scenario(edited("monitor_detection", [&](json& doc) {
                doc["failures"][0]["member"] = member;
                doc["failures"][0]["at_us"] = at;
            }));
            ++runs;
            if (passed(r, "detection-before-timeout") && r.profile == "cloud") ++detected;
            worst_detection = std::max(worst_detection, r.metrics["runs"]["reincarnate"].value("detection_us", 1e9));
        }
        for (int k = 0; k < 4; ++k) {
            const auto r = run_scenario(edited("paxos_memory_failure", [&](json& doc) {
                doc["failures"][0]["member"] = member;
                doc["failures"][0]["at_us"] = 300 + k;
            }));
            ++notice_runs;
            if (passed(r, "notice-before-timeout") && r.profile == "cloud") ++noticed;
            worst_margin = std::min(worst_margin, r.metrics["runs"]["reincarnate"].value("notice_margin_us", -1.0));
        }
    }
    std::ostringstream d;
    d << detected << "/" << runs << " detections, slowest " << worst_detection << "us against 135us; " << noticed
      << "/" << notice_runs << " memory notices, smallest margin " << worst_margin << "us";
    return {detected == runs && noticed == notice_runs && worst_margin > 100, d.str()};
}

Outcome crash_consistency()
{
    const auto r = crash_sweep(bundled("heap_50tx"));
    std::ostringstream d;
    d << r.metrics["transactions"] << " transactions, " << r.metrics["crash_points"] << " crash points, "
      << r.metrics["violations"] << " divergences";
    return {r.ok() && r.metrics["transactions"] == 50 && r.metrics["crash_points"].get<std::size_t>() >= 200, d.str()};
}

Outcome primitive_invariants()
{
    const auto sc = bundled("primitives_fuzz");
    const auto f = fuzz_scenario(sc, 1000);
    const auto& w = sc.raw.at("workload");
    bool ok = f.runs == 1000 && w["processes"] == 4 && w["pages"] == 32;
    std::ostringstream d;
    d << f.runs << " seeds;";
    for (const char* p :
         {"single-owner", "address-stability", "content-preservation", "capability-soundness", "revoke-before-reassign"}) {
        const bool present = f.failed.count(p) != 0;
        ok = ok && present && f.failed.at(p) == 0;
        d << " " << p << "=" << (present ? std::to_string(f.failed.at(p)) : "absent");
    }
    return {ok, d.str()};
}

Outcome straggler_stealing()
{
    bool ok = true;
    std::ostringstream d;
    for (const char* name : {"straggler_steal", "straggler_crash"}) {
        const auto r = run_scenario(bundled(name));
        if (!d.str().empty()) d << "; ";
        ok = ok && passed(r, "steal-within-inflight") && passed(r, "steal-fewer-than-restart") &&
             passed(r, "results-match-oracle");
        d << name << ": " << r.find("steal-within-inflight")->detail << ", restart "
          << r.metrics["reexecuted_restart"];
    }
    return {ok, d.str()};
}

Outcome determinism()
{
    const auto dir = std::filesystem::temp_directory_path() / "ddc_acceptance";
    std::filesystem::create_directories(dir);
    std::size_t same = 0, total = 0;
    std::string differs;
    for (const auto& n : bundled_scenarios()) {
        const auto sc = bundled(n);
        const auto a = dir / (n + ".a.jsonl");
        const auto b = dir / (n + ".b.jsonl");
        (void)run_scenario(sc, {.seed = 42, .trace_out = a});
        (void)run_scenario(sc, {.seed = 42, .trace_out = b});
        ++total;
        const auto ta = slurp(a);
        if (!ta.empty() && ta == slurp(b)) {
            ++same;
        } else if (differs.empty()) {
            differs = n;
        }
    }
    std::filesystem::remove_all(dir);
    std::ostringstream d;
    d << same << "/" << total << " bundled scenarios byte-identical";
    if (!differs.empty()) d << "; first difference in " << differs;
    return {total > 0 && same == total, d.str()};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    Outcome (*run)();
};

}  // namespace

int main()
{
    const Criterion criteria[] = {
        {1, "3-RTT transfer vs 1-RTT grant", 1, shuffle_speedup},
        {2, "latency table", 1, latency_table},
        {3, "paxos safety under adversity", 120, paxos_safety},
        {4, "reincarnation advantage", 5, reincarnation_advantage},
        {5, "early failure detection", 5, early_detection},
        {6, "crash-consistency oracle", 60, crash_consistency},
        {7, "single-owner and gift permanence", 60, primitive_invariants},
        {8, "straggler stealing", 5, straggler_stealing},
        {9, "determinism", 5, determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s criterion %d: %s (%s; %.2fs of %.0fs)%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    o.detail.c_str(), secs, c.budget_s, in_time ? "" : " over budget");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
