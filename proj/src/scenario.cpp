#include "ddc/scenario.hpp"

#include "ddc/error.hpp"
#include "ddc/heap_workload.hpp"
#include "ddc/paxos.hpp"
#include "ddc/primitive_fuzz.hpp"
#include "ddc/shuffle.hpp"
#include "ddc/world.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <variant>

#ifndef DDC_SCENARIO_DIR
#define DDC_SCENARIO_DIR "scenarios"
#endif

namespace ddc {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& origin, const std::string& field, const std::string& what)
{
    throw Error(Errc::config_invalid, origin + ": " + field + ": " + what);
}

/// Typed reads from one JSON object; rejects unknown keys on finish().
class Fields {
public:
    Fields(const json& j, std::string path, std::string origin) : j_(j), path_(std::move(path)), origin_(std::move(origin))
    {
        if (!j_.is_object()) invalid(origin_, path_.empty() ? "<root>" : path_, "expected an object");
    }

    [[nodiscard]] std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    [[noreturn]] void fail(const std::string& key, const std::string& what) const { invalid(origin_, field(key), what); }

    bool has(const std::string& key)
    {
        used_.insert(key);
        return j_.contains(key);
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback)
    {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            fail(key, "expected a non-negative integer");
        return v.get<std::uint64_t>();
    }

    unsigned count(const std::string& key, unsigned fallback, unsigned lo = 1, unsigned hi = 1u << 20)
    {
        const auto v = u64(key, fallback);
        if (v < lo || v > hi) fail(key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return static_cast<unsigned>(v);
    }

    double number(const std::string& key, double fallback)
    {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number()) fail(key, "expected a number");
        return v.get<double>();
    }

    SimTime micros(const std::string& key, SimTime fallback)
    {
        if (!has(key)) return fallback;
        const double us = number(key, 0);
        if (us < 0) fail(key, "must not be negative");
        return SimTime::from_us_double(us);
    }

    bool flag(const std::string& key, bool fallback)
    {
        if (!has(key)) return fallback;
        if (!j_.at(key).is_boolean()) fail(key, "expected true or false");
        return j_.at(key).get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback)
    {
        if (!has(key)) return fallback;
        if (!j_.at(key).is_string()) fail(key, "expected a string");
        return j_.at(key).get<std::string>();
    }

    std::string required_text(const std::string& key)
    {
        if (!has(key)) fail(key, "missing");
        return text(key, "");
    }

    template <typename F>
    auto named(const std::string& key, const std::string& fallback, F&& by_name)
    {
        const std::string name = text(key, fallback);
        try {
            return by_name(name);
        } catch (const Error&) {
            fail(key, "unknown value '" + name + "'");
        }
    }

    const json& array(const std::string& key)
    {
        static const json empty = json::array();
        if (!has(key)) return empty;
        if (!j_.at(key).is_array()) fail(key, "expected an array");
        return j_.at(key);
    }

    Fields object(const std::string& key)
    {
        static const json empty = json::object();
        return Fields(has(key) ? j_.at(key) : empty, field(key), origin_);
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (!used_.contains(k)) fail(k, "unknown field");
    }

    [[nodiscard]] const std::string& origin() const { return origin_; }
    [[nodiscard]] const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
    std::string origin_;
    std::set<std::string> used_;
};

std::vector<std::string> texts(Fields& f, const std::string& key, std::vector<std::string> fallback)
{
    if (!f.has(key)) return fallback;
    const json& a = f.array(key);
    if (a.empty()) f.fail(key, "must not be empty");
    std::vector<std::string> out;
    for (const auto& v : a) {
        if (!v.is_string()) f.fail(key, "expected an array of strings");
        if (std::find(out.begin(), out.end(), v.get<std::string>()) != out.end()) f.fail(key, "duplicate entry");
        out.push_back(v.get<std::string>());
    }
    return out;
}

// ------------------------------------------------------------------ plan

struct ShufflePlan {
    TaskGraph graph;
    std::vector<TransferMode> modes;
    ShuffleConfig config;
};

struct StragglerPlan {
    StragglerConfig config;
    std::vector<StragglerPolicy> policies;
};

struct PaxosRun {
    std::string label;
    PaxosConfig config;
    std::vector<PaxosFault> faults;
    double jitter = 0.0;
};

struct PaxosPlan {
    PaxosConfig base;
    std::vector<RecoveryStrategy> strategies;
    std::vector<PaxosFault> faults;
    bool randomize = false;
    std::optional<bool> fast_handlers;
    SimTime limit = SimTime::from_us(40000);
    SimTime notice_margin = SimTime::from_us(100);
};

struct PrimitivePlan {
    PrimitiveScriptConfig config;
};

struct HeapPlan {
    HeapSweepConfig config;
};

struct WorldOverrides {
    std::optional<unsigned> compute_elements;
    std::optional<unsigned> memory_elements;
    std::optional<unsigned> frames_per_element;
    std::optional<FailureMode> memory_failure_mode;
    std::optional<SimTime> monitor_interval;
    std::optional<unsigned> miss_threshold;
    std::optional<bool> monitor_enabled;

    void apply(WorldConfig& wc, const std::string& origin) const
    {
        if (compute_elements) {
            if (*compute_elements < wc.rack.compute_elements)
                invalid(origin, "rack.compute_elements",
                        "the workload needs at least " + std::to_string(wc.rack.compute_elements));
            wc.rack.compute_elements = *compute_elements;
        }
        const std::uint64_t frames = std::uint64_t{wc.rack.memory_elements} * wc.rack.frames_per_element;
        if (memory_elements) wc.rack.memory_elements = *memory_elements;
        if (frames_per_element) wc.rack.frames_per_element = *frames_per_element;
        if (std::uint64_t{wc.rack.memory_elements} * wc.rack.frames_per_element < frames)
            invalid(origin, "rack.frames_per_element", "the workload needs " + std::to_string(frames) + " frames per rack");
        if (memory_failure_mode) wc.rack.memory_failure_mode = *memory_failure_mode;
        if (monitor_interval) wc.monitor.interval = *monitor_interval;
        if (miss_threshold) wc.monitor.miss_threshold = *miss_threshold;
        if (monitor_enabled) wc.monitor.enabled = *monitor_enabled;
    }
};

struct Plan {
    std::variant<ShufflePlan, StragglerPlan, PaxosPlan, PrimitivePlan, HeapPlan> workload;
    WorldOverrides world;
    /// metric name -> expected value
    std::map<std::string, double> expect;
};

LatencyProfile parse_profile(const json& doc, const std::string& origin)
{
    if (doc.is_string()) {
        try {
            return LatencyProfile::by_name(doc.get<std::string>());
        } catch (const Error&) {
            invalid(origin, "profile", "unknown profile '" + doc.get<std::string>() + "'");
        }
    }
    Fields f(doc, "profile", origin);
    LatencyProfile p = f.named("base", "current", [](const std::string& n) { return LatencyProfile::by_name(n); });
    p.name = f.text("name", "custom");
    p.set_rtt(LinkClass::RackMmu, f.micros("rack_mmu_rtt_us", p.rtt(LinkClass::RackMmu)));
    p.set_rtt(LinkClass::IntraRackTor, f.micros("intra_rack_rtt_us", p.rtt(LinkClass::IntraRackTor)));
    p.set_rtt(LinkClass::CrossRackTor, f.micros("cross_rack_rtt_us", p.rtt(LinkClass::CrossRackTor)));
    p.jitter_fraction = f.number("jitter", 0.0);
    if (p.jitter_fraction < 0 || p.jitter_fraction > 1) f.fail("jitter", "must be in [0, 1]");
    for (auto l : {LinkClass::RackMmu, LinkClass::IntraRackTor, LinkClass::CrossRackTor})
        if (p.rtt(l) == SimTime{}) f.fail(std::string(to_string(l)), "round trip must be positive");
    f.finish();
    return p;
}

PaxosFault::Kind paxos_fault_kind(const std::string& name)
{
    if (name == "crash-compute") return PaxosFault::Kind::CrashCompute;
    if (name == "fail-memory") return PaxosFault::Kind::FailMemory;
    if (name == "crash-both") return PaxosFault::Kind::CrashBoth;
    if (name == "fail-monitor") return PaxosFault::Kind::FailMonitor;
    if (name == "revive") return PaxosFault::Kind::Revive;
    throw Error(Errc::config_invalid);
}

std::string_view paxos_fault_name(PaxosFault::Kind k)
{
    switch (k) {
    case PaxosFault::Kind::CrashCompute: return "crash-compute";
    case PaxosFault::Kind::FailMemory: return "fail-memory";
    case PaxosFault::Kind::CrashBoth: return "crash-both";
    case PaxosFault::Kind::FailMonitor: return "fail-monitor";
    case PaxosFault::Kind::Revive: return "revive";
    }
    return "?";
}

MmuDefect mmu_defect_by_name(const std::string& name)
{
    if (name == "none") return MmuDefect::None;
    if (name == "keep-source-mapping") return MmuDefect::KeepSourceMapping;
    if (name == "set-before-clear") return MmuDefect::SetBeforeClear;
    throw Error(Errc::config_invalid);
}

HeapDefect heap_defect_by_name(const std::string& name)
{
    if (name == "none") return HeapDefect::None;
    if (name == "data-before-log") return HeapDefect::DataBeforeLog;
    throw Error(Errc::config_invalid);
}

Plan make_plan(const ScenarioConfig& sc)
{
    const std::string origin = sc.origin.empty() ? sc.name : sc.origin;
    Fields root(sc.raw, "", origin);
    for (const char* k : {"name", "description", "seed", "profile"}) root.has(k);
    Plan plan;

    Fields rack = root.object("rack");
    if (rack.has("compute_elements")) plan.world.compute_elements = rack.count("compute_elements", 1);
    if (rack.has("memory_elements")) plan.world.memory_elements = rack.count("memory_elements", 1);
    if (rack.has("frames_per_element")) plan.world.frames_per_element = rack.count("frames_per_element", 1);
    if (rack.has("memory_failure_mode"))
        plan.world.memory_failure_mode = rack.named("memory_failure_mode", "silent", [](const std::string& n) {
            if (n == "silent") return FailureMode::Silent;
            if (n == "explicit") return FailureMode::Explicit;
            throw Error(Errc::config_invalid);
        });
    rack.finish();

    Fields mon = root.object("monitor");
    if (mon.has("interval_us")) plan.world.monitor_interval = mon.micros("interval_us", {});
    if (mon.has("miss_threshold")) plan.world.miss_threshold = mon.count("miss_threshold", 3);
    if (mon.has("enabled")) plan.world.monitor_enabled = mon.flag("enabled", true);
    mon.finish();

    Fields ex = root.object("expect");
    const json expected = sc.raw.value("expect", json::object());
    if (expected.is_object())
        for (const auto& [k, v] : expected.items()) plan.expect[k] = ex.number(k, 0);
    ex.finish();

    Fields w = root.object("workload");
    const std::string kind = w.required_text("kind");
    const json& failures = root.array("failures");
    auto each_failure = [&](auto&& body) {
        for (std::size_t i = 0; i < failures.size(); ++i) {
            Fields f(failures[i], "failures[" + std::to_string(i) + "]", origin);
            body(f);
            f.finish();
        }
    };

    if (kind == "shuffle") {
        ShufflePlan p;
        p.graph = TaskGraph::shuffle(w.count("mappers", 4, 1, 64), w.count("reducers", 4, 1, 64),
                                     w.u64("partition_bytes", kPageSize));
        if (p.graph.edges.front().bytes == 0) w.fail("partition_bytes", "must be positive");
        for (const auto& m : texts(w, "modes", {"transparent", "grant"})) {
            try {
                p.modes.push_back(transfer_mode_by_name(m));
            } catch (const Error&) {
                w.fail("modes", "unknown mode '" + m + "'");
            }
        }
        if (w.has("stage_time_us")) {
            p.config.stage_time.clear();
            const json& st = w.array("stage_time_us");
            if (st.empty()) w.fail("stage_time_us", "must not be empty");
            for (const auto& v : st) {
                if (!v.is_number() || v.get<double>() < 0) w.fail("stage_time_us", "expected non-negative numbers");
                p.config.stage_time.push_back(SimTime::from_us_double(v.get<double>()));
            }
        }
        p.config.limit = w.micros("limit_us", p.config.limit);
        each_failure([&](Fields& f) {
            ShuffleFault fault;
            fault.kind = f.named("kind", "", [](const std::string& n) {
                if (n == "crash-task") return ShuffleFault::Kind::CrashTask;
                if (n == "fail-memory") return ShuffleFault::Kind::FailMemory;
                throw Error(Errc::config_invalid);
            });
            fault.target = static_cast<std::uint32_t>(f.u64("target", 0));
            fault.at = f.micros("at_us", {});
            p.config.faults.push_back(fault);
        });
        plan.workload = std::move(p);
    } else if (kind == "straggler") {
        StragglerPlan p;
        auto& c = p.config;
        c.tasks = w.count("tasks", c.tasks, 1, 64);
        c.units = w.count("units", c.units, 1, 4096);
        c.unit_time = w.micros("unit_time_us", c.unit_time);
        c.spread = w.number("spread", c.spread);
        c.straggler = static_cast<int>(w.number("straggler", c.straggler));
        if (c.straggler >= static_cast<int>(c.tasks)) w.fail("straggler", "no such task");
        c.slowdown = w.number("slowdown", c.slowdown);
        c.slack = w.number("slack", c.slack);
        if (c.slowdown < 1 || c.slack < 1 || c.spread < 0) w.fail("slowdown", "slowdown and slack must be >= 1");
        c.failure_notices = w.flag("failure_notices", c.failure_notices);
        c.limit = w.micros("limit_us", c.limit);
        for (const auto& n : texts(w, "policies", {"steal", "restart"})) {
            try {
                p.policies.push_back(straggler_policy_by_name(n));
            } catch (const Error&) {
                w.fail("policies", "unknown policy '" + n + "'");
            }
        }
        each_failure([&](Fields& f) {
            if (f.text("kind", "") != "crash-straggler") f.fail("kind", "only crash-straggler applies here");
            if (c.crash_at) f.fail("at_us", "only one crash per run");
            c.crash_at = f.micros("at_us", {});
        });
        plan.workload = std::move(p);
    } else if (kind == "paxos") {
        PaxosPlan p;
        p.base.replicas = w.count("replicas", 3, 3, 7);
        p.base.commands = w.count("commands", 12, 1, 64);
        p.base.failure_groups = w.flag("failure_groups", true);
        p.base.suspicion_timeout = w.micros("suspicion_timeout_us", {});
        p.base.heartbeat_interval = w.micros("heartbeat_interval_us", {});
        p.base.arena_pages = w.u64("arena_pages", p.base.arena_pages);
        if (w.has("fast_handlers")) p.fast_handlers = w.flag("fast_handlers", true);
        p.randomize = w.flag("randomize", false);
        p.limit = w.micros("limit_us", p.limit);
        p.notice_margin = w.micros("notice_margin_us", p.notice_margin);
        for (const auto& n : texts(w, "strategies", {"reincarnate"})) {
            try {
                p.strategies.push_back(recovery_strategy_by_name(n));
            } catch (const Error&) {
                w.fail("strategies", "unknown strategy '" + n + "'");
            }
        }
        each_failure([&](Fields& f) {
            PaxosFault fault;
            fault.kind = f.named("kind", "", paxos_fault_kind);
            fault.member = static_cast<MemberId>(f.u64("member", 1));
            if (fault.member < 1 || fault.member > p.base.replicas) f.fail("member", "no such member");
            fault.at = f.micros("at_us", {});
            p.faults.push_back(fault);
        });
        if (p.randomize && !p.faults.empty()) invalid(origin, "failures", "randomized runs draw their own failures");
        if (p.randomize && w.has("strategies")) w.fail("strategies", "randomized runs draw their own strategy");
        plan.workload = std::move(p);
    } else if (kind == "primitive-script") {
        PrimitivePlan p;
        p.config.processes = w.count("processes", 4, 2, 64);
        p.config.pages = w.count("pages", 32, 1, 4096);
        p.config.ops = w.count("ops", 48, 0, 100000);
        p.config.failures = w.flag("failures", true);
        p.config.defect = w.named("defect", "none", mmu_defect_by_name);
        if (!failures.empty()) invalid(origin, "failures", "scripts draw their own failures; use workload.failures");
        plan.workload = std::move(p);
    } else if (kind == "heap") {
        HeapPlan p;
        p.config.transactions = w.count("transactions", 50, 0, 100000);
        p.config.arena_pages = w.count("arena_pages", 8, 4, 1024);
        p.config.log_pages = w.count("log_pages", 2, 1, 1024);
        p.config.defect = w.named("defect", "none", heap_defect_by_name);
        if (!failures.empty()) invalid(origin, "failures", "the sweep crashes at every write; no schedule applies");
        plan.workload = std::move(p);
    } else {
        w.fail("kind", "unknown workload '" + kind + "'");
    }
    w.finish();
    root.finish();
    return plan;
}

// ------------------------------------------------------------------ runs

std::string begin_record(const std::string& label)
{
    return Trace::to_json(TraceEntry{SimTime{}, "scenario", "run_begin", {{"run", label}}}).dump() + "\n";
}

struct Context {
    const ScenarioConfig& sc;
    const Plan& plan;
    LatencyProfile profile;
    std::uint64_t seed;
    bool capture;
    RunReport& report;

    void keep_trace(const std::string& label, const World& w)
    {
        if (!capture) return;
        report.trace += begin_record(label);
        report.trace += w.sim().trace().to_jsonl();
    }
};

double us(SimTime t) { return t.us(); }

void run_shuffle(Context& cx, const ShufflePlan& p)
{
    std::map<TransferMode, JobMetrics> got;
    for (auto mode : p.modes) {
        ShuffleConfig c = p.config;
        c.mode = mode;
        c.seed = cx.seed;
        WorldConfig wc = shuffle_world_config(p.graph, cx.profile, cx.seed);
        cx.plan.world.apply(wc, cx.sc.origin);
        World w(wc);
        got[mode] = run_job(w, p.graph, c);
        cx.keep_trace(std::string(to_string(mode)), w);
    }
    json per_mode = json::object();
    bool completed = true;
    bool intact = true;
    std::string why;
    for (const auto& [mode, m] : got) {
        SimTime lo = SimTime::max(), hi{};
        for (const auto& e : m.edges) {
            lo = std::min(lo, e.duration());
            hi = std::max(hi, e.duration());
            if (m.completed && e.producer_checksum != e.consumer_checksum) intact = false;
        }
        if (!m.completed) {
            completed = false;
            why = std::string(to_string(mode)) + ": " + m.cause;
        }
        json j = m.to_json();
        j["partition_transfer_us"] = us(hi);
        j["partition_transfer_min_us"] = m.edges.empty() ? 0.0 : us(lo);
        per_mode[std::string(to_string(mode))] = j;
    }
    cx.report.metrics["modes"] = per_mode;
    cx.report.check("job-completed", completed, why);
    cx.report.check("partition-integrity", intact, intact ? "" : "a consumer read different bytes than produced");
    if (got.contains(TransferMode::Grant)) {
        const auto bytes = got[TransferMode::Grant].tor_bytes;
        cx.report.check("grant-zero-tor-bytes", bytes == 0, std::to_string(bytes) + " bytes over the ToR");
    }
    if (got.contains(TransferMode::Grant) && got.contains(TransferMode::Transparent)) {
        const double t = per_mode["transparent"]["partition_transfer_us"];
        const double k = per_mode["grant"]["partition_transfer_us"];
        cx.report.metrics["speedup"] = k > 0 ? t / k : 0.0;
        cx.report.check("grant-faster", k < t);
    }
}

void run_straggler(Context& cx, const StragglerPlan& p)
{
    std::map<StragglerPolicy, StragglerMetrics> got;
    for (auto policy : p.policies) {
        StragglerConfig c = p.config;
        c.policy = policy;
        c.seed = cx.seed;
        WorldConfig wc = straggler_world_config(c, cx.profile);
        cx.plan.world.apply(wc, cx.sc.origin);
        World w(wc);
        got[policy] = run_straggler_job(w, c);
        cx.keep_trace(std::string(to_string(policy)), w);
    }
    json per = json::object();
    bool completed = true, results = true;
    std::string why;
    for (const auto& [policy, m] : got) {
        per[std::string(to_string(policy))] = m.to_json();
        if (!m.completed) {
            completed = false;
            why = std::string(to_string(policy)) + ": " + m.cause;
        }
        results = results && m.results_ok;
    }
    cx.report.metrics["policies"] = per;
    cx.report.check("job-completed", completed, why);
    cx.report.check("results-match-oracle", results);
    if (got.contains(StragglerPolicy::Steal)) {
        const auto& s = got[StragglerPolicy::Steal];
        cx.report.check("steal-within-inflight", s.reexecuted_units <= s.inflight_at_takeover,
                        std::to_string(s.reexecuted_units) + " re-executed, " + std::to_string(s.inflight_at_takeover) +
                            " in flight");
    }
    if (got.contains(StragglerPolicy::Steal) && got.contains(StragglerPolicy::Restart)) {
        const auto s = got[StragglerPolicy::Steal].reexecuted_units;
        const auto r = got[StragglerPolicy::Restart].reexecuted_units;
        cx.report.metrics["reexecuted_steal"] = s;
        cx.report.metrics["reexecuted_restart"] = r;
        cx.report.check("steal-fewer-than-restart", s < r, std::to_string(s) + " vs " + std::to_string(r));
    }
}

bool is_fence_violation(const std::string& v) { return v.rfind("write from fenced", 0) == 0; }

json fault_json(const PaxosFault& f)
{
    return {{"kind", paxos_fault_name(f.kind)}, {"member", f.member}, {"at_us", us(f.at)}};
}

void run_paxos(Context& cx, const PaxosPlan& p)
{
    std::vector<PaxosRun> runs;
    if (p.randomize) {
        const PaxosFuzzCase c = make_paxos_fuzz_case(cx.seed);
        runs.push_back({std::string(to_string(c.config.strategy)), c.config, c.faults, c.jitter});
    } else {
        for (auto s : p.strategies) {
            PaxosRun r{std::string(to_string(s)), p.base, p.faults, 0.0};
            r.config.strategy = s;
            r.config.fast_handlers = p.fast_handlers.value_or(s == RecoveryStrategy::Reincarnate);
            runs.push_back(std::move(r));
        }
    }

    const bool compute_fault = std::any_of(p.faults.begin(), p.faults.end(), [](const auto& f) {
        return f.kind == PaxosFault::Kind::CrashCompute || f.kind == PaxosFault::Kind::CrashBoth;
    });
    const bool monitor_fault = std::any_of(p.faults.begin(), p.faults.end(),
                                           [](const auto& f) { return f.kind == PaxosFault::Kind::FailMonitor; });
    const bool memory_fault = std::any_of(p.faults.begin(), p.faults.end(),
                                          [](const auto& f) { return f.kind == PaxosFault::Kind::FailMemory; });

    std::vector<std::string> agreement, fencing;
    std::map<RecoveryStrategy, PaxosMetrics> by_strategy;
    bool finished = true;
    std::string unfinished;
    std::optional<std::pair<bool, std::string>> detection, notice;
    json per = json::object();
    for (const auto& r : runs) {
        LatencyProfile profile = cx.profile;
        profile.jitter_fraction = std::max(profile.jitter_fraction, r.jitter);
        WorldConfig wc = PaxosCluster::world_config(r.config, profile, cx.seed);
        cx.plan.world.apply(wc, cx.sc.origin);
        World w(wc);
        PaxosCluster cluster(w, r.config);
        cluster.start();
        for (const auto& f : r.faults) cluster.inject(f);
        const PaxosMetrics m = cluster.run(p.limit);
        cx.keep_trace(r.label, w);

        for (const auto& v : m.violations) (is_fence_violation(v) ? fencing : agreement).push_back(r.label + ": " + v);
        if (!cluster.finished()) {
            finished = false;
            unfinished = r.label;
        }
        const SimTime timeout = cluster.suspicion_timeout();
        json j{{"finished", cluster.finished()},
               {"client_chosen", m.client_chosen},
               {"epoch_before", m.epoch_before},
               {"epoch_after", m.epoch_after},
               {"snapshot_bytes", m.snapshot_bytes},
               {"reincarnations", m.reincarnations},
               {"transfers", m.transfers},
               {"violations", m.violations.size()},
               {"suspicion_timeout_us", us(timeout)},
               {"end_us", us(w.sim().now())}};
        if (auto t = m.time_to_next_chosen()) j["time_to_next_chosen_us"] = us(*t);
        if (m.full_health_at && m.first_fault_at) j["time_to_full_health_us"] = us(*m.full_health_at - *m.first_fault_at);
        if (p.randomize) {
            j["jitter"] = r.jitter;
            j["faults"] = json::array();
            for (const auto& f : r.faults) j["faults"].push_back(fault_json(f));
        }

        if (compute_fault && !monitor_fault && m.first_fault_at) {
            std::optional<SimTime> detected;
            for (const auto* e : w.sim().trace().of_kind("detect"))
                if (e->t >= *m.first_fault_at) {
                    detected = e->t - *m.first_fault_at;
                    break;
                }
            if (detected) j["detection_us"] = us(*detected);
            const bool ok = detected && *detected < timeout;
            if (!detection || detection->first) {
                detection = {ok, r.label + ": " + (detected ? detected->str() : std::string("never")) + " against " +
                                     timeout.str()};
            }
        }
        if (memory_fault) {
            bool ok = false;
            std::string d = r.label + ": no notice";
            if (m.memory_access_started_at && m.memory_notice_at) {
                const SimTime took = *m.memory_notice_at - *m.memory_access_started_at;
                j["notice_us"] = us(took);
                j["notice_margin_us"] = us(timeout - took);
                ok = timeout - took > p.notice_margin;
                d = r.label + ": notice after " + took.str() + ", timeout " + timeout.str();
            }
            if (!notice || notice->first) notice = {ok, d};
        }
        per[r.label] = j;
        if (!p.randomize) by_strategy[r.config.strategy] = m;
    }
    cx.report.metrics["runs"] = per;
    cx.report.check("agreement", agreement.empty(), agreement.empty() ? "" : agreement.front());
    cx.report.check("fencing", fencing.empty(), fencing.empty() ? "" : fencing.front());
    if (!p.randomize) cx.report.check("finished", finished, unfinished.empty() ? "" : unfinished + " did not finish");
    if (detection) cx.report.check("detection-before-timeout", detection->first, detection->second);
    if (notice) cx.report.check("notice-before-timeout", notice->first, notice->second);

    if (by_strategy.contains(RecoveryStrategy::Reincarnate) && by_strategy.contains(RecoveryStrategy::Transfer) &&
        !p.faults.empty()) {
        const auto& ri = by_strategy[RecoveryStrategy::Reincarnate];
        const auto& tr = by_strategy[RecoveryStrategy::Transfer];
        const auto a = ri.time_to_next_chosen();
        const auto b = tr.time_to_next_chosen();
        cx.report.check("reincarnation-faster", a && b && *a < *b,
                        (a ? a->str() : std::string("none")) + " vs " + (b ? b->str() : std::string("none")));
        cx.report.check("reincarnation-no-state-transfer", ri.snapshot_bytes == 0,
                        std::to_string(ri.snapshot_bytes) + " bytes");
        cx.report.check("reincarnation-epoch-unchanged", ri.epoch_after == ri.epoch_before,
                        std::to_string(ri.epoch_before) + " -> " + std::to_string(ri.epoch_after));
    }
}

void run_primitives(Context& cx, const PrimitivePlan& p)
{
    PrimitiveScriptConfig c = p.config;
    c.profile = cx.profile;
    WorldConfig wc = primitive_world_config(c, cx.seed);
    cx.plan.world.apply(wc, cx.sc.origin);
    World w(wc);
    const auto r = run_primitive_script(w, c, cx.seed);
    cx.keep_trace("script", w);
    cx.report.metrics["attempted"] = r.attempted;
    cx.report.metrics["succeeded"] = r.succeeded;
    cx.report.metrics["violations"] = r.violations;
    for (auto prop : kPrimitiveProperties) {
        const std::string name(prop);
        std::string detail;
        for (const auto& d : r.details)
            if (d.rfind(name + ":", 0) == 0) {
                detail = d;
                break;
            }
        cx.report.check(name, r.violations.at(name) == 0, detail);
    }
}

void run_heap(Context& cx, const HeapPlan& p)
{
    HeapSweepConfig c = p.config;
    c.seed = cx.seed;
    const auto r = heap_crash_sweep(c);
    cx.report.metrics["transactions"] = c.transactions;
    cx.report.metrics["crash_points"] = r.crash_points;
    cx.report.metrics["total_writes"] = r.total_writes;
    cx.report.metrics["violations"] = r.violations;
    if (cx.capture) {
        cx.report.trace += begin_record("sweep");
        for (const auto& pt : r.points)
            cx.report.trace += Trace::to_json(TraceEntry{SimTime{}, "heap", "crash_point",
                                                         {{"writes", pt.writes}, {"committed", pt.committed}, {"ok", pt.ok}}})
                                   .dump() +
                               "\n";
    }
    cx.report.check("committed-prefix-recovery", r.violations == 0, r.failures.empty() ? "" : r.failures.front());
}

const json* metric_at(const json& metrics, const std::string& dotted)
{
    const json* at = &metrics;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!at->is_object() || !at->contains(part)) return nullptr;
        at = &(*at)[part];
    }
    return at;
}

RunReport run_with(const ScenarioConfig& sc, const RunOverrides& o, bool capture)
{
    const Plan plan = make_plan(sc);
    RunReport report;
    report.scenario = sc.name;
    report.workload = sc.workload;
    report.seed = o.seed.value_or(sc.seed);
    LatencyProfile profile = sc.profile;
    if (o.profile) {
        try {
            profile = LatencyProfile::by_name(*o.profile);
        } catch (const Error&) {
            invalid(sc.name, "--profile", "unknown profile '" + *o.profile + "'");
        }
    }
    report.profile = profile.name;
    Context cx{sc, plan, profile, report.seed, capture || o.trace_out.has_value(), report};
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, ShufflePlan>) run_shuffle(cx, p);
            else if constexpr (std::is_same_v<T, StragglerPlan>) run_straggler(cx, p);
            else if constexpr (std::is_same_v<T, PaxosPlan>) run_paxos(cx, p);
            else if constexpr (std::is_same_v<T, PrimitivePlan>) run_primitives(cx, p);
            else run_heap(cx, p);
        },
        plan.workload);

    for (const auto& [name, want] : plan.expect) {
        const json* got = metric_at(report.metrics, name);
        const bool ok = got && got->is_number() && got->get<double>() == want;
        std::ostringstream d;
        d << name << " = " << (got ? got->dump() : std::string("missing")) << ", expected " << want;
        report.check("expect:" + name, ok, d.str());
    }

    if (o.trace_out) {
        std::ofstream os(*o.trace_out, std::ios::binary | std::ios::trunc);
        if (!os) throw Error(Errc::config_invalid, "cannot write trace file " + o.trace_out->string());
        os << report.trace;
        report.trace_path = *o.trace_out;
    }
    return report;
}

}  // namespace

// ---------------------------------------------------------------- config

ScenarioConfig ScenarioConfig::from_json(const json& doc, const std::string& origin)
{
    if (!doc.is_object()) invalid(origin, "<root>", "expected an object");
    ScenarioConfig sc;
    sc.raw = doc;
    sc.origin = origin;
    Fields f(doc, "", origin);
    sc.name = f.text("name", origin);
    sc.description = f.text("description", "");
    sc.seed = f.u64("seed", 1);
    if (f.has("profile")) sc.profile = parse_profile(doc.at("profile"), origin);
    if (!doc.contains("workload")) invalid(origin, "workload", "missing");
    if (!doc.at("workload").is_object()) invalid(origin, "workload", "expected an object");
    if (!doc.at("workload").contains("kind") || !doc.at("workload").at("kind").is_string())
        invalid(origin, "workload.kind", "missing");
    sc.workload = doc.at("workload").at("kind").get<std::string>();
    (void)make_plan(sc);
    return sc;
}

ScenarioConfig ScenarioConfig::parse(const std::string& text, const std::string& origin)
{
    json doc;
    try {
        doc = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        // count lines up to the failing byte
        const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n');
        const auto nl = text.rfind('\n', at == 0 ? 0 : at - 1);
        const auto column = at - (nl == std::string::npos ? 0 : nl + 1) + 1;
        throw Error(Errc::config_invalid, origin + ":" + std::to_string(line) + ":" + std::to_string(column) +
                                              ": syntax error");
    }
    return from_json(doc, origin);
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::config_invalid, path.string() + ": cannot open");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
}

// ---------------------------------------------------------------- reports

void RunReport::check(const std::string& property, bool passed, const std::string& detail)
{
    for (auto& c : checks) {
        if (c.property != property) continue;
        if (c.passed && !passed) {
            c.passed = false;
            c.detail = detail;
        }
        return;
    }
    checks.push_back({property, passed, detail});
}

bool RunReport::ok() const
{
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const CheckResult* RunReport::find(const std::string& property) const
{
    for (const auto& c : checks)
        if (c.property == property) return &c;
    return nullptr;
}

json RunReport::to_json() const
{
    json cs = json::array();
    for (const auto& c : checks) {
        json j{{"property", c.property}, {"passed", c.passed}};
        if (!c.detail.empty()) j["detail"] = c.detail;
        cs.push_back(j);
    }
    json j{{"scenario", scenario}, {"workload", workload}, {"seed", seed}, {"profile", profile},
           {"metrics", metrics},   {"checks", cs},         {"ok", ok()}};
    if (trace_path) j["trace"] = trace_path->string();
    return j;
}

std::string RunReport::to_text() const
{
    std::ostringstream os;
    os << "scenario " << scenario << " (" << workload << "), seed " << seed << ", profile " << profile << "\n";
    for (const auto& [k, v] : metrics.items()) os << "  " << k << ": " << v.dump() << "\n";
    for (const auto& c : checks) {
        os << "  [" << (c.passed ? "pass" : "FAIL") << "] " << c.property;
        if (!c.detail.empty()) os << ": " << c.detail;
        os << "\n";
    }
    if (trace_path) os << "  trace: " << trace_path->string() << "\n";
    os << (ok() ? "ok" : "VIOLATION") << "\n";
    return os.str();
}

json FuzzReport::to_json() const
{
    json f = json::object();
    for (const auto& [seed, what] : failures) f[std::to_string(seed)] = what;
    return {{"scenario", scenario}, {"first_seed", first_seed}, {"runs", runs}, {"failed", failed},
            {"failures", f},        {"totals", totals},         {"ok", ok()}};
}

std::string FuzzReport::to_text() const
{
    std::ostringstream os;
    os << "fuzz " << scenario << ": " << runs << " seeds from " << first_seed << "\n";
    for (const auto& [prop, n] : failed) os << "  " << prop << ": " << n << " failing runs\n";
    for (const auto& [seed, what] : failures) os << "  seed " << seed << ": " << what << "\n";
    os << (ok() ? "ok" : "VIOLATION") << "\n";
    return os.str();
}

RunReport run_scenario(const ScenarioConfig& config, const RunOverrides& overrides)
{
    return run_with(config, overrides, true);
}

FuzzReport fuzz_scenario(const ScenarioConfig& config, std::size_t n_seeds, const RunOverrides& overrides)
{
    FuzzReport out;
    out.scenario = config.name;
    out.first_seed = overrides.seed.value_or(config.seed);
    (void)make_plan(config);
    RunOverrides o = overrides;
    o.trace_out.reset();
    std::map<std::string, std::size_t> passed;
    for (std::size_t i = 0; i < n_seeds; ++i) {
        o.seed = out.first_seed + i;
        const RunReport r = run_with(config, o, false);
        ++out.runs;
        for (const auto& c : r.checks) {
            out.failed.try_emplace(c.property, 0);
            if (c.passed) {
                ++passed[c.property];
                continue;
            }
            ++out.failed[c.property];
            out.failures.try_emplace(*o.seed, c.property + (c.detail.empty() ? "" : ": " + c.detail));
        }
    }
    out.totals["passed"] = passed;
    return out;
}

RunReport crash_sweep(const ScenarioConfig& config, const RunOverrides& overrides)
{
    if (config.workload != "heap")
        invalid(config.name, "workload.kind", "crash-sweep needs a heap workload, not '" + config.workload + "'");
    return run_scenario(config, overrides);
}

std::filesystem::path bundled_scenario_dir()
{
    if (const char* env = std::getenv("DDC_SCENARIO_DIR")) return env;
    return DDC_SCENARIO_DIR;
}

std::vector<std::string> bundled_scenarios()
{
    std::vector<std::string> out;
    std::error_code ec;
    for (const auto& e : std::filesystem::directory_iterator(bundled_scenario_dir(), ec))
        if (e.path().extension() == ".json") out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::filesystem::path resolve_scenario(const std::string& name_or_path)
{
    const std::filesystem::path p(name_or_path);
    if (std::filesystem::is_regular_file(p)) return p;
    const auto bundled = bundled_scenario_dir() / (name_or_path + ".json");
    if (std::filesystem::is_regular_file(bundled)) return bundled;
    throw Error(Errc::config_invalid, name_or_path + ": no such scenario file or bundled scenario");
}

}  // namespace ddc
