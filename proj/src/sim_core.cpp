#include "ddc/error.hpp"
#include "ddc/latency.hpp"
#include "ddc/sim_time.hpp"
#include "ddc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ddc {

namespace {

class DdcCategory final : public std::error_category {
public:
    [[nodiscard]] const char* name() const noexcept override { return "ddc"; }
    [[nodiscard]] std::string message(int ev) const override
    {
        switch (static_cast<Errc>(ev)) {
        case Errc::ok: return "ok";
        case Errc::unknown_target: return "unknown-target";
        case Errc::halted: return "simulation-halted";
        case Errc::causality: return "event-in-the-past";
        case Errc::unknown_process: return "unknown-process";
        case Errc::out_of_frames: return "out-of-frames";
        case Errc::no_reachable_element: return "no-reachable-element";
        case Errc::unmapped_address: return "unmapped-address";
        case Errc::permission_absent: return "permission-absent";
        case Errc::unmapped_page: return "unmapped-page";
        case Errc::self_grant: return "self-grant";
        case Errc::dst_process_dead: return "dst-process-dead";
        case Errc::not_in_group: return "not-in-group";
        case Errc::page_steal_disallowed: return "page-steal-disallowed";
        case Errc::element_unreachable: return "element-unreachable";
        case Errc::process_not_running: return "process-not-running";
        case Errc::unknown_member: return "unknown-member";
        case Errc::no_group_registered: return "no-group-registered";
        case Errc::memory_fault: return "memory-fault";
        case Errc::corrupt_arena: return "corrupt-arena";
        case Errc::unknown_root: return "unknown-root";
        case Errc::log_full: return "log-full";
        case Errc::arena_full: return "arena-full";
        case Errc::root_map_full: return "root-map-full";
        case Errc::name_too_long: return "name-too-long";
        case Errc::tx_in_progress: return "tx-in-progress";
        case Errc::not_in_configuration: return "not-in-configuration";
        case Errc::preempted: return "preempted";
        case Errc::no_majority: return "no-majority";
        case Errc::memory_also_failed: return "memory-also-failed";
        case Errc::invalid_graph: return "invalid-graph";
        case Errc::job_failed: return "job-failed";
        case Errc::config_invalid: return "config-invalid";
        }
        return "unknown";
    }
};

}  // namespace

const std::error_category& ddc_category() noexcept
{
    static const DdcCategory category;
    return category;
}

// ---------------------------------------------------------------- SimTime

SimTime SimTime::from_us_double(double us)
{
    return SimTime{static_cast<rep>(std::llround(us * 1000.0))};
}

std::string SimTime::str() const
{
    char buf[48];
    const rep whole = ns_ / 1000;
    const rep frac = (ns_ < 0 ? -ns_ : ns_) % 1000;
    std::snprintf(buf, sizeof buf, "%lld.%03lldus", static_cast<long long>(whole), static_cast<long long>(frac));
    return buf;
}

// ---------------------------------------------------------------- latency

std::string_view to_string(LinkClass link)
{
    switch (link) {
    case LinkClass::RackMmu: return "rack-mmu-interconnect";
    case LinkClass::IntraRackTor: return "intra-rack-tor";
    case LinkClass::CrossRackTor: return "cross-rack-tor";
    }
    return "?";
}

LatencyProfile LatencyProfile::current()
{
    LatencyProfile p;
    p.name = "current";
    p.set_rtt(LinkClass::RackMmu, SimTime::from_us(2));
    p.set_rtt(LinkClass::IntraRackTor, SimTime::from_us(2));
    p.set_rtt(LinkClass::CrossRackTor, SimTime::from_us(45));
    return p;
}

LatencyProfile LatencyProfile::future()
{
    LatencyProfile p;
    p.name = "future";
    p.set_rtt(LinkClass::RackMmu, SimTime::from_us(1));
    p.set_rtt(LinkClass::IntraRackTor, SimTime::from_us(1));
    p.set_rtt(LinkClass::CrossRackTor, SimTime::from_us(45));
    return p;
}

LatencyProfile LatencyProfile::cloud()
{
    LatencyProfile p;
    p.name = "cloud";
    p.set_rtt(LinkClass::RackMmu, SimTime::from_us(2));
    p.set_rtt(LinkClass::IntraRackTor, SimTime::from_us(45));
    p.set_rtt(LinkClass::CrossRackTor, SimTime::from_us(45));
    return p;
}

LatencyProfile LatencyProfile::by_name(std::string_view name)
{
    if (name == "current") return current();
    if (name == "future") return future();
    if (name == "cloud") return cloud();
    throw Error(Errc::config_invalid, "unknown latency profile '" + std::string(name) + "'");
}

// ---------------------------------------------------------------- trace

std::size_t Trace::count(std::string_view kind) const
{
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const TraceEntry& e) { return e.kind == kind; }));
}

std::vector<const TraceEntry*> Trace::of_kind(std::string_view kind) const
{
    std::vector<const TraceEntry*> out;
    for (const auto& e : entries_)
        if (e.kind == kind) out.push_back(&e);
    return out;
}

nlohmann::json Trace::to_json(const TraceEntry& entry)
{
    nlohmann::json j = entry.fields.is_object() ? entry.fields : nlohmann::json::object();
    j["t"] = entry.t.us();
    j["actor"] = entry.actor;
    j["kind"] = entry.kind;
    return j;
}

std::string Trace::to_jsonl() const
{
    std::string out;
    for (const auto& e : entries_) {
        out += to_json(e).dump();
        out += '\n';
    }
    return out;
}

void Trace::write_jsonl(const std::filesystem::path& path) const
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open trace file " + path.string());
    os << to_jsonl();
}

// ---------------------------------------------------------------- simulator

Simulator::Simulator(LatencyProfile profile, std::uint64_t seed)
    : profile_(std::move(profile)), seed_(seed), rng_(seed)
{
}

ActorId Simulator::add_actor(std::string name, std::function<bool()> accepting)
{
    actors_.push_back(Actor{std::move(name), std::move(accepting)});
    return static_cast<ActorId>(actors_.size() - 1);
}

const std::string& Simulator::actor_name(ActorId id) const
{
    if (!has_actor(id)) throw Error(Errc::unknown_target);
    return actors_[id].name;
}

SimTime Simulator::link_delay(LinkClass link)
{
    SimTime d = profile_.one_way(link);
    if (profile_.jitter_fraction > 0.0) {
        const auto max_extra = static_cast<std::uint64_t>(static_cast<double>(d.ns()) * profile_.jitter_fraction);
        d += SimTime::from_ns(static_cast<SimTime::rep>(uniform(0, max_extra)));
    }
    return d;
}

std::uint64_t Simulator::uniform(std::uint64_t lo, std::uint64_t hi)
{
    if (hi <= lo) return lo;
    const std::uint64_t span = hi - lo + 1;
    if (span == 0) return rng_();  // full 64-bit range
    return lo + rng_() % span;
}

double Simulator::uniform01()
{
    return static_cast<double>(rng_() >> 11) * (1.0 / 9007199254740992.0);
}

EventId Simulator::schedule(ActorId target, Delivery how, std::string kind, std::function<void()> handler,
                            nlohmann::json fields)
{
    SimTime delay{};
    switch (how.kind) {
    case Delivery::Kind::Immediate: break;
    case Delivery::Kind::Link: delay = link_delay(how.link); break;
    case Delivery::Kind::After: delay = how.delay; break;
    }
    if (how.kind == Delivery::Kind::Link) fields["link"] = std::string(to_string(how.link));
    return schedule_at(target, now_ + delay, std::move(kind), std::move(handler), std::move(fields));
}

EventId Simulator::schedule_at(ActorId target, SimTime at, std::string kind, std::function<void()> handler,
                               nlohmann::json fields)
{
    if (halted_) throw Error(Errc::halted);
    if (!has_actor(target)) throw Error(Errc::unknown_target);
    if (at < now_) throw Error(Errc::causality, "event scheduled before now");
    const EventId id = next_id_++;
    heap_.push_back(Pending{at, id, target, std::move(kind), std::move(handler), std::move(fields)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    return id;
}

bool Simulator::step(SimTime limit)
{
    if (heap_.empty() || heap_.front().fire_at > limit) return false;
    std::pop_heap(heap_.begin(), heap_.end(), Later{});
    Pending ev = std::move(heap_.back());
    heap_.pop_back();
    if (auto it = cancelled_.find(ev.id); it != cancelled_.end()) {
        cancelled_.erase(it);
        return true;
    }
    now_ = ev.fire_at;
    const Actor& actor = actors_[ev.target];
    if (actor.accepting && !actor.accepting()) {
        if (trace_events_) trace_.add({now_, actor.name, "drop", {{"event", ev.kind}, {"ev", ev.id}}});
        return true;
    }
    if (trace_events_) {
        nlohmann::json f = ev.fields.is_object() ? std::move(ev.fields) : nlohmann::json::object();
        f["ev"] = ev.id;
        trace_.add({now_, actor.name, std::move(ev.kind), std::move(f)});
    }
    ++delivered_;
    if (ev.handler) ev.handler();
    return true;
}

const Trace& Simulator::run_until(SimTime stop)
{
    while (!halted_ && step(stop)) {
    }
    if (!halted_ && now_ < stop) now_ = stop;
    return trace_;
}

const Trace& Simulator::run_until(const std::function<bool()>& stop, SimTime limit)
{
    while (!halted_ && !stop() && step(limit)) {
    }
    return trace_;
}

const Trace& Simulator::run()
{
    while (!halted_ && step(SimTime::max())) {
    }
    return trace_;
}

void Simulator::record(ActorId actor, std::string kind, nlohmann::json fields)
{
    record(actor_name(actor), std::move(kind), std::move(fields));
}

void Simulator::record(std::string actor, std::string kind, nlohmann::json fields)
{
    trace_.add({now_, std::move(actor), std::move(kind), std::move(fields)});
}

}  // namespace ddc
