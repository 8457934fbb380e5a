#pragma once

#include "ddc/latency.hpp"
#include "ddc/sim_time.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace ddc {

using ActorId = std::uint32_t;
using EventId = std::uint64_t;

struct TraceEntry {
    SimTime t;
    std::string actor;
    std::string kind;
    nlohmann::json fields = nlohmann::json::object();
};

/// Ordered record of everything that happened in a run. Serialized as
/// line-delimited JSON: one {"t","actor","kind",...fields} object per line.
class Trace {
public:
    void add(TraceEntry entry) { entries_.push_back(std::move(entry)); }

    [[nodiscard]] const std::vector<TraceEntry>& entries() const { return entries_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] bool empty() const { return entries_.empty(); }
    [[nodiscard]] std::size_t count(std::string_view kind) const;
    [[nodiscard]] std::vector<const TraceEntry*> of_kind(std::string_view kind) const;

    static nlohmann::json to_json(const TraceEntry& entry);
    [[nodiscard]] std::string to_jsonl() const;
    void write_jsonl(const std::filesystem::path& path) const;

private:
    std::vector<TraceEntry> entries_;
};

/// How an event reaches its target: now, after one link traversal
/// (RTT/2 plus jitter), or after an explicit delay (timers).
struct Delivery {
    enum class Kind : std::uint8_t { Immediate, Link, After };
    Kind kind = Kind::Immediate;
    LinkClass link = LinkClass::RackMmu;
    SimTime delay{};

    static Delivery immediate() { return {}; }
    static Delivery over(LinkClass l) { return {Kind::Link, l, {}}; }
    static Delivery after(SimTime d) { return {Kind::After, LinkClass::RackMmu, d}; }
};

/// Single-threaded discrete-event engine. Events are dequeued in
/// (fire time, ordinal) order; an event whose target actor is not accepting
/// (crashed element, failed memory) is dropped and recorded as such.
class Simulator {
public:
    Simulator(LatencyProfile profile, std::uint64_t seed);

    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    /// `accepting` is polled at delivery time; an empty function means always.
    ActorId add_actor(std::string name, std::function<bool()> accepting = {});
    [[nodiscard]] const std::string& actor_name(ActorId id) const;
    [[nodiscard]] bool has_actor(ActorId id) const { return id < actors_.size(); }

    /// Throws Error(unknown_target) or Error(halted).
    EventId schedule(ActorId target, Delivery how, std::string kind, std::function<void()> handler,
                     nlohmann::json fields = nlohmann::json::object());
    /// Throws Error(causality) when `at` is in the past.
    EventId schedule_at(ActorId target, SimTime at, std::string kind, std::function<void()> handler,
                        nlohmann::json fields = nlohmann::json::object());
    void cancel(EventId id) { cancelled_.insert(id); }

    /// Runs events with fire time <= stop, then advances the clock to stop.
    const Trace& run_until(SimTime stop);
    /// Runs until `stop()` holds after an event, the queue drains, or `limit`.
    const Trace& run_until(const std::function<bool()>& stop, SimTime limit = SimTime::max());
    /// Runs until the queue is empty.
    const Trace& run();

    void halt() { halted_ = true; }
    [[nodiscard]] bool halted() const { return halted_; }

    [[nodiscard]] SimTime now() const { return now_; }
    [[nodiscard]] const LatencyProfile& profile() const { return profile_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    /// Queued events, including cancelled ones not yet dequeued.
    [[nodiscard]] std::size_t pending() const { return heap_.size(); }

    /// One-way delay for a link, including jitter when configured.
    SimTime link_delay(LinkClass link);

    /// Inclusive uniform integer from the seeded RNG; portable across
    /// standard libraries (no std::uniform_int_distribution).
    std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi);
    double uniform01();

    void record(ActorId actor, std::string kind, nlohmann::json fields = nlohmann::json::object());
    void record(std::string actor, std::string kind, nlohmann::json fields = nlohmann::json::object());

    /// Event-level trace lines (one per dequeued event). Component records
    /// are always kept.
    void set_trace_events(bool on) { trace_events_ = on; }

    [[nodiscard]] const Trace& trace() const { return trace_; }
    [[nodiscard]] std::uint64_t delivered() const { return delivered_; }

private:
    struct Pending {
        SimTime fire_at;
        EventId id;
        ActorId target;
        std::string kind;
        std::function<void()> handler;
        nlohmann::json fields;
    };
    struct Later {
        bool operator()(const Pending& a, const Pending& b) const
        {
            if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
            return a.id > b.id;
        }
    };
    struct Actor {
        std::string name;
        std::function<bool()> accepting;
    };

    bool step(SimTime limit);

    LatencyProfile profile_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    SimTime now_{};
    EventId next_id_ = 0;
    bool halted_ = false;
    bool trace_events_ = true;
    std::uint64_t delivered_ = 0;
    std::vector<Actor> actors_;
    std::vector<Pending> heap_;  // min-heap by Later
    std::unordered_set<EventId> cancelled_;
    Trace trace_;
};

}  // namespace ddc
