#pragma once

#include "ddc/address.hpp"
#include "ddc/latency.hpp"
#include "ddc/sim_time.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ddc {

class World;
struct WorldConfig;

enum class TransferMode : std::uint8_t {
    Transparent,  ///< load, send over the ToR, store
    Grant,        ///< hand the pages over at the Rack MMU
};
std::string_view to_string(TransferMode m);
/// Throws Error(config_invalid).
TransferMode transfer_mode_by_name(std::string_view name);

/// Tasks in stages; every edge carries one partition from a task to a task
/// of a later stage.
struct TaskGraph {
    struct Edge {
        std::uint32_t producer = 0;
        std::uint32_t consumer = 0;
        std::uint64_t bytes = 0;  ///< payload; the partition is padded to whole pages
    };
    std::vector<std::vector<std::uint32_t>> stages;
    std::vector<Edge> edges;

    [[nodiscard]] std::size_t task_count() const;
    [[nodiscard]] std::size_t stage_of(std::uint32_t task) const;
    /// Throws Error(invalid_graph).
    void validate() const;

    /// `mappers` x `reducers`, one partition per pair.
    static TaskGraph shuffle(unsigned mappers, unsigned reducers, std::uint64_t partition_bytes);
};

struct Partition {
    std::vector<VirtualAddress> pages;
    std::uint64_t byte_len = 0;
    std::uint32_t checksum = 0;
};

std::uint64_t pages_for(std::uint64_t bytes);
std::uint32_t checksum(const std::vector<std::byte>& bytes);

struct ShuffleFault {
    enum class Kind : std::uint8_t { CrashTask, FailMemory };
    Kind kind = Kind::CrashTask;
    std::uint32_t target = 0;  ///< task index or memory element index
    SimTime at;
};

struct ShuffleConfig {
    TransferMode mode = TransferMode::Grant;
    std::uint64_t seed = 1;
    /// Compute time of a task, by stage; the last entry repeats.
    std::vector<SimTime> stage_time{SimTime::from_us(10)};
    std::vector<ShuffleFault> faults;
    SimTime limit = SimTime::from_us(100000);
};

struct EdgeMetrics {
    SimTime started;
    SimTime finished;
    unsigned rack_mmu_rtts = 0;
    unsigned tor_rtts = 0;
    std::uint32_t producer_checksum = 0;
    std::uint32_t consumer_checksum = 0;
    [[nodiscard]] SimTime duration() const { return finished - started; }
    [[nodiscard]] unsigned rtts() const { return rack_mmu_rtts + tor_rtts; }
};

struct JobMetrics {
    TransferMode mode = TransferMode::Grant;
    bool completed = false;
    std::string cause;  ///< why the job failed
    SimTime total_time;
    std::uint64_t tor_bytes = 0;
    unsigned rack_mmu_rtts = 0;
    unsigned tor_rtts = 0;
    std::size_t reexecuted_units = 0;
    std::vector<EdgeMetrics> edges;

    [[nodiscard]] unsigned rtts() const { return rack_mmu_rtts + tor_rtts; }
    [[nodiscard]] nlohmann::json to_json() const;
};

/// One rack, one compute element per task plus spares.
WorldConfig shuffle_world_config(const TaskGraph& graph, const LatencyProfile& profile, std::uint64_t seed);

/// Runs the job to completion or failure on `world`, which must have a
/// compute element per task in rack 0.
JobMetrics run_job(World& world, const TaskGraph& graph, const ShuffleConfig& config);
/// Convenience: builds the world from the profile.
JobMetrics run_job(const TaskGraph& graph, const ShuffleConfig& config,
                   const LatencyProfile& profile = LatencyProfile::current());

// ------------------------------------------------------------- stragglers

enum class StragglerPolicy : std::uint8_t {
    Steal,    ///< move the task's arena to a fresh process and resume
    Restart,  ///< start the task again from scratch
};
std::string_view to_string(StragglerPolicy p);
StragglerPolicy straggler_policy_by_name(std::string_view name);

struct StragglerConfig {
    unsigned tasks = 4;
    unsigned units = 16;
    SimTime unit_time = SimTime::from_us(40);
    /// Per-task speed varies uniformly in [1, 1 + spread].
    double spread = 0.1;
    /// Task that runs `slowdown` times slower; negative for none.
    int straggler = 0;
    double slowdown = 4.0;
    /// A task is a straggler once its elapsed time exceeds median x slack.
    double slack = 2.0;
    StragglerPolicy policy = StragglerPolicy::Steal;
    /// Crash the straggler's compute element at this time instead.
    std::optional<SimTime> crash_at;
    /// Register the orchestrator for monitor failure notices.
    bool failure_notices = true;
    std::uint64_t seed = 1;
    SimTime limit = SimTime::from_us(100000);
};

struct StragglerMetrics {
    bool completed = false;
    std::string cause;
    SimTime total_time;
    std::size_t units_total = 0;
    /// Unit executions started, on any process.
    std::size_t executions = 0;
    std::size_t reexecuted_units = 0;
    /// At takeover: units the original had committed and had in flight.
    std::size_t progress_at_takeover = 0;
    std::size_t inflight_at_takeover = 0;
    std::optional<SimTime> takeover_at;
    /// "straggler" (elapsed past median x slack) or "failure-notice".
    std::string detected_by;
    /// Every task's results match a failure-free oracle.
    bool results_ok = false;

    [[nodiscard]] nlohmann::json to_json() const;
};

WorldConfig straggler_world_config(const StragglerConfig& config, const LatencyProfile& profile);
StragglerMetrics run_straggler_job(World& world, const StragglerConfig& config);
StragglerMetrics run_straggler_job(const StragglerConfig& config,
                                   const LatencyProfile& profile = LatencyProfile::current());

/// Value a task writes for one work unit.
std::uint64_t unit_result(std::uint32_t task, std::uint32_t unit);

}  // namespace ddc
