#pragma once

#include "ddc/address.hpp"
#include "ddc/sim_time.hpp"
#include "ddc/tor_switch.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ddc {

class World;
struct WorldConfig;
struct LatencyProfile;

/// Paxos member ids are stable across reincarnation; process ids are not.
using MemberId = std::uint8_t;

struct Ballot {
    std::uint32_t round = 0;
    MemberId proposer = 0;

    auto operator<=>(const Ballot&) const = default;
    [[nodiscard]] std::uint64_t raw() const { return (std::uint64_t{round} << 8) | proposer; }
    static Ballot from_raw(std::uint64_t r)
    {
        return {static_cast<std::uint32_t>(r >> 8), static_cast<MemberId>(r & 0xff)};
    }
};

/// Commands are one word: kind in the top byte, payload below.
namespace command {
enum class Kind : std::uint8_t { Noop = 0, Client = 1, Reconfigure = 2, Reincarnate = 3 };

inline std::uint64_t noop() { return 0; }
inline std::uint64_t client(std::uint64_t seq) { return (std::uint64_t{1} << 56) | seq; }
/// Replace `old_member` with `new_member`, a process `joiner` on `rack`.
inline std::uint64_t reconfigure(MemberId old_member, MemberId new_member, std::uint32_t rack, ProcessId joiner)
{
    return (std::uint64_t{2} << 56) | (std::uint64_t{old_member} << 32) | (std::uint64_t{new_member} << 24) |
           (std::uint64_t{rack & 0xff} << 16) | joiner.value;
}
inline std::uint64_t reincarnate(MemberId member, ProcessId dead)
{
    return (std::uint64_t{3} << 56) | (std::uint64_t{member} << 32) | dead.value;
}
inline Kind kind(std::uint64_t c) { return static_cast<Kind>(c >> 56); }
inline std::uint64_t payload(std::uint64_t c) { return c & ((std::uint64_t{1} << 56) - 1); }
std::string describe(std::uint64_t c);
}  // namespace command

/// The acceptor and proposer rules, free of I/O so they can be checked
/// exhaustively on their own.
namespace paxos_rules {
struct Vote {
    Ballot ballot;
    std::uint64_t cmd = 0;
};
inline bool admit_prepare(Ballot promised, Ballot b) { return b > promised; }
inline bool admit_accept(Ballot promised, Ballot b) { return b >= promised; }
/// Value a new leader must propose given a quorum's reports for one slot.
std::uint64_t pick_value(const std::vector<std::optional<Vote>>& reports, std::uint64_t fallback);
}  // namespace paxos_rules

enum class RecoveryStrategy : std::uint8_t { Reincarnate, Transfer };
std::string_view to_string(RecoveryStrategy s);
RecoveryStrategy recovery_strategy_by_name(std::string_view name);

struct PaxosConfig {
    unsigned replicas = 3;
    unsigned commands = 8;
    RecoveryStrategy strategy = RecoveryStrategy::Reincarnate;
    /// Register monitor fast failure handlers (reincarnation) or plain
    /// monitor groups (transfer).
    bool fast_handlers = true;
    /// OS failure groups among replicas for memory-failure notices.
    bool failure_groups = true;
    /// Zero selects three cross-rack round trips.
    SimTime suspicion_timeout{};
    /// Zero selects one cross-rack round trip.
    SimTime heartbeat_interval{};
    std::uint64_t arena_pages = 8;
    std::uint64_t slot_capacity = 96;
};

struct PaxosFault {
    enum class Kind : std::uint8_t {
        CrashCompute,  ///< the member's current compute element
        FailMemory,    ///< the memory element holding the member's arena
        CrashBoth,
        FailMonitor,   ///< the member's rack monitor
        Revive,        ///< non-fail-stop return of the element crashed last for the member
    };
    Kind kind = Kind::CrashCompute;
    MemberId member = 1;
    SimTime at;
};

struct PaxosMetrics {
    std::size_t client_chosen = 0;
    std::vector<std::string> violations;

    std::optional<SimTime> first_fault_at;
    /// First moment after the fault when every configured member is served
    /// by a running, adopted replica.
    std::optional<SimTime> full_health_at;
    /// First client command chosen while at full health after the fault.
    std::optional<SimTime> next_chosen_at;
    [[nodiscard]] std::optional<SimTime> time_to_next_chosen() const
    {
        if (!first_fault_at || !next_chosen_at) return std::nullopt;
        return *next_chosen_at - *first_fault_at;
    }

    std::uint64_t snapshot_bytes = 0;
    std::uint64_t epoch_before = 0;
    std::uint64_t epoch_after = 0;
    std::size_t reincarnations = 0;
    std::size_t transfers = 0;

    /// Memory-failure notification: when the failing replica's fault was
    /// raised and when the first peer received the notice.
    std::optional<SimTime> memory_fault_signal_at;
    std::optional<SimTime> memory_access_started_at;
    std::optional<SimTime> memory_notice_at;
    /// Recovery of a silent peer by the end-to-end timeout, for comparison.
    std::optional<SimTime> suspicion_at;
};

class Replica;

/// A Paxos group with one replica per rack. Each replica keeps its state in
/// a cc-heap arena reached through its process's Rack MMU path, and is
/// addressed through a ToR endpoint "member-N" so a reincarnated process
/// can take over the member id.
class PaxosCluster {
public:
    PaxosCluster(World& world, PaxosConfig config);
    ~PaxosCluster();

    PaxosCluster(const PaxosCluster&) = delete;
    PaxosCluster& operator=(const PaxosCluster&) = delete;

    /// World shape the cluster expects: one rack per replica, spares for
    /// heirs and joiners.
    static WorldConfig world_config(const PaxosConfig& config, const LatencyProfile& profile, std::uint64_t seed);

    /// Spawns, formats and elects. Call once, before running the simulator.
    void start();
    /// Schedules a fault injection.
    void inject(const PaxosFault& fault);
    /// Runs until every command is chosen and the group is healthy, or
    /// `limit` passes. Then runs the safety checks.
    const PaxosMetrics& run(SimTime limit);

    [[nodiscard]] bool finished() const;
    [[nodiscard]] bool healthy() const;
    [[nodiscard]] const PaxosConfig& config() const { return config_; }
    [[nodiscard]] World& world() { return world_; }
    [[nodiscard]] const PaxosMetrics& metrics() const { return metrics_; }

    [[nodiscard]] std::optional<ProcessId> pid_of(MemberId m) const;
    [[nodiscard]] std::optional<MemberId> leader() const;
    /// Highest epoch among the replicas that can still read their arena.
    [[nodiscard]] std::uint64_t epoch() const;
    /// Members of the newest configuration.
    [[nodiscard]] std::vector<MemberId> members() const;
    /// Commands the process has applied, in slot order. A reincarnated
    /// process starts from the prefix it found in the arena.
    [[nodiscard]] std::vector<std::uint64_t> applied_log(ProcessId pid) const;
    [[nodiscard]] const std::map<std::uint64_t, std::uint64_t>& chosen() const { return chosen_; }

    /// Test hook: delivers `cmd` as an Accept for `slot` from `from` with a
    /// stale epoch to every current member. Returns the number of replicas
    /// whose arena changed.
    std::size_t inject_stale_accept(MemberId from, std::uint64_t stale_epoch, std::uint64_t slot, std::uint64_t cmd);

    /// Reruns the agreement, applied-prefix and fencing checks over the
    /// trace; violations are appended to the metrics.
    void check_safety();

    // used by replicas --------------------------------------------------------
    void note_chosen(ProcessId by, std::uint64_t slot, std::uint64_t cmd);
    void note_applied(ProcessId by, std::uint64_t slot, std::uint64_t cmd);
    void note_adopted(ProcessId pid, ProcessId predecessor, std::uint64_t applied);
    void note_violation(std::string what);
    [[nodiscard]] MemberId next_member_id() { return next_member_++; }
    Replica* replica(ProcessId pid);
    PaxosMetrics& mutable_metrics() { return metrics_; }
    [[nodiscard]] SimTime suspicion_timeout() const { return suspicion_; }
    [[nodiscard]] SimTime heartbeat_interval() const { return heartbeat_; }

private:
    friend class Replica;

    void start_heir(ProcessId fresh, ProcessId dead);
    void start_joiner(ProcessId fresh, ProcessId dead);
    void apply_fault(const PaxosFault& fault);
    [[nodiscard]] std::optional<std::uint32_t> arena_element(ProcessId pid) const;

    World& world_;
    PaxosConfig config_;
    SimTime suspicion_;
    SimTime heartbeat_;
    std::map<ProcessId, std::unique_ptr<Replica>> replicas_;
    std::map<std::uint64_t, std::uint64_t> chosen_;
    std::map<ProcessId, std::vector<std::uint64_t>> applied_;
    std::map<MemberId, NodeRef> last_crashed_;
    struct JoinRequest {
        MemberId leader = 0;
        MemberId replaces = 0;
    };
    std::map<ProcessId, JoinRequest> join_requests_;
    MemberId next_member_ = 1;
    PaxosMetrics metrics_;
    bool started_ = false;
};

/// One randomized failure/recovery run, fully determined by its seed.
struct PaxosFuzzCase {
    std::uint64_t seed = 0;
    PaxosConfig config;
    double jitter = 0.0;
    std::vector<PaxosFault> faults;
};

struct PaxosFuzzOutcome {
    PaxosFuzzCase input;
    PaxosMetrics metrics;
    bool finished = false;
};

PaxosFuzzCase make_paxos_fuzz_case(std::uint64_t seed);
PaxosFuzzOutcome run_paxos_case(const PaxosFuzzCase& c, SimTime limit = SimTime::from_us(30000));

struct PaxosFuzzSummary {
    std::size_t runs = 0;
    std::size_t finished = 0;
    std::size_t reincarnations = 0;
    std::size_t transfers = 0;
    /// seed -> first violation
    std::map<std::uint64_t, std::string> failures;
};

PaxosFuzzSummary paxos_fuzz(std::uint64_t first_seed, std::size_t runs);

}  // namespace ddc
