#pragma once

#include "ddc/address.hpp"
#include "ddc/error.hpp"
#include "ddc/memory_element.hpp"
#include "ddc/rack_mmu.hpp"
#include "ddc/simulator.hpp"
#include "ddc/tor_switch.hpp"

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <system_error>
#include <vector>

namespace ddc {

class World;

enum class SignalKind : std::uint8_t { MemoryFault, PageAdded, GroupFailureNotice };
std::string_view to_string(SignalKind kind);

/// What failed, as carried by a failure broadcast.
struct FailureDescriptor {
    enum class Kind : std::uint8_t { MemoryElement, ComputeElement, Process };
    Kind kind = Kind::MemoryElement;
    std::string element;  ///< name of the failed element
    ProcessId pid;        ///< the process that observed or suffered the failure
    std::optional<FaultKind> cause;
};

struct Signal {
    SignalKind kind = SignalKind::MemoryFault;
    /// MemoryFault: faulting address and cause.
    VirtualAddress address;
    FaultKind fault = FaultKind::NoEntry;
    std::string element;
    /// PageAdded: the addresses that now belong to the recipient.
    std::vector<VirtualAddress> pages;
    /// GroupFailureNotice: the broadcast payload and its sender.
    FailureDescriptor failure;
    ProcessId sender;
};

using SignalHandler = std::function<void(const Signal&)>;

/// Compute-local "emergency contacts" of one process.
struct ForwardingTable {
    struct Entry {
        std::uint32_t group_id = 0;
        std::set<ProcessId> members;
    };
    std::vector<Entry> groups;
};

/// Per-element V2P cache. Entries are dropped on Rack MMU invalidation;
/// a hit can still be stale in flight, which the memory element's own
/// check catches.
class TranslationCache {
public:
    [[nodiscard]] std::optional<FrameId> lookup(ProcessId pid, VirtualAddress page) const;
    void fill(ProcessId pid, VirtualAddress page, FrameId frame);
    void invalidate(ProcessId pid, const std::vector<VirtualAddress>& pages);
    void clear();
    [[nodiscard]] std::uint64_t generation() const { return generation_; }
    [[nodiscard]] std::size_t size() const { return entries_.size(); }

private:
    std::map<std::pair<ProcessId, VirtualAddress>, FrameId> entries_;
    std::uint64_t generation_ = 0;
};

/// The OS of one compute element: hosts processes, exposes the grant /
/// steal / failure-group syscalls, routes memory accesses through the
/// Rack MMU, and delivers signals. Processes are event handlers; every
/// callback scheduled for a process is dropped once it stops running.
class ComputeOs {
public:
    enum class ProcState : std::uint8_t { Running, Crashed };

    ComputeOs(World& world, NodeRef ref);

    ComputeOs(const ComputeOs&) = delete;
    ComputeOs& operator=(const ComputeOs&) = delete;

    [[nodiscard]] NodeRef ref() const { return ref_; }
    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] ActorId actor() const { return actor_; }
    [[nodiscard]] bool crashed() const { return crashed_; }

    // processes ---------------------------------------------------------------
    void host(ProcessId pid);
    [[nodiscard]] bool hosts(ProcessId pid) const { return procs_.contains(pid); }
    [[nodiscard]] bool running(ProcessId pid) const;
    /// Not crashed by itself; ignores the element being down.
    [[nodiscard]] bool live(ProcessId pid) const;
    [[nodiscard]] std::vector<ProcessId> processes() const;
    [[nodiscard]] bool has_live_process() const;

    // syscalls ----------------------------------------------------------------
    /// Synchronous allocation at the Rack MMU (setup path).
    Result<std::vector<VirtualAddress>> sys_allocate(ProcessId self, std::size_t n_pages, AllocFlags flags = {});
    /// Gives `pages` to `dst`. Self's cached translations are dropped at the
    /// call; on success self's OS marks the addresses in use and dst receives
    /// a PageAdded signal.
    void sys_grant(ProcessId self, std::vector<VirtualAddress> pages, ProcessId dst, Completion done);
    /// Takes pages from `src`; on success self receives PageAdded. The source
    /// gets no warning.
    void sys_steal(ProcessId self, ProcessId src, PageSelection pages, StealCompletion done);
    /// Registers a Rack MMU group (the steal capability). Throws like
    /// RackMmu::register_group.
    std::uint32_t sys_register_steal_group(ProcessId self, const std::set<ProcessId>& members);
    std::error_code sys_register_failure_group(ProcessId self, const std::set<ProcessId>& members);
    /// One GroupFailureNotice per registered member over the ToR.
    std::error_code sys_notify_group(ProcessId self, const FailureDescriptor& error);

    void set_handler(ProcessId pid, SignalKind kind, SignalHandler handler);
    void clear_handler(ProcessId pid, SignalKind kind);
    /// Runs the handler now. Without a handler a MemoryFault crashes the
    /// process (after forwarding element failures to its failure groups);
    /// other unhandled signals are ignored.
    void deliver_signal(ProcessId pid, const Signal& sig);

    // memory ------------------------------------------------------------------
    using AccessCallback = std::function<void(const AccessResult&)>;
    /// Event-driven access: request and reply each cross the interconnect;
    /// an unreachable element trips the access timeout. On a fault the
    /// MemoryFault signal is delivered first, then `cb` if still running.
    void access(ProcessId pid, VirtualAddress vaddr, AccessOp op, std::vector<std::byte> data, std::size_t read_len,
                AccessCallback cb);

    struct TimedAccess {
        AccessResult result;
        SimTime latency;
    };
    /// Applies the access immediately and reports the latency it costs the
    /// caller. Used by code that charges access time in bulk.
    TimedAccess access_now(ProcessId pid, VirtualAddress vaddr, AccessOp op, std::span<const std::byte> data,
                           std::size_t read_len);
    /// Schedules a MemoryFault signal `after` from now.
    void raise_fault(ProcessId pid, VirtualAddress vaddr, FaultKind fault, SimTime after);

    /// Timer on behalf of a process; dropped if the process is not running.
    EventId post(ProcessId pid, SimTime delay, std::string kind, std::function<void()> fn);

    /// ToR message from a process on this element to `to`.
    void send(ProcessId from, ProcessId to, std::string kind, std::function<void()> fn, std::size_t bytes = 0,
              nlohmann::json fields = nlohmann::json::object());

    // failures ----------------------------------------------------------------
    void crash_process(ProcessId pid);
    /// Whole-element failure: processes stop, forwarding tables and caches
    /// are lost, memory elements and Rack MMU state are untouched.
    void crash();
    /// Non-fail-stop return: processes resume with whatever they had.
    void revive();
    void on_resume(ProcessId pid, std::function<void()> fn);

    void invalidate(ProcessId pid, const std::vector<VirtualAddress>& pages);
    [[nodiscard]] const ForwardingTable* forwarding(ProcessId pid) const;
    [[nodiscard]] const TranslationCache& cache() const { return cache_; }
    [[nodiscard]] const std::set<VirtualAddress>* in_use(ProcessId pid) const;

    void start_heartbeats(ActorId monitor, SimTime interval, std::function<void(std::uint32_t)> beat);

private:
    struct Proc {
        ProcState state = ProcState::Running;
        std::map<SignalKind, SignalHandler> handlers;
        ForwardingTable forwarding;
        std::set<VirtualAddress> in_use;
        std::function<void()> on_resume;
    };

    [[nodiscard]] RackMmu& mmu() const;
    [[nodiscard]] MemoryElement& element(std::uint32_t id) const;
    Result<Translation> resolve(ProcessId pid, VirtualAddress vaddr);
    void syscall_record(const std::string& call, ProcessId pid, nlohmann::json args, const std::string& outcome);
    void heartbeat_tick();

    World& world_;
    NodeRef ref_;
    std::string name_;
    ActorId actor_;
    bool crashed_ = false;
    std::map<ProcessId, Proc> procs_;
    std::uint32_t next_failure_group_ = 1;
    TranslationCache cache_;

    ActorId monitor_ = 0;
    SimTime beat_interval_{};
    std::function<void(std::uint32_t)> beat_;
    bool beating_ = false;
    std::uint64_t beat_generation_ = 0;
};

}  // namespace ddc
