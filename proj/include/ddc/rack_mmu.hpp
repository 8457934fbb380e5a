#pragma once

#include "ddc/address.hpp"
#include "ddc/error.hpp"
#include "ddc/memory_element.hpp"
#include "ddc/simulator.hpp"

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <system_error>
#include <vector>

namespace ddc {

struct AllocFlags {
    bool allow_steal = true;
};

struct Mapping {
    FrameId frame;
    std::uint8_t perms = kPermRW;
    bool allow_steal = true;
    /// Access revoked at the memory element; the entry stays so a later
    /// steal can still move it.
    bool revoked = false;
};

struct V2PTable {
    ProcessId owner;
    std::map<VirtualAddress, Mapping> entries;
    /// Addresses given away by grant/steal: never mapped again for this owner.
    std::set<VirtualAddress> reserved;
};

struct Translation {
    FrameId frame;
    std::uint8_t perms = kPermNone;
};

/// Either every page of the source or an explicit list.
struct PageSelection {
    bool all = false;
    std::vector<VirtualAddress> pages;

    static PageSelection everything() { return {true, {}}; }
    static PageSelection of(std::vector<VirtualAddress> p) { return {false, std::move(p)}; }
};

using Completion = std::function<void(std::error_code)>;
/// Steal completion also reports which pages moved.
using StealCompletion = std::function<void(std::error_code, const std::vector<VirtualAddress>&)>;

struct RackMmuConfig {
    /// One-way delay of a Rack MMU to memory-element page-table update. The
    /// proxies sit on the MMU's own fabric, so this defaults to zero.
    SimTime update_delay{};
    /// How long a reconfiguration waits for element acks before reporting
    /// element-unreachable.
    SimTime ack_timeout = SimTime::from_us(10);
};

/// Deliberate defects used to self-test the fuzz harness.
enum class MmuDefect : std::uint8_t {
    None,
    KeepSourceMapping,  ///< grant copies instead of moving the entry
    SetBeforeClear,     ///< reassignment programs the new owner before revoking the old
};

/// The rack's resource manager. Owns every process's V2P table, allocates
/// frames first-fit, and reconfigures memory-element page tables for
/// grant, steal and revoke. All mutations are serialized through this
/// single actor; table changes are atomic at the MMU and then pushed to the
/// elements, clears strictly before sets.
class RackMmu {
public:
    RackMmu(Simulator& sim, std::string name, std::vector<MemoryElement*> elements, RackMmuConfig config = {});

    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] ActorId actor() const { return actor_; }
    [[nodiscard]] const RackMmuConfig& config() const { return config_; }

    // process registry ------------------------------------------------------
    void register_process(ProcessId pid, std::uint32_t compute_element);
    void mark_dead(ProcessId pid);
    [[nodiscard]] bool knows(ProcessId pid) const { return procs_.contains(pid); }
    [[nodiscard]] bool alive(ProcessId pid) const;
    [[nodiscard]] std::uint32_t host_of(ProcessId pid) const;

    // topology ----------------------------------------------------------------
    /// All compute/memory pairs are reachable unless cut here.
    void set_reachable(std::uint32_t compute_element, std::uint32_t memory_element, bool reachable);
    [[nodiscard]] bool reachable(std::uint32_t compute_element, std::uint32_t memory_element) const;

    // operations --------------------------------------------------------------
    /// First-fit over elements in id order, lowest free frame first. Frames
    /// are zero-filled. Throws Error(unknown_process / out_of_frames /
    /// no_reachable_element); on error nothing changes.
    std::vector<VirtualAddress> allocate(ProcessId pid, std::size_t n_pages, AllocFlags flags = {});

    [[nodiscard]] Result<Translation> translate(ProcessId pid, VirtualAddress vaddr) const;

    /// Moves `pages` from src to dst at the same addresses. Completion fires
    /// once every element has acknowledged the clear and then the set.
    void grant(ProcessId src, const std::vector<VirtualAddress>& pages, ProcessId dst, Completion done);
    /// Recipient-initiated move, authorized by a shared group.
    void steal(ProcessId caller, ProcessId src, const PageSelection& pages, StealCompletion done);
    /// Clears element entries for `pages` (or all) of `pid`; the V2P entries
    /// remain, marked revoked.
    void revoke(ProcessId pid, const PageSelection& pages, Completion done);

    /// Throws Error(unknown_process).
    std::uint32_t register_group(const std::set<ProcessId>& members);
    [[nodiscard]] bool shares_group(ProcessId a, ProcessId b) const;
    [[nodiscard]] const std::map<std::uint32_t, std::set<ProcessId>>& groups() const { return groups_; }

    [[nodiscard]] const V2PTable* table(ProcessId pid) const;
    [[nodiscard]] std::vector<const V2PTable*> tables() const;
    [[nodiscard]] std::size_t free_frames() const;

    /// Hook that tells a compute element to drop cached translations.
    std::function<void(ProcessId owner, std::uint32_t compute_element, const std::vector<VirtualAddress>&)>
        on_invalidate;

    void inject_defect(MmuDefect d) { defect_ = d; }

private:
    struct Proc {
        std::uint32_t compute = 0;
        bool alive = true;
        std::uint64_t next_page = 0;
        V2PTable table;
    };
    struct Moved {
        VirtualAddress page;
        Mapping mapping;
    };

    void complete(const std::string& op, std::uint64_t op_id, Completion& done, std::error_code ec);
    void reassign(const std::string& op, std::uint64_t op_id, ProcessId from, ProcessId to,
                  std::vector<Moved> moved, Completion done);
    /// Sends updates and calls `then(all_acked)` once every ack arrived or
    /// the ack timeout passed.
    void push_updates(std::vector<MappingUpdate> updates, std::vector<std::uint32_t> elements,
                      std::function<void(bool)> then);
    void record(const std::string& kind, nlohmann::json fields);
    void invalidate(ProcessId owner, const std::vector<VirtualAddress>& pages);

    Simulator& sim_;
    std::string name_;
    std::vector<MemoryElement*> elements_;
    RackMmuConfig config_;
    ActorId actor_;
    std::map<ProcessId, Proc> procs_;
    std::vector<std::vector<bool>> frame_used_;
    std::set<std::pair<std::uint32_t, std::uint32_t>> cut_links_;
    std::map<std::uint32_t, std::set<ProcessId>> groups_;
    std::uint32_t next_group_ = 1;
    std::uint64_t next_op_ = 1;
    MmuDefect defect_ = MmuDefect::None;
};

}  // namespace ddc
