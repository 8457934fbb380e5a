#pragma once

#include "ddc/address.hpp"
#include "ddc/simulator.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ddc {

enum class AccessOp : std::uint8_t { Read, Write };

enum class FaultKind : std::uint8_t {
    NoEntry,       ///< no (pid, page) entry at the element, or unmapped at the MMU
    Permission,    ///< entry present but lacks the permission, or revoked
    ElementError,  ///< proxy alive, media failed: explicit error reply
    Timeout,       ///< element unreachable: no reply within the access timeout
};

std::string_view to_string(FaultKind kind);
/// Element-level faults (the memory itself is gone), as opposed to
/// address-level faults caused by the mapping.
constexpr bool is_element_failure(FaultKind k) { return k == FaultKind::ElementError || k == FaultKind::Timeout; }

/// Silent: the whole element becomes unreachable and callers time out.
/// Explicit: the proxy survives and answers every access with an error.
enum class FailureMode : std::uint8_t { Silent, Explicit };

struct AccessResult {
    std::optional<FaultKind> fault;
    std::vector<std::byte> data;

    [[nodiscard]] bool ok() const { return !fault.has_value(); }
};

struct MappingUpdate {
    enum class Op : std::uint8_t { Set, Clear };
    Op op = Op::Set;
    ProcessId pid;
    VirtualAddress page;
    std::uint32_t frame_index = 0;
    std::uint8_t perms = kPermRW;
    bool zero_fill = false;
};

struct PageKey {
    ProcessId pid;
    VirtualAddress page;
    auto operator<=>(const PageKey&) const = default;
};

struct ElementEntry {
    std::uint32_t frame_index = 0;
    std::uint8_t perms = kPermNone;
    bool operator==(const ElementEntry&) const = default;
};

/// Proxied memory: a frame store fronted by a page table keyed by
/// (pid, virtual page). Every access is checked locally.
class MemoryElement {
public:
    MemoryElement(Simulator& sim, std::uint32_t id, std::string name, std::size_t frames, FailureMode mode);

    [[nodiscard]] std::uint32_t id() const { return id_; }
    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] ActorId actor() const { return actor_; }
    [[nodiscard]] std::size_t capacity() const { return frames_.size(); }
    [[nodiscard]] FailureMode failure_mode() const { return mode_; }

    /// Handles an access request that has reached the element. The access
    /// must stay within one page. Returns nullopt when the element is
    /// silently failed: no reply is ever sent.
    std::optional<AccessResult> serve(ProcessId pid, VirtualAddress vaddr, AccessOp op,
                                      std::span<const std::byte> write_data, std::size_t read_len,
                                      std::string_view requester);

    /// Applies a Rack MMU update. Idempotent; clearing an absent entry is a
    /// no-op. Returns false when the element is silent and sends no ack.
    bool apply_mapping_update(const MappingUpdate& update);

    /// Fails the element at `at` (absorbing).
    void inject_failure(SimTime at);
    void fail_now();
    [[nodiscard]] bool failed() const { return failed_at_.has_value(); }
    [[nodiscard]] std::optional<SimTime> failed_at() const { return failed_at_; }

    [[nodiscard]] const std::map<PageKey, ElementEntry>& table() const { return table_; }
    [[nodiscard]] std::span<const std::byte> frame(std::uint32_t index) const;

private:
    Simulator& sim_;
    std::uint32_t id_;
    std::string name_;
    FailureMode mode_;
    ActorId actor_;
    std::vector<std::vector<std::byte>> frames_;
    std::map<PageKey, ElementEntry> table_;
    std::optional<SimTime> failed_at_;
};

}  // namespace ddc
