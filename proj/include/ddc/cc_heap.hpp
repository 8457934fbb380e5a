#pragma once

#include "ddc/address.hpp"
#include "ddc/error.hpp"
#include "ddc/memory_element.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ddc {

class World;

/// Byte-addressed view of an arena's pages. Every read or write call is one
/// memory access and never crosses a page; the heap splits larger ones.
class ArenaMemory {
public:
    virtual ~ArenaMemory() = default;
    virtual void read(VirtualAddress at, std::span<std::byte> out) = 0;
    virtual void write(VirtualAddress at, std::span<const std::byte> data) = 0;
};

/// Plain in-process pages, zero-initialised on first touch.
class LocalArenaMemory final : public ArenaMemory {
public:
    void read(VirtualAddress at, std::span<std::byte> out) override;
    void write(VirtualAddress at, std::span<const std::byte> data) override;

    [[nodiscard]] std::size_t writes() const { return writes_; }
    /// Concatenated bytes of `pages` pages starting at `base`.
    [[nodiscard]] std::vector<std::byte> snapshot(VirtualAddress base, std::size_t pages) const;

private:
    std::vector<std::byte>& page(VirtualAddress at);
    std::map<VirtualAddress, std::vector<std::byte>> pages_;
    std::size_t writes_ = 0;
};

/// Thrown by CrashingMemory in place of the write that would have happened.
struct SimulatedCrash {
    std::size_t after_writes = 0;
};

/// Lets exactly `budget` writes through, then throws SimulatedCrash on the
/// next one. The crash lands between two memory accesses.
class CrashingMemory final : public ArenaMemory {
public:
    CrashingMemory(ArenaMemory& inner, std::size_t budget) : inner_(inner), budget_(budget) {}

    void read(VirtualAddress at, std::span<std::byte> out) override { inner_.read(at, out); }
    void write(VirtualAddress at, std::span<const std::byte> data) override;

    [[nodiscard]] std::size_t writes() const { return writes_; }
    [[nodiscard]] bool crashed() const { return crashed_; }

private:
    ArenaMemory& inner_;
    std::size_t budget_;
    std::size_t writes_ = 0;
    bool crashed_ = false;
};

/// Thrown by ProcessMemory when an access faults. The fault is also raised
/// as a MemoryFault signal to the process.
class MemoryFaultError : public Error {
public:
    MemoryFaultError(VirtualAddress at, FaultKind kind)
        : Error(Errc::memory_fault, std::string(to_string(kind)) + " at " + at.str()), at_(at), kind_(kind)
    {
    }
    [[nodiscard]] VirtualAddress address() const { return at_; }
    [[nodiscard]] FaultKind kind() const { return kind_; }

private:
    VirtualAddress at_;
    FaultKind kind_;
};

/// Arena access on behalf of a simulated process, through its compute
/// element's Rack MMU path. Each access is applied at once and its latency
/// accumulated; callers charge the total when they next schedule work.
class ProcessMemory final : public ArenaMemory {
public:
    ProcessMemory(World& world, ProcessId pid) : world_(world), pid_(pid) {}

    void read(VirtualAddress at, std::span<std::byte> out) override;
    void write(VirtualAddress at, std::span<const std::byte> data) override;

    [[nodiscard]] ProcessId pid() const { return pid_; }
    [[nodiscard]] SimTime elapsed() const { return elapsed_; }
    /// Returns the accumulated latency and resets it.
    SimTime take_elapsed();
    [[nodiscard]] std::size_t accesses() const { return accesses_; }

private:
    void check(VirtualAddress at, const AccessResult& r);

    World& world_;
    ProcessId pid_;
    SimTime elapsed_{};
    std::size_t accesses_ = 0;
};

enum class HeapDefect : std::uint8_t {
    None,
    DataBeforeLog,  ///< writes the target before its undo record
};

struct RecoveryReport {
    bool was_active = false;
    std::uint64_t tx_id = 0;
    std::size_t records_undone = 0;
};

/// Crash-consistent heap in a contiguous run of pages.
///
/// Layout (little-endian):
///   page 0, offset 0   header: "DDCH", version u32, page_count u64,
///                       bump u64, log_capacity u64, tx_id u64, state u64
///   page 0, offset 64  root map: 64 x {name[24], vaddr u64}
///   page 1 ..          undo log, log_capacity bytes
///   after the log      bump-allocated objects
///
/// Undo record: magic u32 "ULOG", len u32, tx_id u64, seq u32, pad u32,
/// target u64, old[len], new[len], crc32 u32, padded to 8 bytes.
/// A transaction is live while the header says ACTIVE; only records whose
/// tx_id and sequence match are undone.
class UndoLogHeap {
public:
    static constexpr std::uint32_t kVersion = 1;
    static constexpr std::size_t kHeaderSize = 64;
    static constexpr std::size_t kRootMapOffset = 64;
    static constexpr std::size_t kRootEntries = 64;
    static constexpr std::size_t kRootNameMax = 24;
    static constexpr std::size_t kRootEntrySize = 32;
    static constexpr std::size_t kLogOffset = kPageSize;
    static constexpr std::size_t kRecordFixed = 32;

    static constexpr std::size_t kOffMagic = 0;
    static constexpr std::size_t kOffVersion = 4;
    static constexpr std::size_t kOffPageCount = 8;
    static constexpr std::size_t kOffBump = 16;
    static constexpr std::size_t kOffLogCapacity = 24;
    static constexpr std::size_t kOffTxId = 32;
    static constexpr std::size_t kOffState = 40;

    enum class TxState : std::uint64_t { Idle = 0, Active = 1 };

    /// Writes a fresh arena over `page_count` pages at `base`.
    static UndoLogHeap format(ArenaMemory& mem, VirtualAddress base, std::uint64_t page_count,
                              std::uint64_t log_pages = 2);
    /// Recovers then opens an existing arena. Throws Error(corrupt_arena).
    static UndoLogHeap open(ArenaMemory& mem, VirtualAddress base);
    /// Rolls back an interrupted transaction. Uses only the arena's bytes;
    /// idempotent. Throws Error(corrupt_arena).
    static RecoveryReport recover(ArenaMemory& mem, VirtualAddress base);
    /// Record size on the log for a write of `len` bytes.
    static std::size_t record_size(std::size_t len);

    [[nodiscard]] VirtualAddress base() const { return base_; }
    [[nodiscard]] std::uint64_t page_count() const { return page_count_; }
    [[nodiscard]] std::uint64_t size_bytes() const { return page_count_ * kPageSize; }
    [[nodiscard]] std::uint64_t tx_id() const { return tx_id_; }
    [[nodiscard]] bool in_tx() const { return in_tx_; }
    [[nodiscard]] ArenaMemory& memory() const { return *mem_; }

    void tx_begin();
    void tx_write(VirtualAddress at, std::span<const std::byte> data);
    void tx_write_u64(VirtualAddress at, std::uint64_t value);
    void tx_commit();
    /// Rolls back the open transaction through the undo log.
    void tx_abort();
    /// Runs `body` inside a transaction unless one is already open.
    void transact(const std::function<void()>& body);

    /// Bump allocation, transactional. Throws Error(arena_full).
    VirtualAddress alloc(std::size_t bytes, std::size_t align = 8);

    void set_root(std::string_view name, VirtualAddress vaddr);
    /// Throws Error(unknown_root).
    [[nodiscard]] VirtualAddress get_root(std::string_view name) const;
    [[nodiscard]] std::optional<VirtualAddress> find_root(std::string_view name) const;

    void read(VirtualAddress at, std::span<std::byte> out) const;
    [[nodiscard]] std::uint64_t read_u64(VirtualAddress at) const;

    void inject_defect(HeapDefect d) { defect_ = d; }

    /// Page-splitting raw access used by the heap and by recovery.
    static void raw_read(ArenaMemory& mem, VirtualAddress at, std::span<std::byte> out);
    static void raw_write(ArenaMemory& mem, VirtualAddress at, std::span<const std::byte> data);

private:
    UndoLogHeap(ArenaMemory& mem, VirtualAddress base) : mem_(&mem), base_(base) {}

    void check_bounds(VirtualAddress at, std::size_t len) const;
    void write_control(TxState state);

    ArenaMemory* mem_;
    VirtualAddress base_;
    std::uint64_t page_count_ = 0;
    std::uint64_t log_capacity_ = 0;
    std::uint64_t tx_id_ = 0;
    bool in_tx_ = false;
    bool tx_started_ = false;
    std::uint32_t next_seq_ = 0;
    std::uint64_t log_tail_ = 0;
    HeapDefect defect_ = HeapDefect::None;
};

}  // namespace ddc
