#include "ddc/cc_heap.hpp"

#include "ddc/world.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>

namespace ddc {

namespace {

constexpr std::array<std::byte, 4> kHeapMagic{std::byte{'D'}, std::byte{'D'}, std::byte{'C'}, std::byte{'H'}};
constexpr std::uint32_t kRecordMagic = 0x474f4c55;  // "ULOG"

void put_u32(std::byte* p, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::byte>(v >> (8 * i));
}

void put_u64(std::byte* p, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::byte>(v >> (8 * i));
}

std::uint32_t get_u32(const std::byte* p)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::byte* p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint32_t crc_of(std::span<const std::byte> data)
{
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

struct Header {
    std::uint64_t page_count = 0;
    std::uint64_t bump = 0;
    std::uint64_t log_capacity = 0;
    std::uint64_t tx_id = 0;
    std::uint64_t state = 0;
};

Header read_header(ArenaMemory& mem, VirtualAddress base)
{
    std::array<std::byte, UndoLogHeap::kHeaderSize> raw{};
    UndoLogHeap::raw_read(mem, base, raw);
    if (!std::equal(kHeapMagic.begin(), kHeapMagic.end(), raw.begin()))
        throw Error(Errc::corrupt_arena, "bad arena magic at " + base.str());
    if (get_u32(raw.data() + UndoLogHeap::kOffVersion) != UndoLogHeap::kVersion)
        throw Error(Errc::corrupt_arena, "unsupported arena version");
    Header h;
    h.page_count = get_u64(raw.data() + UndoLogHeap::kOffPageCount);
    h.bump = get_u64(raw.data() + UndoLogHeap::kOffBump);
    h.log_capacity = get_u64(raw.data() + UndoLogHeap::kOffLogCapacity);
    h.tx_id = get_u64(raw.data() + UndoLogHeap::kOffTxId);
    h.state = get_u64(raw.data() + UndoLogHeap::kOffState);
    const std::uint64_t size = h.page_count * kPageSize;
    if (h.page_count < 2 || h.log_capacity == 0 || UndoLogHeap::kLogOffset + h.log_capacity > size ||
        h.bump < UndoLogHeap::kLogOffset + h.log_capacity || h.bump > size || h.state > 1)
        throw Error(Errc::corrupt_arena, "inconsistent arena header");
    return h;
}

}  // namespace

// ---------------------------------------------------------------- memories

std::vector<std::byte>& LocalArenaMemory::page(VirtualAddress at)
{
    auto& p = pages_[at.page_base()];
    if (p.empty()) p.assign(kPageSize, std::byte{0});
    return p;
}

void LocalArenaMemory::read(VirtualAddress at, std::span<std::byte> out)
{
    if (at.offset() + out.size() > kPageSize) throw std::invalid_argument("access crosses a page");
    auto it = pages_.find(at.page_base());
    if (it == pages_.end()) {
        std::fill(out.begin(), out.end(), std::byte{0});
        return;
    }
    std::copy_n(it->second.begin() + static_cast<std::ptrdiff_t>(at.offset()), out.size(), out.begin());
}

void LocalArenaMemory::write(VirtualAddress at, std::span<const std::byte> data)
{
    if (at.offset() + data.size() > kPageSize) throw std::invalid_argument("access crosses a page");
    auto& p = page(at);
    std::copy(data.begin(), data.end(), p.begin() + static_cast<std::ptrdiff_t>(at.offset()));
    ++writes_;
}

std::vector<std::byte> LocalArenaMemory::snapshot(VirtualAddress base, std::size_t pages) const
{
    std::vector<std::byte> out(pages * kPageSize, std::byte{0});
    for (std::size_t i = 0; i < pages; ++i) {
        auto it = pages_.find(base + i * kPageSize);
        if (it != pages_.end()) std::copy(it->second.begin(), it->second.end(), out.begin() + static_cast<std::ptrdiff_t>(i * kPageSize));
    }
    return out;
}

void CrashingMemory::write(VirtualAddress at, std::span<const std::byte> data)
{
    if (crashed_ || writes_ >= budget_) {
        crashed_ = true;
        throw SimulatedCrash{writes_};
    }
    inner_.write(at, data);
    ++writes_;
}

void ProcessMemory::check(VirtualAddress at, const AccessResult& r)
{
    if (r.ok()) return;
    world_.os_of(pid_).raise_fault(pid_, at, *r.fault, elapsed_);
    throw MemoryFaultError(at, *r.fault);
}

void ProcessMemory::read(VirtualAddress at, std::span<std::byte> out)
{
    auto t = world_.os_of(pid_).access_now(pid_, at, AccessOp::Read, {}, out.size());
    ++accesses_;
    elapsed_ += t.latency;
    check(at, t.result);
    std::copy_n(t.result.data.begin(), out.size(), out.begin());
}

void ProcessMemory::write(VirtualAddress at, std::span<const std::byte> data)
{
    auto t = world_.os_of(pid_).access_now(pid_, at, AccessOp::Write, data, 0);
    ++accesses_;
    elapsed_ += t.latency;
    check(at, t.result);
}

SimTime ProcessMemory::take_elapsed()
{
    const SimTime t = elapsed_;
    elapsed_ = SimTime{};
    return t;
}

// ---------------------------------------------------------------- heap

void UndoLogHeap::raw_read(ArenaMemory& mem, VirtualAddress at, std::span<std::byte> out)
{
    std::size_t done = 0;
    while (done < out.size()) {
        const VirtualAddress here = at + done;
        const std::size_t n = std::min<std::size_t>(out.size() - done, kPageSize - here.offset());
        mem.read(here, out.subspan(done, n));
        done += n;
    }
}

void UndoLogHeap::raw_write(ArenaMemory& mem, VirtualAddress at, std::span<const std::byte> data)
{
    std::size_t done = 0;
    while (done < data.size()) {
        const VirtualAddress here = at + done;
        const std::size_t n = std::min<std::size_t>(data.size() - done, kPageSize - here.offset());
        mem.write(here, data.subspan(done, n));
        done += n;
    }
}

std::size_t UndoLogHeap::record_size(std::size_t len)
{
    const std::size_t raw = kRecordFixed + 2 * len + 4;
    return (raw + 7) & ~std::size_t{7};
}

UndoLogHeap UndoLogHeap::format(ArenaMemory& mem, VirtualAddress base, std::uint64_t page_count, std::uint64_t log_pages)
{
    if (base.offset() != 0) throw std::invalid_argument("arena base must be page aligned");
    if (log_pages == 0 || page_count < 1 + log_pages) throw Error(Errc::arena_full, "arena too small for its log");

    std::vector<std::byte> page0(kLogOffset, std::byte{0});
    std::copy(kHeapMagic.begin(), kHeapMagic.end(), page0.begin());
    put_u32(page0.data() + kOffVersion, kVersion);
    put_u64(page0.data() + kOffPageCount, page_count);
    put_u64(page0.data() + kOffBump, kLogOffset + log_pages * kPageSize);
    put_u64(page0.data() + kOffLogCapacity, log_pages * kPageSize);
    put_u64(page0.data() + kOffTxId, 0);
    put_u64(page0.data() + kOffState, static_cast<std::uint64_t>(TxState::Idle));
    // stale records from a previous owner must never match a future tx
    std::vector<std::byte> log(log_pages * kPageSize, std::byte{0});
    raw_write(mem, base + kLogOffset, log);
    raw_write(mem, base, page0);

    UndoLogHeap heap(mem, base);
    heap.page_count_ = page_count;
    heap.log_capacity_ = log_pages * kPageSize;
    return heap;
}

RecoveryReport UndoLogHeap::recover(ArenaMemory& mem, VirtualAddress base)
{
    const Header h = read_header(mem, base);
    RecoveryReport report;
    report.tx_id = h.tx_id;
    if (h.state == static_cast<std::uint64_t>(TxState::Idle)) return report;
    report.was_active = true;

    struct Undo {
        std::uint64_t target;
        std::vector<std::byte> old;
    };
    std::vector<Undo> undo;
    const std::uint64_t arena_size = h.page_count * kPageSize;
    std::uint64_t pos = 0;
    for (std::uint32_t seq = 0;; ++seq) {
        if (pos + kRecordFixed > h.log_capacity) break;
        std::array<std::byte, kRecordFixed> fixed{};
        raw_read(mem, base + kLogOffset + pos, fixed);
        if (get_u32(fixed.data()) != kRecordMagic) break;
        const std::uint32_t len = get_u32(fixed.data() + 4);
        if (get_u64(fixed.data() + 8) != h.tx_id || get_u32(fixed.data() + 16) != seq) break;
        const std::size_t size = record_size(len);
        if (pos + size > h.log_capacity) break;
        std::vector<std::byte> rec(kRecordFixed + 2 * std::size_t{len} + 4);
        raw_read(mem, base + kLogOffset + pos, rec);
        const std::size_t body = rec.size() - 4;
        if (get_u32(rec.data() + body) != crc_of(std::span(rec).first(body))) break;
        const std::uint64_t target = get_u64(rec.data() + 24);
        if (target < base.raw() || target + len > base.raw() + arena_size) break;
        undo.push_back({target, std::vector<std::byte>(rec.begin() + kRecordFixed, rec.begin() + kRecordFixed + len)});
        pos += size;
    }
    for (auto it = undo.rbegin(); it != undo.rend(); ++it) raw_write(mem, VirtualAddress::from_raw(it->target), it->old);

    std::array<std::byte, 16> control{};
    put_u64(control.data(), h.tx_id);
    put_u64(control.data() + 8, static_cast<std::uint64_t>(TxState::Idle));
    raw_write(mem, base + kOffTxId, control);
    report.records_undone = undo.size();
    return report;
}

UndoLogHeap UndoLogHeap::open(ArenaMemory& mem, VirtualAddress base)
{
    recover(mem, base);
    const Header h = read_header(mem, base);
    UndoLogHeap heap(mem, base);
    heap.page_count_ = h.page_count;
    heap.log_capacity_ = h.log_capacity;
    heap.tx_id_ = h.tx_id;
    return heap;
}

void UndoLogHeap::check_bounds(VirtualAddress at, std::size_t len) const
{
    if (at.raw() < base_.raw() || at.raw() + len > base_.raw() + size_bytes())
        throw std::out_of_range("access outside the arena: " + at.str());
}

void UndoLogHeap::write_control(TxState state)
{
    std::array<std::byte, 16> control{};
    put_u64(control.data(), tx_id_);
    put_u64(control.data() + 8, static_cast<std::uint64_t>(state));
    raw_write(*mem_, base_ + kOffTxId, control);
}

void UndoLogHeap::tx_begin()
{
    if (in_tx_) throw Error(Errc::tx_in_progress);
    in_tx_ = true;
    tx_started_ = false;
}

void UndoLogHeap::tx_write(VirtualAddress at, std::span<const std::byte> data)
{
    if (!in_tx_) throw std::logic_error("tx_write outside a transaction");
    if (data.empty()) return;
    check_bounds(at, data.size());
    const std::size_t size = record_size(data.size());
    if ((tx_started_ ? log_tail_ : 0) + size > log_capacity_) throw Error(Errc::log_full);

    if (!tx_started_) {
        ++tx_id_;
        log_tail_ = 0;
        next_seq_ = 0;
        write_control(TxState::Active);
        tx_started_ = true;
    }

    std::vector<std::byte> rec(size, std::byte{0});
    put_u32(rec.data(), kRecordMagic);
    put_u32(rec.data() + 4, static_cast<std::uint32_t>(data.size()));
    put_u64(rec.data() + 8, tx_id_);
    put_u32(rec.data() + 16, next_seq_);
    put_u64(rec.data() + 24, at.raw());
    raw_read(*mem_, at, std::span(rec).subspan(kRecordFixed, data.size()));
    std::copy(data.begin(), data.end(), rec.begin() + static_cast<std::ptrdiff_t>(kRecordFixed + data.size()));
    const std::size_t body = kRecordFixed + 2 * data.size();
    put_u32(rec.data() + body, crc_of(std::span(rec).first(body)));

    const VirtualAddress slot = base_ + kLogOffset + log_tail_;
    if (defect_ == HeapDefect::DataBeforeLog) {
        raw_write(*mem_, at, data);
        raw_write(*mem_, slot, rec);
    } else {
        raw_write(*mem_, slot, rec);
        raw_write(*mem_, at, data);
    }
    log_tail_ += size;
    ++next_seq_;
}

void UndoLogHeap::tx_write_u64(VirtualAddress at, std::uint64_t value)
{
    std::array<std::byte, 8> raw{};
    put_u64(raw.data(), value);
    tx_write(at, raw);
}

void UndoLogHeap::tx_commit()
{
    if (!in_tx_) return;
    if (tx_started_) write_control(TxState::Idle);
    in_tx_ = false;
    tx_started_ = false;
}

void UndoLogHeap::transact(const std::function<void()>& body)
{
    if (in_tx_) {
        body();
        return;
    }
    tx_begin();
    try {
        body();
    } catch (const Error& e) {
        // a faulted arena cannot be rolled back from here; recovery will
        if (e.errc() != Errc::memory_fault) tx_abort();
        throw;
    }
    tx_commit();
}

void UndoLogHeap::tx_abort()
{
    if (!in_tx_) return;
    if (tx_started_) recover(*mem_, base_);
    in_tx_ = false;
    tx_started_ = false;
}

VirtualAddress UndoLogHeap::alloc(std::size_t bytes, std::size_t align)
{
    if (align == 0 || (align & (align - 1)) != 0) throw std::invalid_argument("alignment must be a power of two");
    VirtualAddress out;
    transact([&] {
        const std::uint64_t bump = read_u64(base_ + kOffBump);
        const std::uint64_t start = (bump + align - 1) & ~(static_cast<std::uint64_t>(align) - 1);
        if (start + bytes > size_bytes()) throw Error(Errc::arena_full);
        tx_write_u64(base_ + kOffBump, start + bytes);
        out = base_ + start;
    });
    return out;
}

void UndoLogHeap::set_root(std::string_view name, VirtualAddress vaddr)
{
    if (name.empty() || name.size() > kRootNameMax) throw Error(Errc::name_too_long);
    std::optional<std::size_t> slot;
    std::optional<std::size_t> free;
    std::vector<std::byte> map(kRootEntries * kRootEntrySize);
    read(base_ + kRootMapOffset, map);
    for (std::size_t i = 0; i < kRootEntries; ++i) {
        const std::byte* e = map.data() + i * kRootEntrySize;
        const auto len = static_cast<std::size_t>(std::find(e, e + kRootNameMax, std::byte{0}) - e);
        if (len == 0) {
            if (!free) free = i;
            continue;
        }
        if (std::string_view(reinterpret_cast<const char*>(e), len) == name) {
            slot = i;
            break;
        }
    }
    if (!slot) slot = free;
    if (!slot) throw Error(Errc::root_map_full);

    std::array<std::byte, kRootEntrySize> entry{};
    std::memcpy(entry.data(), name.data(), name.size());
    put_u64(entry.data() + kRootNameMax, vaddr.raw());
    transact([&] { tx_write(base_ + kRootMapOffset + *slot * kRootEntrySize, entry); });
}

std::optional<VirtualAddress> UndoLogHeap::find_root(std::string_view name) const
{
    std::vector<std::byte> map(kRootEntries * kRootEntrySize);
    read(base_ + kRootMapOffset, map);
    for (std::size_t i = 0; i < kRootEntries; ++i) {
        const std::byte* e = map.data() + i * kRootEntrySize;
        const auto len = static_cast<std::size_t>(std::find(e, e + kRootNameMax, std::byte{0}) - e);
        if (len != 0 && std::string_view(reinterpret_cast<const char*>(e), len) == name)
            return VirtualAddress::from_raw(get_u64(e + kRootNameMax));
    }
    return std::nullopt;
}

VirtualAddress UndoLogHeap::get_root(std::string_view name) const
{
    auto v = find_root(name);
    if (!v) throw Error(Errc::unknown_root, "no root named " + std::string(name));
    return *v;
}

void UndoLogHeap::read(VirtualAddress at, std::span<std::byte> out) const
{
    check_bounds(at, out.size());
    raw_read(*mem_, at, out);
}

std::uint64_t UndoLogHeap::read_u64(VirtualAddress at) const
{
    std::array<std::byte, 8> raw{};
    read(at, raw);
    return get_u64(raw.data());
}

}  // namespace ddc
