#include "ddc/cc_heap.hpp"
#include "ddc/heap_workload.hpp"
#include "ddc/world.hpp"

#include <gtest/gtest.h>

#include <map>
#include <random>

using namespace ddc;
using namespace ddc::literals;

namespace {

const VirtualAddress kBase = VirtualAddress::make(ProcessId{1}, 0);

std::vector<std::byte> bytes(std::string_view s)
{
    std::vector<std::byte> out;
    for (char c : s) out.push_back(static_cast<std::byte>(c));
    return out;
}

}  // namespace

TEST(CcHeap, FormatLayoutIsBitExact)
{
    LocalArenaMemory mem;
    UndoLogHeap::format(mem, kBase, 6, 2);
    const auto raw = mem.snapshot(kBase, 1);
    EXPECT_EQ(raw[0], std::byte{'D'});
    EXPECT_EQ(raw[3], std::byte{'H'});
    EXPECT_EQ(raw[4], std::byte{1});                            // version
    EXPECT_EQ(raw[8], std::byte{6});                            // page count
    EXPECT_EQ(raw[16 + 1], std::byte{(3 * kPageSize) >> 8});    // bump after header page and log
    EXPECT_EQ(raw[24 + 1], std::byte{(2 * kPageSize) >> 8});    // log capacity
    for (std::size_t i = 32; i < kPageSize; ++i) ASSERT_EQ(raw[i], std::byte{0}) << i;
}

TEST(CcHeap, EmptyTransactionLeavesBytesUnchanged)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    const auto before = mem.snapshot(kBase, 4);
    heap.tx_begin();
    heap.tx_commit();
    EXPECT_EQ(mem.snapshot(kBase, 4), before);
}

TEST(CcHeap, CommittedWritesPersist)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    const auto obj = heap.alloc(64);
    heap.tx_begin();
    heap.tx_write(obj, bytes("committed"));
    heap.tx_commit();
    auto again = UndoLogHeap::open(mem, kBase);
    std::vector<std::byte> got(9);
    again.read(obj, got);
    EXPECT_EQ(got, bytes("committed"));
}

TEST(CcHeap, CleanRecoveryIsByteIdentical)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    heap.set_root("x", kBase + 4096 * 3);
    const auto before = mem.snapshot(kBase, 4);
    const auto rep = UndoLogHeap::recover(mem, kBase);
    EXPECT_FALSE(rep.was_active);
    EXPECT_EQ(mem.snapshot(kBase, 4), before);
}

TEST(CcHeap, CrashBetweenLogAndDataRestoresOld)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    const auto obj = heap.alloc(16);
    heap.transact([&] { heap.tx_write(obj, bytes("old-old-")); });
    // one write for the ACTIVE marker, one for the record; crash before data
    CrashingMemory crashing(mem, 2);
    auto h2 = UndoLogHeap::open(crashing, kBase);
    h2.tx_begin();
    EXPECT_THROW(h2.tx_write(obj, bytes("new-new-")), SimulatedCrash);
    const auto rep = UndoLogHeap::recover(mem, kBase);
    EXPECT_TRUE(rep.was_active);
    std::vector<std::byte> got(8);
    UndoLogHeap::raw_read(mem, obj, got);
    EXPECT_EQ(got, bytes("old-old-"));
}

TEST(CcHeap, CrashAfterDataBeforeCommitRollsBack)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    const auto obj = heap.alloc(16);
    heap.transact([&] { heap.tx_write(obj, bytes("AAAA")); });
    CrashingMemory crashing(mem, 3);
    auto h2 = UndoLogHeap::open(crashing, kBase);
    h2.tx_begin();
    h2.tx_write(obj, bytes("BBBB"));  // marker, record, data
    EXPECT_THROW(h2.tx_commit(), SimulatedCrash);
    std::vector<std::byte> got(4);
    UndoLogHeap::raw_read(mem, obj, got);
    EXPECT_EQ(got, bytes("BBBB"));
    EXPECT_EQ(UndoLogHeap::recover(mem, kBase).records_undone, 1u);
    UndoLogHeap::raw_read(mem, obj, got);
    EXPECT_EQ(got, bytes("AAAA"));
}

TEST(CcHeap, RecoverTwiceEqualsOnce)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    const auto obj = heap.alloc(32);
    CrashingMemory crashing(mem, 4);
    auto h2 = UndoLogHeap::open(crashing, kBase);
    h2.tx_begin();
    EXPECT_THROW({
        h2.tx_write(obj, bytes("one"));
        h2.tx_write(obj + 8, bytes("two"));
    }, SimulatedCrash);
    UndoLogHeap::recover(mem, kBase);
    const auto once = mem.snapshot(kBase, 4);
    EXPECT_FALSE(UndoLogHeap::recover(mem, kBase).was_active);
    EXPECT_EQ(mem.snapshot(kBase, 4), once);
}

TEST(CcHeap, RootsAndErrors)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    EXPECT_THROW((void)heap.get_root("missing"), Error);
    heap.set_root("log_head", kBase + 5000);
    heap.set_root("log_head", kBase + 6000);
    EXPECT_EQ(heap.get_root("log_head"), kBase + 6000);
    EXPECT_THROW(heap.set_root(std::string(25, 'n'), kBase), Error);
    heap.set_root(std::string(24, 'n'), kBase);
    for (int i = 0; i < 62; ++i) heap.set_root("r" + std::to_string(i), kBase);
    try {
        heap.set_root("overflow", kBase);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.errc(), Errc::root_map_full);
    }
}

TEST(CcHeap, BadMagicIsCorrupt)
{
    LocalArenaMemory mem;
    try {
        UndoLogHeap::recover(mem, kBase);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.errc(), Errc::corrupt_arena);
    }
}

TEST(CcHeap, LogFullAndArenaFull)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 3, 1);
    EXPECT_THROW(heap.alloc(kPageSize + 1), Error);
    const auto obj = heap.alloc(kPageSize);
    std::vector<std::byte> big(kPageSize / 2, std::byte{7});
    heap.tx_begin();
    EXPECT_THROW(heap.tx_write(obj, big), Error);
    heap.tx_abort();
}

TEST(CcHeap, AbortRestoresBytes)
{
    LocalArenaMemory mem;
    auto heap = UndoLogHeap::format(mem, kBase, 4, 1);
    const auto obj = heap.alloc(8);
    heap.tx_begin();
    heap.tx_write(obj, bytes("scratch"));
    heap.tx_abort();
    EXPECT_FALSE(heap.in_tx());
    std::vector<std::byte> got(7);
    UndoLogHeap::raw_read(mem, obj, got);
    EXPECT_EQ(got, std::vector<std::byte>(7));
}

// Independent oracle: a small sweep replayed on a std::map of byte cells.
TEST(CcHeap, CrashAtEveryWriteMatchesCommittedPrefix)
{
    std::mt19937_64 rng(7);
    struct Tx {
        std::vector<std::pair<std::uint64_t, std::byte>> cells;
    };
    std::vector<Tx> txs(20);
    for (auto& tx : txs)
        for (int i = 0, n = static_cast<int>(rng() % 4); i < n; ++i)
            tx.cells.push_back({rng() % (2 * kPageSize), static_cast<std::byte>(rng() % 255 + 1)});

    std::vector<std::map<std::uint64_t, std::byte>> oracle(1);
    for (const auto& tx : txs) {
        auto next = oracle.back();
        for (auto [off, b] : tx.cells) next[off] = b;
        oracle.push_back(next);
    }

    auto build = [](LocalArenaMemory& mem) {
        auto heap = UndoLogHeap::format(mem, kBase, 6, 1);
        return heap.alloc(2 * kPageSize);
    };
    std::size_t total = 0;
    {
        LocalArenaMemory mem;
        auto region = build(mem);
        auto heap = UndoLogHeap::open(mem, kBase);
        const auto start = mem.writes();
        for (const auto& tx : txs) {
            heap.tx_begin();
            for (auto [off, b] : tx.cells) heap.tx_write(region + off, std::span(&b, 1));
            heap.tx_commit();
        }
        total = mem.writes() - start;
    }
    ASSERT_GT(total, 40u);
    for (std::size_t k = 0; k <= total; ++k) {
        LocalArenaMemory mem;
        auto region = build(mem);
        CrashingMemory crashing(mem, k);
        auto heap = UndoLogHeap::open(crashing, kBase);
        std::size_t committed = 0;
        try {
            for (const auto& tx : txs) {
                heap.tx_begin();
                for (auto [off, b] : tx.cells) heap.tx_write(region + off, std::span(&b, 1));
                heap.tx_commit();
                ++committed;
            }
        } catch (const SimulatedCrash&) {
        }
        UndoLogHeap::recover(mem, kBase);
        std::vector<std::byte> got(2 * kPageSize);
        UndoLogHeap::raw_read(mem, region, got);
        for (std::uint64_t off = 0; off < got.size(); ++off) {
            auto it = oracle[committed].find(off);
            const std::byte want = it == oracle[committed].end() ? std::byte{0} : it->second;
            ASSERT_EQ(got[off], want) << "crash point " << k << " offset " << off;
        }
    }
}

TEST(CcHeap, SweepOfFiftyTransactionsIsClean)
{
    const auto r = heap_crash_sweep({});
    EXPECT_GE(r.crash_points, 200u);
    EXPECT_EQ(r.violations, 0u) << (r.failures.empty() ? "" : r.failures.front());
}

TEST(CcHeap, SweepCatchesDataBeforeLog)
{
    HeapSweepConfig cfg;
    cfg.defect = HeapDefect::DataBeforeLog;
    EXPECT_GT(heap_crash_sweep(cfg).violations, 0u);
}

TEST(CcHeap, StolenArenaRootsReadableByNewOwner)
{
    World world{WorldConfig{}};
    const auto a = world.spawn({0, 0});
    const auto b = world.spawn({0, 1});
    auto& os_a = world.os_of(a);
    auto pages = os_a.sys_allocate(a, 4).value();
    ProcessMemory mem_a(world, a);
    auto heap = UndoLogHeap::format(mem_a, pages[0], 4, 1);
    const auto obj = heap.alloc(8);
    heap.transact([&] { heap.tx_write_u64(obj, 0xfeedull); });
    heap.set_root("log_head", obj);
    EXPECT_GT(mem_a.elapsed(), SimTime{});

    world.os_of(b).sys_register_steal_group(b, {a, b});
    os_a.crash_process(a);
    bool stolen = false;
    world.os_of(b).sys_steal(b, a, PageSelection::everything(), [&](std::error_code ec, const auto&) { stolen = !ec; });
    world.sim().run();
    ASSERT_TRUE(stolen);

    ProcessMemory mem_b(world, b);
    auto adopted = UndoLogHeap::open(mem_b, pages[0]);
    EXPECT_EQ(adopted.get_root("log_head"), obj);
    EXPECT_EQ(adopted.read_u64(obj), 0xfeedull);
}

TEST(CcHeap, FaultSurfacesAsSignalAndException)
{
    World world{WorldConfig{}};
    const auto a = world.spawn({0, 0});
    auto pages = world.os_of(a).sys_allocate(a, 4).value();
    ProcessMemory mem(world, a);
    auto heap = UndoLogHeap::format(mem, pages[0], 4, 1);
    std::optional<FaultKind> signalled;
    world.os_of(a).set_handler(a, SignalKind::MemoryFault, [&](const Signal& s) { signalled = s.fault; });
    world.memory(0, 0).fail_now();
    heap.tx_begin();
    EXPECT_THROW(heap.tx_write_u64(pages[0] + 3 * kPageSize, 1), MemoryFaultError);
    world.sim().run();
    EXPECT_EQ(signalled, FaultKind::Timeout);
}
