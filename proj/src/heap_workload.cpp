#include "ddc/heap_workload.hpp"

#include <random>

namespace ddc {

namespace {

constexpr VirtualAddress arena_base() { return VirtualAddress::from_raw(std::uint64_t{1} << kPidShift); }

struct Expected {
    std::vector<std::byte> region;
    std::map<std::string, std::uint64_t> roots;
};

void apply(UndoLogHeap& heap, VirtualAddress region, const HeapTx& tx)
{
    heap.tx_begin();
    for (const auto& w : tx.writes) heap.tx_write(region + w.offset, w.bytes);
    if (tx.root) heap.set_root(tx.root->first, VirtualAddress::from_raw(tx.root->second));
    heap.tx_commit();
}

}  // namespace

HeapWorkload make_heap_workload(std::uint64_t seed, std::size_t n_tx, std::uint64_t region_bytes)
{
    std::mt19937_64 rng(seed);
    auto pick = [&](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };
    HeapWorkload w;
    w.region_bytes = region_bytes;
    for (std::size_t i = 0; i < n_tx; ++i) {
        HeapTx tx;
        const auto n_writes = pick(0, 4);
        for (std::uint64_t k = 0; k < n_writes; ++k) {
            const auto len = pick(1, 96);
            HeapTx::Write wr;
            // bias some writes onto page boundaries
            wr.offset = pick(0, 3) == 0 ? ((pick(1, region_bytes / kPageSize - 1) * kPageSize) - len / 2)
                                        : pick(0, region_bytes - len);
            for (std::uint64_t b = 0; b < len; ++b) wr.bytes.push_back(static_cast<std::byte>(rng()));
            tx.writes.push_back(std::move(wr));
        }
        if (pick(0, 4) == 0) tx.root = {{"root" + std::to_string(pick(0, 5)), rng() & 0xffffffffffull}};
        w.txs.push_back(std::move(tx));
    }
    return w;
}

HeapSweepResult heap_crash_sweep(const HeapSweepConfig& config)
{
    const HeapWorkload wl = make_heap_workload(config.seed, config.transactions);

    // committed-prefix states, replayed on plain containers
    std::vector<Expected> prefix(1);
    prefix[0].region.assign(wl.region_bytes, std::byte{0});
    for (const auto& tx : wl.txs) {
        Expected next = prefix.back();
        for (const auto& w : tx.writes)
            std::copy(w.bytes.begin(), w.bytes.end(), next.region.begin() + static_cast<std::ptrdiff_t>(w.offset));
        if (tx.root) next.roots[tx.root->first] = tx.root->second;
        prefix.push_back(std::move(next));
    }

    auto setup = [&](LocalArenaMemory& mem) {
        auto heap = UndoLogHeap::format(mem, arena_base(), config.arena_pages, config.log_pages);
        heap.inject_defect(config.defect);
        const VirtualAddress region = heap.alloc(wl.region_bytes);
        heap.set_root("data", region);
        return std::pair{heap, region};
    };

    HeapSweepResult result;
    {
        LocalArenaMemory mem;
        auto [heap, region] = setup(mem);
        const std::size_t before = mem.writes();
        for (const auto& tx : wl.txs) apply(heap, region, tx);
        result.total_writes = mem.writes() - before;
    }

    for (std::size_t budget = 0; budget <= result.total_writes; ++budget) {
        ++result.crash_points;
        LocalArenaMemory mem;
        auto [clean, region] = setup(mem);
        CrashingMemory crashing(mem, budget);
        auto heap = UndoLogHeap::open(crashing, arena_base());
        heap.inject_defect(config.defect);
        std::size_t committed = 0;
        try {
            for (const auto& tx : wl.txs) {
                apply(heap, region, tx);
                ++committed;
            }
        } catch (const SimulatedCrash&) {
        }

        const std::size_t before = result.violations;
        auto fail = [&](const std::string& why) {
            ++result.violations;
            if (result.failures.size() < 5)
                result.failures.push_back("crash after " + std::to_string(budget) + " writes: " + why);
        };
        UndoLogHeap::recover(mem, arena_base());
        const auto once = mem.snapshot(arena_base(), config.arena_pages);
        UndoLogHeap::recover(mem, arena_base());
        if (mem.snapshot(arena_base(), config.arena_pages) != once) fail("recovery is not idempotent");

        auto reopened = UndoLogHeap::open(mem, arena_base());
        const Expected& want = prefix.at(committed);
        std::vector<std::byte> got(wl.region_bytes);
        reopened.read(reopened.get_root("data"), got);
        if (got != want.region) fail("data region differs from the committed prefix of " + std::to_string(committed));
        for (const auto& [name, value] : want.roots) {
            auto r = reopened.find_root(name);
            if (!r || r->raw() != value) fail("root " + name + " differs");
        }
        for (int k = 0; k <= 5; ++k) {
            const std::string name = "root" + std::to_string(k);
            if (!want.roots.contains(name) && reopened.find_root(name)) fail("root " + name + " should not exist");
        }
        result.points.push_back({budget, committed, result.violations == before});
    }
    return result;
}

}  // namespace ddc
