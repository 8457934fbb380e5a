#pragma once

#include "ddc/cc_heap.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ddc {

/// One transaction of a synthetic heap workload: byte writes into a data
/// region plus an optional root update.
struct HeapTx {
    struct Write {
        std::uint64_t offset = 0;
        std::vector<std::byte> bytes;
    };
    std::vector<Write> writes;
    std::optional<std::pair<std::string, std::uint64_t>> root;
};

struct HeapWorkload {
    std::uint64_t region_bytes = 0;
    std::vector<HeapTx> txs;
};

/// Seeded random workload; writes may straddle page boundaries.
HeapWorkload make_heap_workload(std::uint64_t seed, std::size_t n_tx, std::uint64_t region_bytes = 3 * kPageSize);

/// Arena geometry used by the sweep.
struct HeapSweepConfig {
    std::uint64_t seed = 1;
    std::size_t transactions = 50;
    std::uint64_t arena_pages = 8;
    std::uint64_t log_pages = 2;
    HeapDefect defect = HeapDefect::None;
};

struct HeapSweepResult {
    struct Point {
        std::size_t writes = 0;     ///< memory writes that landed before the crash
        std::size_t committed = 0;  ///< transactions committed before the crash
        bool ok = true;
    };
    std::size_t crash_points = 0;
    std::size_t violations = 0;
    std::size_t total_writes = 0;
    std::vector<std::string> failures;  ///< first few, human readable
    std::vector<Point> points;
};

/// Crashes the workload before every one of its memory writes (plus once
/// after the last), recovers from the arena bytes alone, and compares the
/// data region and roots against a replay of exactly the committed prefix.
/// Also checks that recovery is idempotent.
HeapSweepResult heap_crash_sweep(const HeapSweepConfig& config);

}  // namespace ddc
