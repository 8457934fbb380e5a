#include "ddc/shuffle.hpp"
#include "ddc/world.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ddc;
using namespace ddc::literals;

namespace {

ShuffleConfig mode(TransferMode m)
{
    ShuffleConfig c;
    c.mode = m;
    return c;
}

JobMetrics run_in(const TaskGraph& g, const ShuffleConfig& c, const LatencyProfile& p, std::size_t* rtt_records = nullptr)
{
    World w(shuffle_world_config(g, p, c.seed));
    auto m = run_job(w, g, c);
    if (rtt_records) *rtt_records = w.sim().trace().count("shuffle_rtt");
    return m;
}

TaskGraph random_graph(std::mt19937_64& rng)
{
    TaskGraph g;
    const unsigned stages = 2 + rng() % 2;
    std::uint32_t next = 0;
    for (unsigned s = 0; s < stages; ++s) {
        g.stages.emplace_back();
        const unsigned n = 1 + rng() % 3;
        for (unsigned i = 0; i < n; ++i) g.stages.back().push_back(next++);
    }
    for (unsigned s = 0; s + 1 < stages; ++s)
        for (auto p : g.stages[s])
            for (auto c : g.stages[s + 1])
                if (rng() % 4 != 0 || c == g.stages[s + 1].front())
                    g.edges.push_back({p, c, 1 + rng() % (3 * kPageSize)});
    return g;
}

}  // namespace

TEST(TaskGraph, ShuffleShapeIsValid)
{
    auto g = TaskGraph::shuffle(4, 4, 100);
    EXPECT_NO_THROW(g.validate());
    EXPECT_EQ(g.task_count(), 8u);
    EXPECT_EQ(g.edges.size(), 16u);
    EXPECT_EQ(g.stage_of(5), 1u);
}

TEST(TaskGraph, RejectsBackwardDuplicateAndEmptyEdges)
{
    auto g = TaskGraph::shuffle(2, 2, 100);
    auto back = g;
    back.edges.push_back({2, 0, 100});
    EXPECT_THROW(back.validate(), Error);
    auto dup = g;
    dup.edges.push_back(dup.edges.front());
    EXPECT_THROW(dup.validate(), Error);
    auto empty = g;
    empty.edges.front().bytes = 0;
    EXPECT_THROW(empty.validate(), Error);
    auto same_stage = g;
    same_stage.edges.push_back({0, 1, 100});
    EXPECT_THROW(same_stage.validate(), Error);
}

TEST(Shuffle, PartitionTransferIsThreeRoundTripsOrOne)
{
    const auto g = TaskGraph::shuffle(1, 1, 1000);
    const auto t = run_job(g, mode(TransferMode::Transparent));
    const auto k = run_job(g, mode(TransferMode::Grant));
    ASSERT_TRUE(t.completed) << t.cause;
    ASSERT_TRUE(k.completed) << k.cause;
    EXPECT_EQ(t.edges[0].duration(), 6_us);
    EXPECT_EQ(k.edges[0].duration(), 2_us);
    EXPECT_EQ(t.edges[0].duration().ns(), 3 * k.edges[0].duration().ns());
    EXPECT_EQ(t.edges[0].rack_mmu_rtts, 2u);
    EXPECT_EQ(t.edges[0].tor_rtts, 1u);
    EXPECT_EQ(k.edges[0].rack_mmu_rtts, 1u);
    EXPECT_EQ(k.edges[0].tor_rtts, 0u);
}

TEST(Shuffle, TransferTimeFollowsTheLinkRtts)
{
    // unequal link classes separate the three phases
    LatencyProfile p = LatencyProfile::current();
    p.set_rtt(LinkClass::RackMmu, 3_us);
    p.set_rtt(LinkClass::IntraRackTor, 7_us);
    const auto g = TaskGraph::shuffle(2, 2, 9000);
    const auto t = run_in(g, mode(TransferMode::Transparent), p);
    const auto k = run_in(g, mode(TransferMode::Grant), p);
    for (const auto& e : t.edges) EXPECT_EQ(e.duration(), 3_us + 3_us + 7_us);
    for (const auto& e : k.edges) EXPECT_EQ(e.duration(), 3_us);
}

TEST(Shuffle, FourByFourCountsAndBytes)
{
    const auto g = TaskGraph::shuffle(4, 4, 5000);
    std::size_t t_records = 0, k_records = 0;
    const auto t = run_in(g, mode(TransferMode::Transparent), LatencyProfile::current(), &t_records);
    const auto k = run_in(g, mode(TransferMode::Grant), LatencyProfile::current(), &k_records);
    ASSERT_TRUE(t.completed && k.completed);
    EXPECT_EQ(t.rtts(), 48u);
    EXPECT_EQ(k.rtts(), 16u);
    EXPECT_EQ(t_records, 48u);
    EXPECT_EQ(k_records, 16u);
    EXPECT_EQ(t.tor_bytes, 16u * 5000u);
    EXPECT_EQ(k.tor_bytes, 0u);
    // 10us map, one concurrent transfer round, 10us reduce
    EXPECT_EQ(t.total_time, 26_us);
    EXPECT_EQ(k.total_time, 22_us);
}

TEST(Shuffle, SingleEdgeGrantMovesNoBytesOverTheTor)
{
    TaskGraph g;
    g.stages = {{0}, {1}};
    g.edges = {{0, 1, 3 * kPageSize}};
    const auto k = run_job(g, mode(TransferMode::Grant));
    ASSERT_TRUE(k.completed);
    EXPECT_EQ(k.tor_bytes, 0u);
}

TEST(Shuffle, ConsumersSeeTheProducersBytesInBothModes)
{
    const auto g = TaskGraph::shuffle(3, 2, 2 * kPageSize + 17);
    const auto t = run_job(g, mode(TransferMode::Transparent));
    const auto k = run_job(g, mode(TransferMode::Grant));
    ASSERT_EQ(t.edges.size(), k.edges.size());
    for (std::size_t e = 0; e < t.edges.size(); ++e) {
        EXPECT_NE(t.edges[e].producer_checksum, 0u);
        EXPECT_EQ(t.edges[e].producer_checksum, t.edges[e].consumer_checksum) << e;
        EXPECT_EQ(k.edges[e].producer_checksum, k.edges[e].consumer_checksum) << e;
        EXPECT_EQ(t.edges[e].consumer_checksum, k.edges[e].consumer_checksum) << e;
    }
}

TEST(Shuffle, RandomJobsKeepPerEdgeAccounting)
{
    std::mt19937_64 rng(11);
    for (int i = 0; i < 40; ++i) {
        const TaskGraph g = random_graph(rng);
        ShuffleConfig c;
        c.seed = 100 + i;
        c.stage_time = {5_us, 8_us, 3_us};
        c.mode = TransferMode::Transparent;
        const auto t = run_job(g, c);
        c.mode = TransferMode::Grant;
        const auto k = run_job(g, c);
        ASSERT_TRUE(t.completed && k.completed) << i;
        std::uint64_t bytes = 0;
        for (std::size_t e = 0; e < g.edges.size(); ++e) {
            bytes += g.edges[e].bytes;
            EXPECT_EQ(t.edges[e].rtts(), 3u);
            EXPECT_EQ(k.edges[e].rtts(), 1u);
            EXPECT_EQ(t.edges[e].consumer_checksum, k.edges[e].consumer_checksum);
            EXPECT_EQ(k.edges[e].producer_checksum, k.edges[e].consumer_checksum);
        }
        EXPECT_EQ(k.tor_bytes, 0u);
        EXPECT_EQ(t.tor_bytes, bytes);
        EXPECT_LT(k.total_time, t.total_time);
    }
}

TEST(Shuffle, MemoryFailureFailsTheJobWithACause)
{
    for (auto m : {TransferMode::Transparent, TransferMode::Grant}) {
        ShuffleConfig c = mode(m);
        c.faults.push_back({ShuffleFault::Kind::FailMemory, 0, 5_us});
        const auto r = run_job(TaskGraph::shuffle(2, 2, 1000), c);
        EXPECT_FALSE(r.completed) << to_string(m);
        EXPECT_FALSE(r.cause.empty());
    }
}

TEST(Shuffle, ModeNamesRoundTrip)
{
    EXPECT_EQ(transfer_mode_by_name("grant"), TransferMode::Grant);
    EXPECT_EQ(transfer_mode_by_name(to_string(TransferMode::Transparent)), TransferMode::Transparent);
    EXPECT_THROW((void)transfer_mode_by_name("rdma"), Error);
    EXPECT_EQ(straggler_policy_by_name("restart"), StragglerPolicy::Restart);
}

TEST(Straggler, StealResumesFromCommittedProgress)
{
    StragglerConfig c;
    World w(straggler_world_config(c, LatencyProfile::current()));
    const auto m = run_straggler_job(w, c);
    ASSERT_TRUE(m.completed) << m.cause;
    EXPECT_TRUE(m.results_ok);
    EXPECT_EQ(m.detected_by, "straggler");
    EXPECT_GT(m.progress_at_takeover, 0u);
    EXPECT_LT(m.progress_at_takeover, c.units);
    EXPECT_LE(m.reexecuted_units, m.inflight_at_takeover);
    EXPECT_EQ(m.executions, m.units_total + m.reexecuted_units);
    // the original faults on its next access and is gone
    EXPECT_EQ(w.sim().trace().count("task_resumed"), 1u);
    EXPECT_GE(w.sim().trace().count("process_crashed"), 1u);
}

TEST(Straggler, StealReexecutesLessThanRestart)
{
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        StragglerConfig c;
        c.seed = seed;
        c.straggler = static_cast<int>(seed % c.tasks);
        const auto steal = run_straggler_job(c);
        c.policy = StragglerPolicy::Restart;
        const auto restart = run_straggler_job(c);
        ASSERT_TRUE(steal.completed && restart.completed) << seed;
        EXPECT_TRUE(steal.results_ok && restart.results_ok);
        EXPECT_LE(steal.reexecuted_units, steal.inflight_at_takeover) << seed;
        EXPECT_LT(steal.reexecuted_units, restart.reexecuted_units) << seed;
        EXPECT_EQ(restart.reexecuted_units, restart.progress_at_takeover + restart.inflight_at_takeover);
        EXPECT_LT(steal.total_time, restart.total_time);
    }
}

TEST(Straggler, FailureNoticeRelaunchesBeforeTheTimeout)
{
    StragglerConfig c;
    c.crash_at = 300_us;
    const auto noticed = run_straggler_job(c);
    c.failure_notices = false;
    const auto timed_out = run_straggler_job(c);
    ASSERT_TRUE(noticed.completed && timed_out.completed);
    EXPECT_EQ(noticed.detected_by, "failure-notice");
    EXPECT_EQ(timed_out.detected_by, "straggler");
    ASSERT_TRUE(noticed.takeover_at && timed_out.takeover_at);
    EXPECT_LT(*noticed.takeover_at, *timed_out.takeover_at);
    // detection within interval x (threshold + 1), then the handler hop and
    // the notice hop
    const auto p = LatencyProfile::current();
    const SimTime interval = p.rtt(LinkClass::RackMmu) * 2;
    EXPECT_LE(*noticed.takeover_at - 300_us,
              interval * 4 + p.one_way(LinkClass::RackMmu) + p.one_way(LinkClass::IntraRackTor));
    // compute died, memory did not: the new task resumes
    EXPECT_TRUE(noticed.results_ok);
    EXPECT_GT(noticed.progress_at_takeover, 0u);
    EXPECT_LE(noticed.reexecuted_units, 1u);
}
