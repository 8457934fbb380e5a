#include "ddc/world.hpp"

#include <gtest/gtest.h>

using namespace ddc;
using namespace ddc::literals;

namespace {

WorldConfig monitored(SimTime interval = {})
{
    WorldConfig c;
    c.monitor.interval = interval;
    return c;
}

}  // namespace

TEST(RackMonitor, DefaultsFromRackMmuRtt)
{
    World w{monitored()};
    EXPECT_EQ(w.rack(0).monitor->interval(), 4_us);
    EXPECT_EQ(w.rack(0).monitor->config().miss_threshold, 3u);
}

TEST(RackMonitor, HealthyRunHasNoDetections)
{
    World w{monitored()};
    w.spawn({0, 0});
    w.start_monitors();
    w.sim().run_until(1000_us);
    EXPECT_TRUE(w.rack(0).monitor->detections().empty());
}

TEST(RackMonitor, DetectionWithinBound)
{
    World w{monitored(2_us)};
    w.start_monitors();
    w.sim().run_until(10_us);
    w.compute({0, 1}).crash();
    w.sim().run_until(100_us);
    auto at = w.rack(0).monitor->detected_at(1);
    ASSERT_TRUE(at);
    EXPECT_GT(*at, 16_us);
    EXPECT_LE(*at - 10_us, 2_us * 4);
    EXPECT_EQ(w.rack(0).monitor->detections().size(), 1u);
    EXPECT_EQ(w.sim().trace().count("detect"), 1u);
}

TEST(RackMonitor, DetectionBeatsEndToEndTimeout)
{
    for (std::uint32_t crash_us = 3; crash_us < 40; ++crash_us) {
        World w{monitored()};
        w.start_monitors();
        w.sim().run_until(SimTime::from_us(crash_us));
        w.compute({0, 2}).crash();
        w.sim().run_until(SimTime::from_us(crash_us + 200));
        auto at = w.rack(0).monitor->detected_at(2);
        ASSERT_TRUE(at);
        const SimTime latency = *at - SimTime::from_us(crash_us);
        EXPECT_LE(latency, w.rack(0).monitor->interval() * 4);
        EXPECT_LT(latency, 135_us);
    }
}

TEST(RackMonitor, HandlerRunsOnceAndStealsOnBehalf)
{
    World w{monitored()};
    const auto victim = w.spawn({0, 0});
    auto pages = w.os_of(victim).sys_allocate(victim, 3).value();
    std::optional<ProcessId> fresh;
    std::vector<VirtualAddress> received;
    w.register_program("heir", [&](ProcessId p, ProcessId dead) {
        EXPECT_EQ(dead, victim);
        fresh = p;
        w.os_of(p).set_handler(p, SignalKind::PageAdded, [&](const Signal& s) { received = s.pages; });
    });
    using K = HandlerStep::Kind;
    w.rack(0).monitor->register_handler(
        victim, {{{K::RequestProvision, "heir"}, {K::RevokeMemory, {}}, {K::StealOnBehalf, {}}, {K::FenceElement, {}}}});
    w.start_monitors();
    w.sim().run_until(20_us);
    w.compute({0, 0}).crash();
    w.sim().run_until(200_us);
    EXPECT_EQ(w.rack(0).monitor->handler_runs(), 1u);
    ASSERT_TRUE(fresh);
    EXPECT_NE(w.host(*fresh), (NodeRef{0, 0}));
    EXPECT_EQ(received, pages);
    EXPECT_TRUE(w.tor().fenced({0, 0}));
    // isolation: the monitor never touched a frame
    for (const auto& e : w.sim().trace().entries())
        if (e.kind == "me_access") EXPECT_NE(e.fields.value("requester", ""), "r0.monitor");
}

TEST(RackMonitor, ReRegisterReplaces)
{
    World w{monitored()};
    const auto p = w.spawn({0, 0});
    using K = HandlerStep::Kind;
    w.rack(0).monitor->register_handler(p, {{{K::FenceElement, {}}}});
    w.rack(0).monitor->register_handler(p, {{}});
    w.start_monitors();
    w.compute({0, 0}).crash();
    w.sim().run_until(100_us);
    EXPECT_EQ(w.rack(0).monitor->handler_runs(), 1u);
    EXPECT_FALSE(w.tor().fenced({0, 0}));
}

TEST(RackMonitor, FailedMonitorDetectsNothing)
{
    World w{monitored()};
    w.spawn({0, 0});
    w.start_monitors();
    w.rack(0).monitor->fail();
    w.compute({0, 0}).crash();
    w.sim().run_until(500_us);
    EXPECT_TRUE(w.rack(0).monitor->detections().empty());
}

TEST(RackMonitor, GroupNotifiedAfterHandler)
{
    World w{monitored()};
    const auto p = w.spawn({0, 0});
    const auto q = w.spawn({0, 1});
    std::optional<SimTime> noticed;
    w.os_of(q).set_handler(q, SignalKind::GroupFailureNotice, [&](const Signal& s) {
        EXPECT_EQ(s.failure.kind, FailureDescriptor::Kind::ComputeElement);
        noticed = w.sim().now();
    });
    w.rack(0).monitor->register_group(p, {p, q});
    w.start_monitors();
    w.compute({0, 0}).crash();
    w.sim().run_until(100_us);
    ASSERT_TRUE(noticed);
    EXPECT_GT(*noticed, *w.rack(0).monitor->detected_at(0));
}
