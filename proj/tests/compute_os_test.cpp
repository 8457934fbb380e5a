#include "ddc/world.hpp"

#include <gtest/gtest.h>

using namespace ddc;
using namespace ddc::literals;

namespace {

std::vector<std::byte> bytes(std::string_view s)
{
    std::vector<std::byte> out;
    for (char c : s) out.push_back(static_cast<std::byte>(c));
    return out;
}

struct OsFixture : ::testing::Test {
    WorldConfig cfg = [] {
        WorldConfig c;
        c.racks = 2;
        c.rack.frames_per_element = 8;
        return c;
    }();
    World world{cfg};
    ProcessId a = world.spawn({0, 0});
    ProcessId b = world.spawn({0, 1});
    ProcessId c = world.spawn({1, 0});
    ComputeOs& os_a = world.os_of(a);
    ComputeOs& os_b = world.os_of(b);
};

}  // namespace

TEST_F(OsFixture, GrantTakesOneRackMmuRoundTrip)
{
    auto pages = os_a.sys_allocate(a, 1).value();
    std::optional<SimTime> replied, added;
    os_b.set_handler(b, SignalKind::PageAdded, [&](const Signal& s) {
        EXPECT_EQ(s.pages, pages);
        added = world.sim().now();
    });
    const SimTime start = world.sim().now();
    os_a.sys_grant(a, pages, b, [&](std::error_code ec) {
        EXPECT_FALSE(ec);
        replied = world.sim().now();
    });
    world.sim().run_until(50_us);
    ASSERT_TRUE(replied && added);
    EXPECT_EQ(*replied - start, 2_us);
    EXPECT_EQ(*added - start, 2_us);
    EXPECT_TRUE(os_a.in_use(a)->contains(pages[0]));
}

TEST_F(OsFixture, GrantUnderFutureProfile)
{
    WorldConfig f = cfg;
    f.profile = LatencyProfile::future();
    World w{f};
    auto x = w.spawn({0, 0});
    auto y = w.spawn({0, 1});
    auto pages = w.os_of(x).sys_allocate(x, 2).value();
    std::optional<SimTime> done;
    w.os_of(x).sys_grant(x, pages, y, [&](std::error_code) { done = w.sim().now(); });
    w.sim().run();
    EXPECT_EQ(done, 1_us);
}

TEST_F(OsFixture, PageAddedArrivesAfterEntryIsSet)
{
    auto pages = os_a.sys_allocate(a, 1).value();
    os_a.access_now(a, pages[0], AccessOp::Write, bytes("payload"), 0);
    std::optional<AccessResult> got;
    os_b.set_handler(b, SignalKind::PageAdded, [&](const Signal& s) {
        os_b.access(b, s.pages[0], AccessOp::Read, {}, 7, [&](const AccessResult& r) { got = r; });
    });
    os_a.sys_grant(a, pages, b, {});
    world.sim().run();
    ASSERT_TRUE(got && got->ok());
    EXPECT_EQ(got->data, bytes("payload"));
}

TEST_F(OsFixture, AccessRoundTripLatency)
{
    auto pages = os_a.sys_allocate(a, 1).value();
    std::optional<SimTime> at;
    os_a.access(a, pages[0] + 100, AccessOp::Write, bytes("z"), 0, [&](const AccessResult& r) {
        EXPECT_TRUE(r.ok());
        at = world.sim().now();
    });
    world.sim().run();
    EXPECT_EQ(at, 2_us);
    EXPECT_EQ(os_a.access_now(a, pages[0], AccessOp::Read, {}, 1).latency, 2_us);
}

TEST_F(OsFixture, UseAfterGrantFaultsAndCrashesWithoutHandler)
{
    auto pages = os_a.sys_allocate(a, 1).value();
    os_a.sys_grant(a, pages, b, {});
    world.sim().run();
    bool called = false;
    os_a.access(a, pages[0], AccessOp::Write, bytes("x"), 0, [&](const AccessResult&) { called = true; });
    world.sim().run();
    EXPECT_FALSE(called);
    EXPECT_FALSE(os_a.running(a));
    EXPECT_FALSE(world.rack(0).mmu->alive(a));
}

TEST_F(OsFixture, HandledFaultKeepsProcessAlive)
{
    std::optional<FaultKind> fault;
    os_a.set_handler(a, SignalKind::MemoryFault, [&](const Signal& s) { fault = s.fault; });
    os_a.access(a, VirtualAddress::make(a, 40), AccessOp::Read, {}, 1, {});
    world.sim().run();
    EXPECT_EQ(fault, FaultKind::NoEntry);
    EXPECT_TRUE(os_a.running(a));
}

TEST_F(OsFixture, SilentElementTimesOut)
{
    auto pages = os_a.sys_allocate(a, 1).value();
    world.memory(0, 0).fail_now();
    std::optional<SimTime> at;
    std::optional<FaultKind> fault;
    os_a.set_handler(a, SignalKind::MemoryFault, [&](const Signal& s) {
        fault = s.fault;
        at = world.sim().now();
        EXPECT_EQ(s.element, "r0.m0");
    });
    os_a.access(a, pages[0], AccessOp::Read, {}, 1, {});
    world.sim().run();
    EXPECT_EQ(fault, FaultKind::Timeout);
    EXPECT_EQ(at, world.access_timeout());
    EXPECT_EQ(world.access_timeout(), 10_us);
}

TEST_F(OsFixture, ExplicitElementErrorIsFast)
{
    WorldConfig e = cfg;
    e.rack.memory_failure_mode = FailureMode::Explicit;
    World w{e};
    auto x = w.spawn({0, 0});
    auto pages = w.os_of(x).sys_allocate(x, 1).value();
    w.memory(0, 0).fail_now();
    std::optional<FaultKind> fault;
    w.os_of(x).set_handler(x, SignalKind::MemoryFault, [&](const Signal& s) { fault = s.fault; });
    w.os_of(x).access(x, pages[0], AccessOp::Read, {}, 1, {});
    w.sim().run();
    EXPECT_EQ(fault, FaultKind::ElementError);
    EXPECT_EQ(w.sim().now(), 2_us);
}

TEST_F(OsFixture, NotifyGroupReachesEveryMember)
{
    EXPECT_EQ(os_a.sys_notify_group(a, {}), make_error_code(Errc::no_group_registered));
    EXPECT_EQ(os_a.sys_register_failure_group(a, {b, ProcessId{77}}), make_error_code(Errc::unknown_member));
    ASSERT_FALSE(os_a.sys_register_failure_group(a, {b, c}));
    std::map<ProcessId, SimTime> got;
    for (auto p : {b, c})
        world.os_of(p).set_handler(p, SignalKind::GroupFailureNotice, [&, p](const Signal& s) {
            EXPECT_EQ(s.failure.element, "r0.m1");
            got[p] = world.sim().now();
        });
    ASSERT_FALSE(os_a.sys_notify_group(a, {FailureDescriptor::Kind::MemoryElement, "r0.m1", a, FaultKind::Timeout}));
    world.sim().run();
    EXPECT_EQ(got.at(b), 1_us);
    EXPECT_EQ(got.at(c).ns(), 22500);
}

TEST_F(OsFixture, UnhandledElementFaultBroadcastsBeforeCrash)
{
    auto pages = os_a.sys_allocate(a, 1).value();
    ASSERT_FALSE(os_a.sys_register_failure_group(a, {b}));
    bool noticed = false;
    os_b.set_handler(b, SignalKind::GroupFailureNotice, [&](const Signal& s) {
        noticed = true;
        EXPECT_EQ(s.sender, a);
    });
    world.memory(0, 0).fail_now();
    os_a.access(a, pages[0], AccessOp::Read, {}, 1, {});
    world.sim().run();
    EXPECT_FALSE(os_a.running(a));
    EXPECT_TRUE(noticed);
}

TEST_F(OsFixture, ElementCrashLosesForwardingTables)
{
    ASSERT_FALSE(os_a.sys_register_failure_group(a, {b}));
    os_a.crash();
    EXPECT_FALSE(os_a.running(a));
    EXPECT_TRUE(os_a.forwarding(a)->groups.empty());
    EXPECT_EQ(os_a.sys_notify_group(a, {}), make_error_code(Errc::process_not_running));
}

TEST_F(OsFixture, CrashedElementDropsTimersUntilRevive)
{
    int ticks = 0;
    bool resumed = false;
    os_a.post(a, 5_us, "tick", [&] { ++ticks; });
    os_a.on_resume(a, [&] { resumed = true; });
    os_a.crash();
    world.sim().run_until(10_us);
    EXPECT_EQ(ticks, 0);
    os_a.revive();
    world.sim().run_until(11_us);
    EXPECT_TRUE(resumed);
    EXPECT_TRUE(os_a.running(a));
}

TEST_F(OsFixture, FencedNodeIsSilenced)
{
    bool delivered = false;
    world.tor().fence(os_a.ref());
    os_a.send(a, b, "hello", [&] { delivered = true; });
    world.sim().run();
    EXPECT_FALSE(delivered);
    EXPECT_GE(world.sim().trace().count("tor_drop"), 1u);
}

TEST_F(OsFixture, StealDeliversPageAddedToCaller)
{
    auto pages = os_a.sys_allocate(a, 2).value();
    os_b.sys_register_steal_group(b, {a, b});
    std::vector<VirtualAddress> added;
    os_b.set_handler(b, SignalKind::PageAdded, [&](const Signal& s) { added = s.pages; });
    std::optional<std::error_code> result;
    os_b.sys_steal(b, a, PageSelection::everything(), [&](std::error_code ec, const std::vector<VirtualAddress>&) { result = ec; });
    world.sim().run();
    ASSERT_TRUE(result);
    EXPECT_FALSE(*result);
    EXPECT_EQ(added, pages);
}
