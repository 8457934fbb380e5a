#include "ddc/memory_element.hpp"

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

struct ElementFixture : ::testing::Test {
    Simulator sim{LatencyProfile::current(), 1};
    MemoryElement me{sim, 0, "r0.m0", 4, FailureMode::Silent};
    ProcessId p1{1};
    ProcessId p2{2};
    VirtualAddress v = VirtualAddress::make(p1, 0, 0);

    void map(ProcessId pid, VirtualAddress page, std::uint32_t frame, std::uint8_t perms = kPermRW)
    {
        ASSERT_TRUE(me.apply_mapping_update({MappingUpdate::Op::Set, pid, page, frame, perms, false}));
    }
};

}  // namespace

TEST_F(ElementFixture, ReadBackWhatWasWritten)
{
    map(p1, v, 0);
    auto w = me.serve(p1, v + 8, AccessOp::Write, bytes("hello"), 0, "r0.c0");
    ASSERT_TRUE(w && w->ok());
    auto r = me.serve(p1, v + 8, AccessOp::Read, {}, 5, "r0.c0");
    ASSERT_TRUE(r && r->ok());
    EXPECT_EQ(r->data, bytes("hello"));
}

TEST_F(ElementFixture, MissingEntryFaults)
{
    auto r = me.serve(p1, v, AccessOp::Read, {}, 1, "r0.c0");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->fault, FaultKind::NoEntry);
}

TEST_F(ElementFixture, EntryIsKeyedByRequester)
{
    map(p1, v, 0);
    // p2 presents p1's address but holds no entry for it
    auto r = me.serve(p2, v, AccessOp::Read, {}, 1, "r0.c1");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->fault, FaultKind::NoEntry);
}

TEST_F(ElementFixture, ReadOnlyEntryRejectsWrites)
{
    map(p1, v, 0, kPermRead);
    auto r = me.serve(p1, v, AccessOp::Write, bytes("x"), 0, "r0.c0");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->fault, FaultKind::Permission);
}

TEST_F(ElementFixture, ClearIsIdempotent)
{
    map(p1, v, 0);
    MappingUpdate clear{MappingUpdate::Op::Clear, p1, v, 0, kPermNone, false};
    EXPECT_TRUE(me.apply_mapping_update(clear));
    EXPECT_TRUE(me.apply_mapping_update(clear));
    EXPECT_TRUE(me.table().empty());
}

TEST_F(ElementFixture, ZeroFillOnSet)
{
    map(p1, v, 1);
    me.serve(p1, v, AccessOp::Write, bytes("dirty"), 0, "r0.c0");
    ASSERT_TRUE(me.apply_mapping_update({MappingUpdate::Op::Set, p2, VirtualAddress::make(p2, 0, 0), 1, kPermRW, true}));
    for (auto b : me.frame(1)) ASSERT_EQ(b, std::byte{0});
}

TEST_F(ElementFixture, SilentFailureNeverReplies)
{
    map(p1, v, 0);
    me.fail_now();
    EXPECT_FALSE(me.serve(p1, v, AccessOp::Read, {}, 1, "r0.c0").has_value());
    EXPECT_FALSE(me.apply_mapping_update({MappingUpdate::Op::Clear, p1, v, 0, kPermNone, false}));
}

TEST(MemoryElement, ExplicitFailureAnswersWithError)
{
    Simulator sim{LatencyProfile::current(), 1};
    MemoryElement me{sim, 0, "r0.m0", 2, FailureMode::Explicit};
    const ProcessId p{1};
    const auto v = VirtualAddress::make(p, 0, 0);
    me.apply_mapping_update({MappingUpdate::Op::Set, p, v, 0, kPermRW, false});
    me.inject_failure(5_us);
    sim.run_until(6_us);
    ASSERT_TRUE(me.failed());
    EXPECT_EQ(*me.failed_at(), 5_us);
    auto r = me.serve(p, v, AccessOp::Read, {}, 1, "r0.c0");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->fault, FaultKind::ElementError);
}

TEST_F(ElementFixture, AccessMayNotCrossPages)
{
    map(p1, v, 0);
    EXPECT_THROW(me.serve(p1, v + (kPageSize - 2), AccessOp::Read, {}, 4, "r0.c0"), std::invalid_argument);
}

TEST(VirtualAddress, EncodesPidPageOffset)
{
    const auto v = VirtualAddress::make(ProcessId{3}, 5, 17);
    EXPECT_EQ(v.raw(), (std::uint64_t{3} << 40) | (5u << 12) | 17u);
    EXPECT_EQ(v.pid(), ProcessId{3});
    EXPECT_EQ(v.page_number(), 5u);
    EXPECT_EQ(v.offset(), 17u);
    EXPECT_LT(v.raw(), std::uint64_t{1} << 48);
    EXPECT_THROW(VirtualAddress::make(ProcessId{256}, 0, 0), std::out_of_range);
    EXPECT_THROW(VirtualAddress::make(ProcessId{1}, 0, kPageSize), std::out_of_range);
}
