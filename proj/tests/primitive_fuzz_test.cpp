#include "ddc/primitive_fuzz.hpp"
#include "ddc/world.hpp"

#include <gtest/gtest.h>

using namespace ddc;

TEST(PrimitiveFuzz, ThousandScriptsKeepEveryProperty)
{
    PrimitiveScriptConfig c;
    const auto s = primitive_fuzz(c, 1, 1000);
    EXPECT_EQ(s.runs, 1000u);
    EXPECT_TRUE(s.ok()) << s.to_json().dump();
    for (auto p : kPrimitiveProperties) EXPECT_EQ(s.violations.at(std::string(p)), 0u) << p;
    // the scripts exercise every primitive, including the failures
    for (auto op : {"grant", "steal", "group", "revoke", "write", "crash", "fail-memory"})
        EXPECT_GT(s.succeeded.count(op) ? s.succeeded.at(op) : 0u, 0u) << op;
}

TEST(PrimitiveFuzz, KeptSourceMappingBreaksSingleOwner)
{
    PrimitiveScriptConfig c;
    c.defect = MmuDefect::KeepSourceMapping;
    const auto s = primitive_fuzz(c, 1, 50);
    EXPECT_FALSE(s.ok());
    EXPECT_GT(s.violations.at("single-owner"), 0u);
}

TEST(PrimitiveFuzz, SetBeforeClearBreaksRevokeBeforeReassign)
{
    PrimitiveScriptConfig c;
    c.defect = MmuDefect::SetBeforeClear;
    const auto s = primitive_fuzz(c, 1, 50);
    EXPECT_FALSE(s.ok());
    EXPECT_GT(s.violations.at("revoke-before-reassign"), 0u);
    EXPECT_EQ(s.violations.at("single-owner"), 0u);
}

TEST(PrimitiveFuzz, ScriptsReplayFromTheSeed)
{
    PrimitiveScriptConfig c;
    for (std::uint64_t seed : {3u, 77u}) {
        World a(primitive_world_config(c, seed));
        World b(primitive_world_config(c, seed));
        const auto ra = run_primitive_script(a, c, seed);
        const auto rb = run_primitive_script(b, c, seed);
        EXPECT_EQ(ra.to_json(), rb.to_json());
        ASSERT_EQ(a.sim().trace().entries().size(), b.sim().trace().entries().size());
        EXPECT_GT(a.sim().trace().count("mmu_grant") + a.sim().trace().count("mmu_steal"), 0u);
    }
}

TEST(PrimitiveFuzz, EmptyRunListsEveryProperty)
{
    const auto s = primitive_fuzz({}, 1, 0);
    EXPECT_EQ(s.runs, 0u);
    EXPECT_TRUE(s.ok());
    EXPECT_EQ(s.violations.size(), kPrimitiveProperties.size());
}
