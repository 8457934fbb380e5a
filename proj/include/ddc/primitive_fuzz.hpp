#pragma once

#include "ddc/latency.hpp"
#include "ddc/rack_mmu.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ddc {

class World;
struct WorldConfig;

/// Properties checked after every random grant/steal/fail script.
inline constexpr std::array<std::string_view, 5> kPrimitiveProperties{
    "single-owner",           ///< no frame in two V2P tables, or in two element entries at rest
    "address-stability",      ///< a page keeps its address and frame wherever it moves
    "content-preservation",   ///< page bytes survive every move unchanged
    "capability-soundness",   ///< moves and accesses only by owners or group members
    "revoke-before-reassign", ///< an element never maps one frame for two processes
};

struct PrimitiveScriptConfig {
    unsigned processes = 4;
    unsigned pages = 32;  ///< per process
    unsigned ops = 48;
    /// Allow memory-element and process failures in the script.
    bool failures = true;
    MmuDefect defect = MmuDefect::None;
    LatencyProfile profile = LatencyProfile::current();
};

struct PrimitiveRunReport {
    std::uint64_t seed = 0;
    /// Attempted and successful operations by kind.
    std::map<std::string, std::size_t> attempted;
    std::map<std::string, std::size_t> succeeded;
    /// property -> number of violations; every property is present.
    std::map<std::string, std::size_t> violations;
    std::vector<std::string> details;  ///< first few, human readable

    [[nodiscard]] bool ok() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

WorldConfig primitive_world_config(const PrimitiveScriptConfig& config, std::uint64_t seed);
/// Runs one seeded script on `world` (built by primitive_world_config).
PrimitiveRunReport run_primitive_script(World& world, const PrimitiveScriptConfig& config, std::uint64_t seed);
PrimitiveRunReport run_primitive_script(const PrimitiveScriptConfig& config, std::uint64_t seed);

struct PrimitiveFuzzSummary {
    std::size_t runs = 0;
    std::map<std::string, std::size_t> violations;
    std::map<std::string, std::size_t> succeeded;
    /// seed -> first violation
    std::map<std::uint64_t, std::string> failures;

    [[nodiscard]] bool ok() const { return failures.empty(); }
    [[nodiscard]] nlohmann::json to_json() const;
};

PrimitiveFuzzSummary primitive_fuzz(const PrimitiveScriptConfig& config, std::uint64_t first_seed, std::size_t runs);

}  // namespace ddc
