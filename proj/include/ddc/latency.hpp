#pragma once

#include "ddc/sim_time.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace ddc {

enum class LinkClass : std::uint8_t {
    RackMmu = 0,       ///< memory interconnect through the Rack MMU
    IntraRackTor = 1,  ///< Ethernet through the local ToR switch
    CrossRackTor = 2,  ///< Ethernet across racks
};

std::string_view to_string(LinkClass link);

/// Round-trip times per link class. One-way latency is half the RTT.
struct LatencyProfile {
    std::string name = "current";
    std::array<SimTime, 3> rtts{};
    /// Uniform extra one-way delay in [0, jitter_fraction * one_way], drawn
    /// from the simulation RNG. Zero keeps runs fully deterministic.
    double jitter_fraction = 0.0;

    [[nodiscard]] SimTime rtt(LinkClass link) const { return rtts[static_cast<std::size_t>(link)]; }
    [[nodiscard]] SimTime one_way(LinkClass link) const { return rtt(link) / 2; }
    void set_rtt(LinkClass link, SimTime value) { rtts[static_cast<std::size_t>(link)] = value; }

    /// Measured intra-rack RPC (2us) for both ToR and Rack MMU paths,
    /// measured cloud cross-rack (45us). The default.
    static LatencyProfile current();
    /// Next-generation NICs: 1us intra-rack and Rack MMU, 45us cross-rack.
    static LatencyProfile future();
    /// Plain cloud VM networking on every ToR hop (45us); the Rack MMU path
    /// keeps the 2us intra-rack figure.
    static LatencyProfile cloud();
    /// Throws Error(config_invalid) for unknown names.
    static LatencyProfile by_name(std::string_view name);
};

}  // namespace ddc
