#pragma once

#include "ddc/address.hpp"
#include "ddc/simulator.hpp"

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace ddc {

/// A node attached to the ToR network: a compute element, or the rack's
/// own infrastructure (monitor) when `index` is kInfra.
struct NodeRef {
    static constexpr std::uint32_t kInfra = 0xffffffffu;

    std::uint32_t rack = 0;
    std::uint32_t index = 0;

    auto operator<=>(const NodeRef&) const = default;
    [[nodiscard]] bool infra() const { return index == kInfra; }
    /// "r0.c2" or "r0.infra"
    [[nodiscard]] std::string str() const;
};

/// Ethernet between compute elements: intra-rack or cross-rack latency by
/// placement, OpenFlow-style fence rules that drop a fenced node's traffic,
/// and endpoint routes that can be redirected to a new compute element.
class TorSwitch {
public:
    explicit TorSwitch(Simulator& sim);

    [[nodiscard]] ActorId actor() const { return actor_; }

    /// Delivers `handler` at `to_actor` one link traversal later. Dropped
    /// when either end is fenced at send time or at delivery time.
    void send(NodeRef from, NodeRef to, ActorId to_actor, std::string kind, std::function<void()> handler,
              std::size_t bytes = 0, nlohmann::json fields = nlohmann::json::object());

    [[nodiscard]] static LinkClass link_between(NodeRef a, NodeRef b)
    {
        return a.rack == b.rack ? LinkClass::IntraRackTor : LinkClass::CrossRackTor;
    }

    void fence(NodeRef node);
    [[nodiscard]] bool fenced(NodeRef node) const { return fenced_.contains(node); }
    [[nodiscard]] std::optional<SimTime> fenced_at(NodeRef node) const;

    /// Endpoint redirection ("member-2" -> current process).
    void set_route(const std::string& endpoint, ProcessId pid);
    [[nodiscard]] std::optional<ProcessId> route(const std::string& endpoint) const;

    [[nodiscard]] std::uint64_t bytes_sent() const { return bytes_; }
    [[nodiscard]] std::uint64_t bytes_sent(const std::string& kind) const;

private:
    Simulator& sim_;
    ActorId actor_;
    std::map<NodeRef, SimTime> fenced_;
    std::map<std::string, ProcessId> routes_;
    std::uint64_t bytes_ = 0;
    std::map<std::string, std::uint64_t> bytes_by_kind_;
};

}  // namespace ddc
