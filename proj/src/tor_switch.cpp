#include "ddc/tor_switch.hpp"

namespace ddc {

std::string NodeRef::str() const
{
    return "r" + std::to_string(rack) + (infra() ? ".infra" : ".c" + std::to_string(index));
}

TorSwitch::TorSwitch(Simulator& sim) : sim_(sim), actor_(sim.add_actor("tor")) {}

void TorSwitch::send(NodeRef from, NodeRef to, ActorId to_actor, std::string kind, std::function<void()> handler,
                     std::size_t bytes, nlohmann::json fields)
{
    fields["from"] = from.str();
    fields["to"] = to.str();
    fields["msg"] = kind;
    if (fenced(from) || fenced(to)) {
        sim_.record("tor", "tor_drop", std::move(fields));
        return;
    }
    bytes_ += bytes;
    bytes_by_kind_[kind] += bytes;
    if (bytes > 0) fields["bytes"] = bytes;
    sim_.schedule(to_actor, Delivery::over(link_between(from, to)), "tor_" + kind,
                  [this, from, to, fields, h = std::move(handler)] {
                      if (fenced(from) || fenced(to)) {
                          sim_.record("tor", "tor_drop", fields);
                          return;
                      }
                      h();
                  },
                  fields);
}

void TorSwitch::fence(NodeRef node)
{
    if (fenced_.contains(node)) return;
    fenced_[node] = sim_.now();
    sim_.record("tor", "fence", {{"node", node.str()}});
}

std::optional<SimTime> TorSwitch::fenced_at(NodeRef node) const
{
    auto it = fenced_.find(node);
    if (it == fenced_.end()) return std::nullopt;
    return it->second;
}

void TorSwitch::set_route(const std::string& endpoint, ProcessId pid)
{
    routes_[endpoint] = pid;
    sim_.record("tor", "route", {{"endpoint", endpoint}, {"pid", pid.value}});
}

std::optional<ProcessId> TorSwitch::route(const std::string& endpoint) const
{
    auto it = routes_.find(endpoint);
    if (it == routes_.end()) return std::nullopt;
    return it->second;
}

std::uint64_t TorSwitch::bytes_sent(const std::string& kind) const
{
    auto it = bytes_by_kind_.find(kind);
    return it == bytes_by_kind_.end() ? 0 : it->second;
}

}  // namespace ddc
