#include "ddc/world.hpp"

namespace ddc {

World::World(WorldConfig config) : config_(std::move(config)), sim_(config_.profile, config_.seed)
{
    if (config_.racks == 0 || config_.rack.compute_elements == 0 || config_.rack.memory_elements == 0)
        throw Error(Errc::config_invalid, "a world needs at least one rack, compute element and memory element");
    sim_.set_trace_events(config_.trace_events);
    access_timeout_ = config_.access_timeout == SimTime{} ? config_.profile.rtt(LinkClass::RackMmu) * 5 : config_.access_timeout;
    tor_ = std::make_unique<TorSwitch>(sim_);

    for (std::uint32_t r = 0; r < config_.racks; ++r) {
        auto rack = std::make_unique<Rack>();
        rack->id = r;
        const std::string prefix = "r" + std::to_string(r);
        std::vector<MemoryElement*> elements;
        for (std::uint32_t m = 0; m < config_.rack.memory_elements; ++m) {
            rack->memory.push_back(std::make_unique<MemoryElement>(sim_, m, prefix + ".m" + std::to_string(m),
                                                                   config_.rack.frames_per_element,
                                                                   config_.rack.memory_failure_mode));
            elements.push_back(rack->memory.back().get());
        }
        rack->mmu = std::make_unique<RackMmu>(sim_, prefix + ".mmu", elements, config_.mmu);
        for (std::uint32_t c = 0; c < config_.rack.compute_elements; ++c)
            rack->compute.push_back(std::make_unique<ComputeOs>(*this, NodeRef{r, c}));
        rack->monitor = std::make_unique<RackMonitor>(*this, r, config_.monitor);

        Rack* raw = rack.get();
        raw->mmu->on_invalidate = [this, raw](ProcessId owner, std::uint32_t compute, const std::vector<VirtualAddress>& pages) {
            if (compute >= raw->compute.size()) return;
            ComputeOs& os = *raw->compute[compute];
            sim_.schedule(os.actor(), Delivery::over(LinkClass::RackMmu), "invalidate",
                          [&os, owner, pages] { os.invalidate(owner, pages); }, {{"pid", owner.value}});
        };
        racks_.push_back(std::move(rack));
    }
}

ComputeOs& World::compute(NodeRef ref)
{
    return *rack(ref.rack).compute.at(ref.index);
}

MemoryElement& World::memory(std::uint32_t rack_id, std::uint32_t index)
{
    return *rack(rack_id).memory.at(index);
}

ProcessId World::spawn(NodeRef where)
{
    if (next_pid_ > kMaxPid) throw Error(Errc::config_invalid, "process id space exhausted");
    ComputeOs& os = compute(where);
    const ProcessId pid{next_pid_++};
    directory_[pid] = where;
    rack(where.rack).mmu->register_process(pid, where.index);
    os.host(pid);
    sim_.record(os.actor(), "spawn", {{"pid", pid.value}});
    return pid;
}

NodeRef World::host(ProcessId pid) const
{
    auto it = directory_.find(pid);
    if (it == directory_.end()) throw Error(Errc::unknown_process);
    return it->second;
}

ComputeOs& World::os_of(ProcessId pid) { return compute(host(pid)); }

RackMmu& World::mmu_of(ProcessId pid) { return *rack(host(pid).rack).mmu; }

std::vector<ProcessId> World::processes_on(NodeRef node) const
{
    std::vector<ProcessId> out;
    for (const auto& [pid, where] : directory_)
        if (where == node) out.push_back(pid);
    return out;
}

std::optional<NodeRef> World::spare_compute(std::uint32_t rack_id) const
{
    const Rack& r = *racks_.at(rack_id);
    for (const auto& os : r.compute) {
        if (os->crashed() || tor_->fenced(os->ref()) || os->has_live_process()) continue;
        return os->ref();
    }
    return std::nullopt;
}

void World::register_program(const std::string& name, Program program)
{
    programs_[name] = std::move(program);
}

std::optional<ProcessId> World::provision(std::uint32_t rack_id, const std::string& program, ProcessId on_behalf_of)
{
    auto prog = programs_.find(program);
    if (prog == programs_.end()) return std::nullopt;
    auto where = spare_compute(rack_id);
    if (!where) return std::nullopt;
    const ProcessId fresh = spawn(*where);
    sim_.record(compute(*where).actor(), "provision", {{"pid", fresh.value}, {"program", program}, {"for", on_behalf_of.value}});
    prog->second(fresh, on_behalf_of);
    return fresh;
}

void World::start_monitors()
{
    if (!config_.monitor.enabled) return;
    for (auto& r : racks_) r->monitor->start();
}

}  // namespace ddc
