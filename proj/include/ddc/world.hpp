#pragma once

#include "ddc/compute_os.hpp"
#include "ddc/latency.hpp"
#include "ddc/memory_element.hpp"
#include "ddc/rack_mmu.hpp"
#include "ddc/rack_monitor.hpp"
#include "ddc/simulator.hpp"
#include "ddc/tor_switch.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ddc {

struct RackShape {
    unsigned compute_elements = 4;
    unsigned memory_elements = 2;
    unsigned frames_per_element = 64;
    FailureMode memory_failure_mode = FailureMode::Silent;
};

struct WorldConfig {
    LatencyProfile profile = LatencyProfile::current();
    std::uint64_t seed = 1;
    unsigned racks = 1;
    RackShape rack;
    /// Zero selects the default of five Rack MMU round trips.
    SimTime access_timeout{};
    MonitorConfig monitor;
    RackMmuConfig mmu;
    bool trace_events = true;
};

struct Rack {
    std::uint32_t id = 0;
    std::vector<std::unique_ptr<MemoryElement>> memory;
    std::unique_ptr<RackMmu> mmu;
    std::vector<std::unique_ptr<ComputeOs>> compute;
    std::unique_ptr<RackMonitor> monitor;
};

/// Program started on a freshly provisioned process. `on_behalf_of` is the
/// dead process whose memory the new one is about to receive.
using Program = std::function<void(ProcessId fresh, ProcessId on_behalf_of)>;

/// A data center of racks joined by ToR switches: owns the simulator and
/// every element, allocates process ids, and keeps the process directory.
class World {
public:
    explicit World(WorldConfig config);

    World(const World&) = delete;
    World& operator=(const World&) = delete;

    [[nodiscard]] Simulator& sim() { return sim_; }
    [[nodiscard]] const Simulator& sim() const { return sim_; }
    [[nodiscard]] const WorldConfig& config() const { return config_; }
    [[nodiscard]] TorSwitch& tor() { return *tor_; }
    [[nodiscard]] std::size_t rack_count() const { return racks_.size(); }
    [[nodiscard]] Rack& rack(std::uint32_t id) { return *racks_.at(id); }
    [[nodiscard]] ComputeOs& compute(NodeRef ref);
    [[nodiscard]] MemoryElement& memory(std::uint32_t rack, std::uint32_t index);

    [[nodiscard]] SimTime access_timeout() const { return access_timeout_; }

    /// Creates a process on `where`, registered with that rack's MMU.
    ProcessId spawn(NodeRef where);
    [[nodiscard]] bool exists(ProcessId pid) const { return directory_.contains(pid); }
    [[nodiscard]] NodeRef host(ProcessId pid) const;
    [[nodiscard]] ComputeOs& os_of(ProcessId pid);
    [[nodiscard]] RackMmu& mmu_of(ProcessId pid);
    [[nodiscard]] std::vector<ProcessId> processes_on(NodeRef node) const;

    /// First compute element in the rack that is up, unfenced, and hosts
    /// no live process.
    [[nodiscard]] std::optional<NodeRef> spare_compute(std::uint32_t rack) const;

    void register_program(const std::string& name, Program program);
    /// Spawns on a spare element and starts `program`; nullopt when the
    /// rack has no spare or the program is unknown.
    std::optional<ProcessId> provision(std::uint32_t rack, const std::string& program, ProcessId on_behalf_of);

    /// Starts every rack monitor (and heartbeats) when enabled.
    void start_monitors();

private:
    WorldConfig config_;
    Simulator sim_;
    SimTime access_timeout_;
    std::unique_ptr<TorSwitch> tor_;
    std::vector<std::unique_ptr<Rack>> racks_;
    std::map<ProcessId, NodeRef> directory_;
    std::map<std::string, Program> programs_;
    std::uint32_t next_pid_ = 1;
};

}  // namespace ddc
