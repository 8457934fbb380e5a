#pragma once

#include "ddc/address.hpp"
#include "ddc/simulator.hpp"
#include "ddc/tor_switch.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ddc {

class World;

struct MonitorConfig {
    /// Zero selects the default of two Rack MMU round trips.
    SimTime interval{};
    unsigned miss_threshold = 3;
    bool enabled = true;
};

/// One control-plane step a fast failure handler may ask for. Handlers are
/// data, not code: the monitor can only issue these requests and never
/// touches process memory.
struct HandlerStep {
    enum class Kind : std::uint8_t {
        RequestProvision,  ///< start `program` on a spare compute element of the rack
        RevokeMemory,      ///< revoke every page of the dead process
        StealOnBehalf,     ///< move the dead process's pages to the provisioned one
        FenceElement,      ///< fence the failed compute element at the ToR
        NotifyGroup,       ///< broadcast a compute-failure notice to the owner's group
    };
    Kind kind = Kind::NotifyGroup;
    std::string program;
};

struct FastFailureHandler {
    std::vector<HandlerStep> steps;
};

struct Detection {
    std::uint32_t element = 0;
    SimTime at;
};

/// Heartbeat-based compute-element failure detector for one rack. On a
/// detection it runs registered fast failure handlers for the processes
/// that lived there, then notifies registered groups.
class RackMonitor {
public:
    RackMonitor(World& world, std::uint32_t rack, MonitorConfig config);

    [[nodiscard]] ActorId actor() const { return actor_; }
    [[nodiscard]] const MonitorConfig& config() const { return config_; }
    [[nodiscard]] SimTime interval() const { return config_.interval; }

    /// Begins the periodic checks and the element heartbeats.
    void start();

    /// Replaces any earlier handler for `pid`.
    void register_handler(ProcessId pid, FastFailureHandler handler);
    void register_group(ProcessId pid, std::set<ProcessId> members);

    void on_heartbeat(std::uint32_t element);
    /// One periodic check; returns the elements declared failed by it.
    std::vector<std::uint32_t> check();

    /// The monitor itself is a single point of failure.
    void fail();
    [[nodiscard]] bool failed() const { return failed_; }

    [[nodiscard]] const std::vector<Detection>& detections() const { return detections_; }
    [[nodiscard]] std::optional<SimTime> detected_at(std::uint32_t element) const;
    [[nodiscard]] std::size_t handler_runs() const { return handler_runs_; }

    /// Executes `handler`'s steps at the Rack MMU for a process that died on
    /// `element`, then notifies its group. Also used when the request comes
    /// from a consensus decision instead of a detection.
    void run_handler(ProcessId dead, const FastFailureHandler& handler, std::uint32_t element);

private:
    void declare(std::uint32_t element);
    void tick();

    World& world_;
    std::uint32_t rack_;
    MonitorConfig config_;
    ActorId actor_;
    bool failed_ = false;
    bool started_ = false;
    std::map<std::uint32_t, SimTime> last_seen_;
    std::set<std::uint32_t> declared_;
    std::map<ProcessId, FastFailureHandler> handlers_;
    std::map<ProcessId, std::set<ProcessId>> groups_;
    std::vector<Detection> detections_;
    std::size_t handler_runs_ = 0;
};

}  // namespace ddc
