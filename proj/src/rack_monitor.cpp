#include "ddc/rack_monitor.hpp"

#include "ddc/world.hpp"

#include <memory>

namespace ddc {

RackMonitor::RackMonitor(World& world, std::uint32_t rack, MonitorConfig config)
    : world_(world), rack_(rack), config_(config)
{
    if (config_.interval == SimTime{}) config_.interval = world_.sim().profile().rtt(LinkClass::RackMmu) * 2;
    actor_ = world_.sim().add_actor("r" + std::to_string(rack) + ".monitor", [this] { return !failed_; });
}

void RackMonitor::start()
{
    if (started_ || !config_.enabled) return;
    started_ = true;
    Simulator& sim = world_.sim();
    Rack& r = world_.rack(rack_);
    for (const auto& os : r.compute) {
        last_seen_[os->ref().index] = sim.now();
        os->start_heartbeats(actor_, config_.interval, [this](std::uint32_t e) { on_heartbeat(e); });
    }
    sim.schedule(actor_, Delivery::after(config_.interval), "monitor_check", [this] { tick(); });
}

void RackMonitor::register_handler(ProcessId pid, FastFailureHandler handler)
{
    handlers_[pid] = std::move(handler);
    world_.sim().record(actor_, "handler_registered", {{"pid", pid.value}, {"steps", handlers_[pid].steps.size()}});
}

void RackMonitor::register_group(ProcessId pid, std::set<ProcessId> members)
{
    groups_[pid] = std::move(members);
}

void RackMonitor::on_heartbeat(std::uint32_t element)
{
    if (failed_) return;
    last_seen_[element] = world_.sim().now();
}

std::vector<std::uint32_t> RackMonitor::check()
{
    std::vector<std::uint32_t> out;
    if (failed_) return out;
    const SimTime now = world_.sim().now();
    const SimTime limit = config_.interval * config_.miss_threshold;
    for (const auto& [element, seen] : last_seen_) {
        if (declared_.contains(element)) continue;
        if (now - seen > limit) out.push_back(element);
    }
    for (auto e : out) declare(e);
    return out;
}

void RackMonitor::tick()
{
    if (failed_) return;
    check();
    world_.sim().schedule(actor_, Delivery::after(config_.interval), "monitor_check", [this] { tick(); });
}

void RackMonitor::fail()
{
    if (failed_) return;
    failed_ = true;
    world_.sim().record(actor_, "monitor_failed");
}

std::optional<SimTime> RackMonitor::detected_at(std::uint32_t element) const
{
    for (const auto& d : detections_)
        if (d.element == element) return d.at;
    return std::nullopt;
}

void RackMonitor::declare(std::uint32_t element)
{
    Simulator& sim = world_.sim();
    declared_.insert(element);
    detections_.push_back({element, sim.now()});
    const NodeRef node{rack_, element};
    sim.record(actor_, "detect", {{"element", node.str()}, {"time", sim.now().ns()}});

    ComputeOs& os = world_.compute(node);
    for (auto pid : os.processes()) {
        if (!os.live(pid)) continue;
        auto h = handlers_.find(pid);
        if (h != handlers_.end()) {
            run_handler(pid, h->second, element);
        } else if (groups_.contains(pid)) {
            run_handler(pid, FastFailureHandler{{HandlerStep{HandlerStep::Kind::NotifyGroup, {}}}}, element);
        }
    }
}

namespace {

struct HandlerRun {
    ProcessId dead;
    NodeRef node;
    std::vector<HandlerStep> steps;
    std::size_t next = 0;
    std::optional<ProcessId> fresh;
    bool notified = false;
};

}  // namespace

void RackMonitor::run_handler(ProcessId dead, const FastFailureHandler& handler, std::uint32_t element)
{
    Simulator& sim = world_.sim();
    ++handler_runs_;
    sim.record(actor_, "handler_run", {{"pid", dead.value}, {"time", sim.now().ns()}});

    auto run = std::make_shared<HandlerRun>();
    run->dead = dead;
    run->node = NodeRef{rack_, element};
    run->steps = handler.steps;

    // The steps travel as one control message and execute at the Rack MMU.
    RackMmu& mmu = *world_.rack(rack_).mmu;
    auto step = std::make_shared<std::function<void()>>();
    auto notify = [this, run] {
        auto g = groups_.find(run->dead);
        if (g == groups_.end() || run->notified) return;
        run->notified = true;
        FailureDescriptor d{FailureDescriptor::Kind::ComputeElement, run->node.str(), run->dead, std::nullopt};
        for (auto member : g->second) {
            if (!world_.exists(member) || member == run->dead) continue;
            ComputeOs& dos = world_.os_of(member);
            world_.tor().send(
                NodeRef{rack_, NodeRef::kInfra}, dos.ref(), dos.actor(), "failure_notice",
                [&dos, member, d] {
                    Signal sig;
                    sig.kind = SignalKind::GroupFailureNotice;
                    sig.failure = d;
                    sig.element = d.element;
                    sig.sender = d.pid;
                    dos.deliver_signal(member, sig);
                },
                0, {{"member", member.value}, {"element", d.element}});
        }
    };
    *step = [this, run, step, notify, &mmu] {
        Simulator& s = world_.sim();
        if (run->next == run->steps.size()) {
            notify();
            s.record(actor_, "handler_done", {{"pid", run->dead.value}});
            *step = nullptr;  // break the self-reference
            return;
        }
        const HandlerStep st = run->steps[run->next++];
        auto cont = [step] {
            if (*step) (*step)();
        };
        auto fail = [this, run, step, notify](const std::string& why) {
            world_.sim().record(actor_, "handler_step_failed", {{"pid", run->dead.value}, {"reason", why}});
            *step = nullptr;
            notify();
        };
        switch (st.kind) {
        case HandlerStep::Kind::RequestProvision: {
            run->fresh = world_.provision(rack_, st.program, run->dead);
            if (!run->fresh) return fail("no-spare-or-program");
            s.record(actor_, "handler_provision", {{"pid", run->dead.value}, {"fresh", run->fresh->value}});
            return cont();
        }
        case HandlerStep::Kind::RevokeMemory:
            mmu.revoke(run->dead, PageSelection::everything(), [cont, fail](std::error_code ec) {
                if (ec) return fail(ec.message());
                cont();
            });
            return;
        case HandlerStep::Kind::StealOnBehalf: {
            if (!run->fresh) return fail("nothing-provisioned");
            const ProcessId fresh = *run->fresh;
            mmu.register_group({run->dead, fresh});
            mmu.steal(fresh, run->dead, PageSelection::everything(),
                      [this, fresh, run, cont, fail](std::error_code ec, const std::vector<VirtualAddress>& moved) {
                          if (ec) return fail(ec.message());
                          ComputeOs& dos = world_.os_of(fresh);
                          world_.sim().schedule(dos.actor(), Delivery::over(LinkClass::RackMmu), "page_added",
                                                [&dos, fresh, moved, dead = run->dead] {
                                                    Signal sig;
                                                    sig.kind = SignalKind::PageAdded;
                                                    sig.pages = moved;
                                                    sig.sender = dead;
                                                    dos.deliver_signal(fresh, sig);
                                                });
                          cont();
                      });
            return;
        }
        case HandlerStep::Kind::FenceElement:
            world_.tor().fence(run->node);
            return cont();
        case HandlerStep::Kind::NotifyGroup:
            notify();
            return cont();
        }
    };
    sim.schedule(mmu.actor(), Delivery::over(LinkClass::RackMmu), "handler_steps", [step] {
        if (*step) (*step)();
    }, {{"pid", dead.value}});
}

}  // namespace ddc
