#include "ddc/compute_os.hpp"

#include "ddc/world.hpp"

#include <algorithm>

namespace ddc {

namespace {

std::vector<VirtualAddress> normalized(std::vector<VirtualAddress> pages)
{
    for (auto& p : pages) p = p.page_base();
    std::sort(pages.begin(), pages.end());
    pages.erase(std::unique(pages.begin(), pages.end()), pages.end());
    return pages;
}

nlohmann::json pages_json(const std::vector<VirtualAddress>& pages)
{
    auto arr = nlohmann::json::array();
    for (auto p : pages) arr.push_back(p.raw());
    return arr;
}

std::string outcome_of(std::error_code ec) { return ec ? ec.message() : "ok"; }

}  // namespace

std::string_view to_string(SignalKind kind)
{
    switch (kind) {
    case SignalKind::MemoryFault: return "memory-fault";
    case SignalKind::PageAdded: return "page-added";
    case SignalKind::GroupFailureNotice: return "group-failure-notice";
    }
    return "?";
}

// ---------------------------------------------------------------- cache

std::optional<FrameId> TranslationCache::lookup(ProcessId pid, VirtualAddress page) const
{
    auto it = entries_.find({pid, page.page_base()});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void TranslationCache::fill(ProcessId pid, VirtualAddress page, FrameId frame)
{
    entries_[{pid, page.page_base()}] = frame;
}

void TranslationCache::invalidate(ProcessId pid, const std::vector<VirtualAddress>& pages)
{
    for (auto p : pages) entries_.erase({pid, p.page_base()});
    ++generation_;
}

void TranslationCache::clear()
{
    entries_.clear();
    ++generation_;
}

// ---------------------------------------------------------------- OS

ComputeOs::ComputeOs(World& world, NodeRef ref) : world_(world), ref_(ref), name_(ref.str())
{
    actor_ = world_.sim().add_actor(name_, [this] { return !crashed_; });
}

RackMmu& ComputeOs::mmu() const { return *world_.rack(ref_.rack).mmu; }

MemoryElement& ComputeOs::element(std::uint32_t id) const { return world_.memory(ref_.rack, id); }

void ComputeOs::host(ProcessId pid) { procs_[pid] = Proc{}; }

bool ComputeOs::running(ProcessId pid) const
{
    if (crashed_) return false;
    auto it = procs_.find(pid);
    return it != procs_.end() && it->second.state == ProcState::Running;
}

bool ComputeOs::live(ProcessId pid) const
{
    auto it = procs_.find(pid);
    return it != procs_.end() && it->second.state == ProcState::Running;
}

std::vector<ProcessId> ComputeOs::processes() const
{
    std::vector<ProcessId> out;
    for (const auto& [pid, p] : procs_) out.push_back(pid);
    return out;
}

bool ComputeOs::has_live_process() const
{
    return std::any_of(procs_.begin(), procs_.end(),
                       [](const auto& kv) { return kv.second.state == ProcState::Running; });
}

void ComputeOs::syscall_record(const std::string& call, ProcessId pid, nlohmann::json args, const std::string& outcome)
{
    world_.sim().record(name_, "syscall", {{"call", call}, {"pid", pid.value}, {"args", std::move(args)}, {"outcome", outcome}});
}

Result<std::vector<VirtualAddress>> ComputeOs::sys_allocate(ProcessId self, std::size_t n_pages, AllocFlags flags)
{
    if (!running(self)) return Errc::process_not_running;
    try {
        auto pages = mmu().allocate(self, n_pages, flags);
        syscall_record("allocate", self, {{"n", n_pages}, {"allow_steal", flags.allow_steal}}, "ok");
        return pages;
    } catch (const Error& e) {
        syscall_record("allocate", self, {{"n", n_pages}}, e.code().message());
        return e.errc();
    }
}

void ComputeOs::sys_grant(ProcessId self, std::vector<VirtualAddress> pages, ProcessId dst, Completion done)
{
    Simulator& sim = world_.sim();
    pages = normalized(std::move(pages));
    const nlohmann::json args{{"pages", pages_json(pages)}, {"dst", dst.value}};
    if (!running(self)) {
        syscall_record("grant", self, args, "process-not-running");
        if (done) sim.schedule(actor_, Delivery::immediate(), "syscall_error", [done] { done(make_error_code(Errc::process_not_running)); });
        return;
    }
    // the caller promises never to touch these again
    cache_.invalidate(self, pages);
    sim.schedule(mmu().actor(), Delivery::over(LinkClass::RackMmu), "grant_request", [this, self, pages, dst, args, done] {
        mmu().grant(self, pages, dst, [this, self, pages, dst, args, done](std::error_code ec) {
            Simulator& s = world_.sim();
            s.schedule(actor_, Delivery::over(LinkClass::RackMmu), "grant_reply", [this, self, pages, args, done, ec] {
                auto it = procs_.find(self);
                if (!ec && it != procs_.end()) it->second.in_use.insert(pages.begin(), pages.end());
                syscall_record("grant", self, args, outcome_of(ec));
                if (done && running(self)) done(ec);
            });
            if (!ec && world_.exists(dst)) {
                ComputeOs& dos = world_.os_of(dst);
                s.schedule(dos.actor(), Delivery::over(LinkClass::RackMmu), "page_added", [&dos, self, dst, pages] {
                    Signal sig;
                    sig.kind = SignalKind::PageAdded;
                    sig.pages = pages;
                    sig.sender = self;
                    dos.deliver_signal(dst, sig);
                });
            }
        });
    }, args);
}

void ComputeOs::sys_steal(ProcessId self, ProcessId src, PageSelection pages, StealCompletion done)
{
    Simulator& sim = world_.sim();
    if (!pages.all) pages.pages = normalized(std::move(pages.pages));
    nlohmann::json args{{"src", src.value}};
    args["pages"] = pages.all ? nlohmann::json("all") : pages_json(pages.pages);
    if (!running(self)) {
        syscall_record("steal", self, args, "process-not-running");
        if (done)
            sim.schedule(actor_, Delivery::immediate(), "syscall_error",
                         [done] { done(make_error_code(Errc::process_not_running), {}); });
        return;
    }
    sim.schedule(mmu().actor(), Delivery::over(LinkClass::RackMmu), "steal_request", [this, self, src, pages, args, done] {
        mmu().steal(self, src, pages, [this, self, src, args, done](std::error_code ec, const std::vector<VirtualAddress>& moved) {
            world_.sim().schedule(actor_, Delivery::over(LinkClass::RackMmu), "steal_reply", [this, self, src, args, done, ec, moved] {
                syscall_record("steal", self, args, outcome_of(ec));
                if (!running(self)) return;
                if (!ec && !moved.empty()) {
                    Signal sig;
                    sig.kind = SignalKind::PageAdded;
                    sig.pages = moved;
                    sig.sender = src;
                    deliver_signal(self, sig);
                }
                if (done && running(self)) done(ec, moved);
            });
        });
    }, args);
}

std::uint32_t ComputeOs::sys_register_steal_group(ProcessId self, const std::set<ProcessId>& members)
{
    if (!running(self)) throw Error(Errc::process_not_running);
    const auto id = mmu().register_group(members);
    syscall_record("register_steal_group", self, {{"group", id}}, "ok");
    return id;
}

std::error_code ComputeOs::sys_register_failure_group(ProcessId self, const std::set<ProcessId>& members)
{
    auto arr = nlohmann::json::array();
    for (auto m : members) arr.push_back(m.value);
    if (!running(self)) {
        syscall_record("register_failure_group", self, {{"members", arr}}, "process-not-running");
        return Errc::process_not_running;
    }
    for (auto m : members) {
        if (!world_.exists(m)) {
            syscall_record("register_failure_group", self, {{"members", arr}}, "unknown-member");
            return Errc::unknown_member;
        }
    }
    auto& table = procs_.at(self).forwarding;
    table.groups.push_back({next_failure_group_++, members});
    syscall_record("register_failure_group", self, {{"members", arr}, {"group", table.groups.back().group_id}}, "ok");
    return {};
}

std::error_code ComputeOs::sys_notify_group(ProcessId self, const FailureDescriptor& error)
{
    const nlohmann::json args{{"element", error.element}};
    if (!running(self)) {
        syscall_record("notify_group", self, args, "process-not-running");
        return Errc::process_not_running;
    }
    const auto& table = procs_.at(self).forwarding;
    if (table.groups.empty()) {
        syscall_record("notify_group", self, args, "no-group-registered");
        return Errc::no_group_registered;
    }
    for (const auto& g : table.groups) {
        for (auto member : g.members) {
            if (!world_.exists(member)) continue;
            ComputeOs& dos = world_.os_of(member);
            world_.tor().send(
                ref_, dos.ref(), dos.actor(), "failure_notice",
                [&dos, member, self, error] {
                    Signal sig;
                    sig.kind = SignalKind::GroupFailureNotice;
                    sig.failure = error;
                    sig.element = error.element;
                    sig.sender = self;
                    dos.deliver_signal(member, sig);
                },
                0, {{"member", member.value}, {"element", error.element}});
        }
    }
    syscall_record("notify_group", self, args, "ok");
    return {};
}

void ComputeOs::set_handler(ProcessId pid, SignalKind kind, SignalHandler handler)
{
    procs_.at(pid).handlers[kind] = std::move(handler);
}

void ComputeOs::clear_handler(ProcessId pid, SignalKind kind)
{
    if (auto it = procs_.find(pid); it != procs_.end()) it->second.handlers.erase(kind);
}

void ComputeOs::deliver_signal(ProcessId pid, const Signal& sig)
{
    Simulator& sim = world_.sim();
    nlohmann::json rec{{"pid", pid.value}, {"signal", std::string(to_string(sig.kind))}};
    if (sig.kind == SignalKind::MemoryFault) {
        rec["fault"] = std::string(to_string(sig.fault));
        rec["vaddr"] = sig.address.raw();
    }
    if (sig.kind == SignalKind::PageAdded) rec["pages"] = pages_json(sig.pages);
    if (sig.kind == SignalKind::GroupFailureNotice) {
        rec["element"] = sig.failure.element;
        rec["sender"] = sig.sender.value;
    }
    if (!running(pid)) {
        sim.record(name_, "signal_dropped", std::move(rec));
        return;
    }
    auto& proc = procs_.at(pid);
    auto h = proc.handlers.find(sig.kind);
    rec["handled"] = h != proc.handlers.end();
    sim.record(name_, "signal", std::move(rec));
    if (h != proc.handlers.end()) {
        SignalHandler handler = h->second;  // the handler may replace itself
        handler(sig);
        return;
    }
    if (sig.kind != SignalKind::MemoryFault) return;
    if (is_element_failure(sig.fault) && !proc.forwarding.groups.empty()) {
        FailureDescriptor d{FailureDescriptor::Kind::MemoryElement, sig.element, pid, sig.fault};
        static_cast<void>(sys_notify_group(pid, d));
    }
    crash_process(pid);
}

Result<Translation> ComputeOs::resolve(ProcessId pid, VirtualAddress vaddr)
{
    if (auto cached = cache_.lookup(pid, vaddr)) return Translation{*cached, kPermRW};
    auto tr = mmu().translate(pid, vaddr);
    if (tr) cache_.fill(pid, vaddr, tr->frame);
    return tr;
}

void ComputeOs::access(ProcessId pid, VirtualAddress vaddr, AccessOp op, std::vector<std::byte> data,
                       std::size_t read_len, AccessCallback cb)
{
    if (!running(pid)) return;
    Simulator& sim = world_.sim();

    struct State {
        bool done = false;
        EventId timer = 0;
    };
    auto st = std::make_shared<State>();
    auto finish = [this, pid, vaddr, cb](const AccessResult& r, const std::string& elem) {
        if (!r.ok()) {
            Signal sig;
            sig.kind = SignalKind::MemoryFault;
            sig.address = vaddr;
            sig.fault = *r.fault;
            sig.element = elem;
            deliver_signal(pid, sig);
        }
        if (cb && running(pid)) cb(r);
    };

    auto tr = resolve(pid, vaddr);
    if (!tr) {
        const FaultKind f = tr.error() == make_error_code(Errc::permission_absent) ? FaultKind::Permission : FaultKind::NoEntry;
        sim.schedule(actor_, Delivery::after(sim.profile().rtt(LinkClass::RackMmu)), "access_fault",
                     [this, pid, finish, f] {
                         if (running(pid)) finish(AccessResult{f, {}}, "");
                     },
                     {{"pid", pid.value}, {"vaddr", vaddr.raw()}});
        return;
    }
    MemoryElement& me = element(tr->frame.element);
    const std::string elem = me.name();
    st->timer = sim.schedule(actor_, Delivery::after(world_.access_timeout()), "access_timeout",
                             [this, pid, st, finish, elem] {
                                 if (st->done || !running(pid)) return;
                                 st->done = true;
                                 finish(AccessResult{FaultKind::Timeout, {}}, elem);
                             },
                             {{"pid", pid.value}, {"vaddr", vaddr.raw()}, {"element", elem}});
    if (!mmu().reachable(ref_.index, tr->frame.element)) return;  // no path: only the timeout remains

    sim.schedule(me.actor(), Delivery::over(LinkClass::RackMmu), "mem_request",
                 [this, &me, pid, vaddr, op, data = std::move(data), read_len, st, finish, elem] {
                     auto r = me.serve(pid, vaddr, op, data, read_len, name_);
                     if (!r) return;
                     world_.sim().schedule(actor_, Delivery::over(LinkClass::RackMmu), "mem_reply",
                                           [this, pid, vaddr, r = std::move(*r), st, finish, elem] {
                                               if (st->done) return;
                                               st->done = true;
                                               world_.sim().cancel(st->timer);
                                               if (r.fault == FaultKind::NoEntry) cache_.invalidate(pid, {vaddr});
                                               if (running(pid)) finish(r, elem);
                                           },
                                           {{"pid", pid.value}, {"vaddr", vaddr.raw()}});
                 },
                 {{"pid", pid.value}, {"vaddr", vaddr.raw()}, {"op", op == AccessOp::Read ? "read" : "write"}});
}

ComputeOs::TimedAccess ComputeOs::access_now(ProcessId pid, VirtualAddress vaddr, AccessOp op,
                                             std::span<const std::byte> data, std::size_t read_len)
{
    if (!running(pid)) throw Error(Errc::process_not_running);
    Simulator& sim = world_.sim();
    const SimTime rtt = sim.profile().rtt(LinkClass::RackMmu);
    auto tr = resolve(pid, vaddr);
    if (!tr) {
        const FaultKind f = tr.error() == make_error_code(Errc::permission_absent) ? FaultKind::Permission : FaultKind::NoEntry;
        sim.record(name_, "access_fault", {{"pid", pid.value}, {"vaddr", vaddr.raw()}, {"fault", std::string(to_string(f))}});
        return {AccessResult{f, {}}, rtt};
    }
    if (!mmu().reachable(ref_.index, tr->frame.element)) {
        sim.record(name_, "access_timeout", {{"pid", pid.value}, {"vaddr", vaddr.raw()}});
        return {AccessResult{FaultKind::Timeout, {}}, world_.access_timeout()};
    }
    MemoryElement& me = element(tr->frame.element);
    auto r = me.serve(pid, vaddr, op, data, read_len, name_);
    if (!r) {
        sim.record(name_, "access_timeout", {{"pid", pid.value}, {"vaddr", vaddr.raw()}, {"element", me.name()}});
        return {AccessResult{FaultKind::Timeout, {}}, world_.access_timeout()};
    }
    if (r->fault == FaultKind::NoEntry) cache_.invalidate(pid, {vaddr});
    return {std::move(*r), rtt};
}

void ComputeOs::raise_fault(ProcessId pid, VirtualAddress vaddr, FaultKind fault, SimTime after)
{
    std::string elem;
    if (auto tr = mmu().translate(pid, vaddr)) elem = element(tr->frame.element).name();
    if (elem.empty())
        if (auto cached = cache_.lookup(pid, vaddr)) elem = element(cached->element).name();
    post(pid, after, "memory_fault", [this, pid, vaddr, fault, elem] {
        Signal sig;
        sig.kind = SignalKind::MemoryFault;
        sig.address = vaddr;
        sig.fault = fault;
        sig.element = elem;
        deliver_signal(pid, sig);
    });
}

EventId ComputeOs::post(ProcessId pid, SimTime delay, std::string kind, std::function<void()> fn)
{
    return world_.sim().schedule(actor_, Delivery::after(delay), std::move(kind), [this, pid, fn = std::move(fn)] {
        if (running(pid)) fn();
    }, {{"pid", pid.value}});
}

void ComputeOs::send(ProcessId from, ProcessId to, std::string kind, std::function<void()> fn, std::size_t bytes,
                     nlohmann::json fields)
{
    if (!running(from) || !world_.exists(to)) return;
    ComputeOs& dos = world_.os_of(to);
    fields["src_pid"] = from.value;
    fields["dst_pid"] = to.value;
    world_.tor().send(ref_, dos.ref(), dos.actor(), std::move(kind), [&dos, to, fn = std::move(fn)] {
        if (dos.running(to)) fn();
    }, bytes, std::move(fields));
}

void ComputeOs::crash_process(ProcessId pid)
{
    auto it = procs_.find(pid);
    if (it == procs_.end() || it->second.state == ProcState::Crashed) return;
    it->second.state = ProcState::Crashed;
    it->second.handlers.clear();
    it->second.forwarding.groups.clear();
    it->second.on_resume = nullptr;
    world_.sim().record(name_, "process_crashed", {{"pid", pid.value}});
    if (crashed_) return;
    RackMmu& m = mmu();
    world_.sim().schedule(m.actor(), Delivery::over(LinkClass::RackMmu), "process_exit", [&m, pid] { m.mark_dead(pid); },
                          {{"pid", pid.value}});
}

void ComputeOs::crash()
{
    if (crashed_) return;
    crashed_ = true;
    for (auto& [pid, p] : procs_) p.forwarding.groups.clear();
    cache_.clear();
    world_.sim().record(name_, "compute_crashed");
}

void ComputeOs::revive()
{
    if (!crashed_) return;
    crashed_ = false;
    world_.sim().record(name_, "compute_revived");
    if (beating_) heartbeat_tick();
    for (auto& [pid, p] : procs_) {
        if (p.state == ProcState::Running && p.on_resume) post(pid, SimTime{}, "resume", p.on_resume);
    }
}

void ComputeOs::on_resume(ProcessId pid, std::function<void()> fn)
{
    procs_.at(pid).on_resume = std::move(fn);
}

void ComputeOs::invalidate(ProcessId pid, const std::vector<VirtualAddress>& pages)
{
    cache_.invalidate(pid, pages);
}

const ForwardingTable* ComputeOs::forwarding(ProcessId pid) const
{
    auto it = procs_.find(pid);
    return it == procs_.end() ? nullptr : &it->second.forwarding;
}

const std::set<VirtualAddress>* ComputeOs::in_use(ProcessId pid) const
{
    auto it = procs_.find(pid);
    return it == procs_.end() ? nullptr : &it->second.in_use;
}

void ComputeOs::start_heartbeats(ActorId monitor, SimTime interval, std::function<void(std::uint32_t)> beat)
{
    monitor_ = monitor;
    beat_interval_ = interval;
    beat_ = std::move(beat);
    beating_ = true;
    heartbeat_tick();
}

void ComputeOs::heartbeat_tick()
{
    Simulator& sim = world_.sim();
    const std::uint64_t gen = ++beat_generation_;
    auto tick = std::make_shared<std::function<void()>>();
    *tick = [this, gen, tick] {
        if (gen != beat_generation_ || crashed_) return;
        world_.sim().schedule(monitor_, Delivery::over(LinkClass::RackMmu), "heartbeat",
                              [beat = beat_, idx = ref_.index] { beat(idx); });
        world_.sim().schedule(actor_, Delivery::after(beat_interval_), "heartbeat_timer", *tick);
    };
    sim.schedule(actor_, Delivery::immediate(), "heartbeat_timer", *tick);
}

}  // namespace ddc
