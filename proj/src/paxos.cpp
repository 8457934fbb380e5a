#include "ddc/paxos.hpp"

#include "ddc/cc_heap.hpp"
#include "ddc/world.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <random>

namespace ddc {

std::string command::describe(std::uint64_t c)
{
    const std::uint64_t p = payload(c);
    switch (kind(c)) {
    case Kind::Noop: return "noop";
    case Kind::Client: return "client(" + std::to_string(p) + ")";
    case Kind::Reconfigure:
        return "reconfigure(" + std::to_string((p >> 32) & 0xff) + "->" + std::to_string((p >> 24) & 0xff) + ")";
    case Kind::Reincarnate: return "reincarnate(" + std::to_string((p >> 32) & 0xff) + ")";
    }
    return "unknown";
}

std::uint64_t paxos_rules::pick_value(const std::vector<std::optional<Vote>>& reports, std::uint64_t fallback)
{
    std::optional<Vote> best;
    for (const auto& r : reports)
        if (r && (!best || r->ballot > best->ballot)) best = r;
    return best ? best->cmd : fallback;
}

std::string_view to_string(RecoveryStrategy s)
{
    return s == RecoveryStrategy::Reincarnate ? "reincarnate" : "transfer";
}

RecoveryStrategy recovery_strategy_by_name(std::string_view name)
{
    if (name == "reincarnate") return RecoveryStrategy::Reincarnate;
    if (name == "transfer") return RecoveryStrategy::Transfer;
    throw Error(Errc::config_invalid, "unknown recovery strategy '" + std::string(name) + "'");
}

namespace {

constexpr std::size_t kHeaderBytes = 128;
constexpr std::size_t kSlotBytes = 32;
constexpr std::size_t kMaxMembers = 8;
constexpr std::uint64_t kHashSeed = 1469598103934665603ull;

void put64(std::byte* p, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

std::uint64_t get64(const std::byte* p)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::to_integer<std::uint8_t>(p[i])) << (8 * i);
    return v;
}

/// Arena-resident replica header.
struct Persist {
    MemberId member = 0;
    std::uint64_t epoch = 0;
    Ballot promised;
    std::uint64_t applied = 0;
    std::uint64_t hash = kHashSeed;
    std::uint64_t last_client = 0;
    std::uint64_t max_slot = 0;
    std::vector<std::pair<MemberId, std::uint32_t>> members;  // id, rack

    [[nodiscard]] bool has(MemberId m) const
    {
        return std::any_of(members.begin(), members.end(), [m](const auto& e) { return e.first == m; });
    }
    [[nodiscard]] std::size_t majority() const { return members.size() / 2 + 1; }
    [[nodiscard]] std::optional<std::uint32_t> rack_of(MemberId m) const
    {
        for (const auto& [id, rack] : members)
            if (id == m) return rack;
        return std::nullopt;
    }

    [[nodiscard]] std::array<std::byte, kHeaderBytes> encode() const
    {
        std::array<std::byte, kHeaderBytes> b{};
        put64(&b[0], member);
        put64(&b[8], epoch);
        put64(&b[16], promised.raw());
        put64(&b[24], applied);
        put64(&b[32], hash);
        put64(&b[40], last_client);
        put64(&b[48], max_slot);
        put64(&b[56], members.size());
        for (std::size_t i = 0; i < members.size() && i < kMaxMembers; ++i)
            put64(&b[64 + 8 * i], std::uint64_t{members[i].first} | (std::uint64_t{members[i].second} << 8));
        return b;
    }
    static Persist decode(const std::array<std::byte, kHeaderBytes>& b)
    {
        Persist s;
        s.member = static_cast<MemberId>(get64(&b[0]));
        s.epoch = get64(&b[8]);
        s.promised = Ballot::from_raw(get64(&b[16]));
        s.applied = get64(&b[24]);
        s.hash = get64(&b[32]);
        s.last_client = get64(&b[40]);
        s.max_slot = get64(&b[48]);
        const std::uint64_t n = std::min<std::uint64_t>(get64(&b[56]), kMaxMembers);
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint64_t e = get64(&b[64 + 8 * i]);
            s.members.emplace_back(static_cast<MemberId>(e & 0xff), static_cast<std::uint32_t>(e >> 8));
        }
        return s;
    }
};

struct SlotRec {
    Ballot ballot;  // round 0: nothing accepted
    std::uint64_t cmd = 0;
    bool chosen = false;
    std::uint64_t chosen_cmd = 0;

    [[nodiscard]] bool accepted() const { return ballot.round != 0; }
};

struct Entry {
    std::uint64_t slot = 0;
    Ballot ballot;
    std::uint64_t cmd = 0;
    bool chosen = false;
};

enum class MsgKind : std::uint8_t {
    Prepare,
    Promise,
    Nack,
    Accept,
    Accepted,
    Decide,
    Heartbeat,
    HeartbeatAck,
    CatchUpRequest,
    CatchUp,
    Rejoined,
    JoinerReady,
    Snapshot,
    Joined,
};

std::string_view name(MsgKind k)
{
    switch (k) {
    case MsgKind::Prepare: return "prepare";
    case MsgKind::Promise: return "promise";
    case MsgKind::Nack: return "nack";
    case MsgKind::Accept: return "accept";
    case MsgKind::Accepted: return "accepted";
    case MsgKind::Decide: return "decide";
    case MsgKind::Heartbeat: return "heartbeat";
    case MsgKind::HeartbeatAck: return "heartbeat_ack";
    case MsgKind::CatchUpRequest: return "catchup_request";
    case MsgKind::CatchUp: return "catchup";
    case MsgKind::Rejoined: return "rejoined";
    case MsgKind::JoinerReady: return "joiner_ready";
    case MsgKind::Snapshot: return "snapshot";
    case MsgKind::Joined: return "joined";
    }
    return "?";
}

struct Msg {
    MsgKind kind = MsgKind::Heartbeat;
    MemberId from = 0;
    ProcessId from_pid;
    std::uint64_t epoch = 0;
    Ballot ballot;
    std::uint64_t slot = 0;
    std::uint64_t cmd = 0;
    std::uint64_t applied = 0;
    MemberId subject = 0;
    std::vector<Entry> entries;
    std::optional<Persist> state;
};

}  // namespace

// ======================================================================
// Replica

class Replica {
public:
    enum class Mode : std::uint8_t { Adopting, Installing, Active, Retired };
    enum class Role : std::uint8_t { Follower, Candidate, Leader };

    Replica(PaxosCluster& cluster, ProcessId pid, Mode mode)
        : c_(cluster), w_(cluster.world_), pid_(pid), mem_(cluster.world_, pid), mode_(mode)
    {
    }

    [[nodiscard]] ProcessId pid() const { return pid_; }
    [[nodiscard]] MemberId member() const { return member_; }
    [[nodiscard]] Mode mode() const { return mode_; }
    [[nodiscard]] Role role() const { return role_; }
    [[nodiscard]] const Persist& view() const { return view_; }
    [[nodiscard]] bool running() { return w_.os_of(pid_).running(pid_); }
    [[nodiscard]] const std::optional<UndoLogHeap>& heap() const { return heap_; }

    /// Fresh member on its own arena (initial replicas).
    void create(MemberId member, const std::vector<std::pair<MemberId, std::uint32_t>>& members)
    {
        ComputeOs& os = w_.os_of(pid_);
        auto pages = os.sys_allocate(pid_, c_.config_.arena_pages);
        if (!pages) throw Error(Errc::config_invalid, "no memory for a replica arena");
        heap_ = UndoLogHeap::format(mem_, pages->front(), c_.config_.arena_pages);
        hdr_ = heap_->alloc(kHeaderBytes, kHeaderBytes);
        slots_ = heap_->alloc(c_.config_.slot_capacity * kSlotBytes, kSlotBytes);
        Persist s;
        s.member = member;
        s.epoch = 1;
        s.members = members;
        heap_->transact([&] {
            write_header(s);
            heap_->set_root("replica", hdr_);
            heap_->set_root("slots", slots_);
        });
        member_ = member;
        view_ = s;
        mem_.take_elapsed();
    }

    void activate()
    {
        mode_ = Mode::Active;
        last_contact_ = now();
        install_handlers();
        register_groups();
        start_tick();
    }

    // --------------------------------------------------------------- inputs

    void receive(const Msg& m)
    {
        guarded([&] {
            if (mode_ == Mode::Installing) {
                if (m.kind == MsgKind::Snapshot) install(m);
                return;
            }
            if (mode_ != Mode::Active) return;
            Persist s = load();
            if (!s.has(member_)) return retire(s);
            if (!authentic(m)) {
                record("paxos_ignored", {{"msg", name(m.kind)}, {"from", m.from}, {"reason", "stale-route"}});
                return;
            }
            switch (m.kind) {
            case MsgKind::Prepare: return on_prepare(s, m);
            case MsgKind::Promise: return on_promise(s, m);
            case MsgKind::Nack: return on_nack(s, m);
            case MsgKind::Accept: return on_accept(s, m);
            case MsgKind::Accepted: return on_accepted(s, m);
            case MsgKind::Decide: return on_decide(m);
            case MsgKind::Heartbeat: return on_heartbeat(s, m);
            case MsgKind::HeartbeatAck: return on_heartbeat_ack(s, m);
            case MsgKind::CatchUpRequest: return on_catchup_request(s, m);
            case MsgKind::CatchUp: return on_catchup(m);
            case MsgKind::Rejoined: return on_rejoined(s, m);
            case MsgKind::JoinerReady: return on_joiner_ready(s, m);
            case MsgKind::Joined: return on_joined(s, m);
            case MsgKind::Snapshot: return;
            }
        });
    }

    void on_notice(const Signal& sig)
    {
        guarded([&] {
            if (mode_ != Mode::Active) return;
            Persist s = load();
            auto m = member_for(s, sig.failure.pid);
            if (!m || *m == member_) return;
            const bool memory = sig.failure.kind == FailureDescriptor::Kind::MemoryElement;
            record("paxos_notice", {{"member", *m}, {"failure", memory ? "memory" : "compute"}, {"element", sig.failure.element}});
            PaxosMetrics& met = c_.metrics_;
            if (memory) {
                memory_dead_.insert(*m);
                if (!met.memory_notice_at) met.memory_notice_at = now();
            }
            const bool fresh = pending_.insert(*m).second;
            if (role_ == Role::Leader) {
                if (fresh || memory) recover(s, *m, true);
            } else if (*m == leader_hint_) {
                if (memory || c_.config_.strategy == RecoveryStrategy::Transfer) elect_if_first(s, *m);
            }
        });
    }

    /// Heir: the dead member's pages arrived. Each step runs after the
    /// memory latency of the one before.
    void adopt(const Signal& sig)
    {
        guarded([&] {
            if (mode_ != Mode::Adopting) return;
            if (sig.pages.empty()) {
                record("reincarnate_skipped", {{"for", dead_.value}});
                w_.os_of(pid_).crash_process(pid_);
                return;
            }
            const VirtualAddress base = *std::min_element(sig.pages.begin(), sig.pages.end());
            heap_ = UndoLogHeap::open(mem_, base);
            step("recover");
            later([this] { adopt_locate(); });
        });
    }

    void adopt_locate()
    {
        guarded([&] {
            hdr_ = heap_->get_root("replica");
            slots_ = heap_->get_root("slots");
            Persist s = load();
            member_ = s.member;
            step("locate_root");
            later([this] { adopt_resume(); });
        });
    }

    void adopt_resume()
    {
        guarded([&] {
            Persist s = load();
            w_.tor().fence(w_.host(dead_));
            step("fence");
            w_.tor().set_route(endpoint(member_), pid_);
            w_.os_of(pid_).clear_handler(pid_, SignalKind::MemoryFault);
            step("resume");
            ++c_.metrics_.reincarnations;
            activate();
            c_.note_adopted(pid_, dead_, s.applied);
            Msg hello = make(MsgKind::Rejoined, s);
            hello.applied = s.applied;
            broadcast(s, hello);
            if (s.promised.proposer == member_) start_election(false);
        });
    }

    /// Heir or joiner whose arena could not be reached.
    void give_up(const Signal& sig)
    {
        record("reincarnate_failed", {{"for", dead_.value}, {"reason", "memory-also-failed"}, {"element", sig.element}});
        ComputeOs& os = w_.os_of(pid_);
        std::set<ProcessId> peers;
        for (MemberId m = 1; m < c_.next_member_; ++m)
            if (auto p = w_.tor().route(endpoint(m)); p && *p != dead_ && *p != pid_) peers.insert(*p);
        if (!peers.empty() && !os.sys_register_failure_group(pid_, peers))
            os.sys_notify_group(pid_, {FailureDescriptor::Kind::MemoryElement, sig.element, dead_, sig.fault});
        os.crash_process(pid_);
    }

    /// Joiner: new arena, then tell the requesting leader.
    void prepare_join(MemberId leader, MemberId replaces)
    {
        guarded([&] {
            ComputeOs& os = w_.os_of(pid_);
            auto pages = os.sys_allocate(pid_, c_.config_.arena_pages);
            if (!pages) {
                record("paxos_join_failed", {{"reason", pages.error().message()}});
                return;
            }
            heap_ = UndoLogHeap::format(mem_, pages->front(), c_.config_.arena_pages);
            hdr_ = heap_->alloc(kHeaderBytes, kHeaderBytes);
            slots_ = heap_->alloc(c_.config_.slot_capacity * kSlotBytes, kSlotBytes);
            heap_->transact([&] {
                write_header(Persist{});
                heap_->set_root("replica", hdr_);
                heap_->set_root("slots", slots_);
            });
            Msg ready;
            ready.kind = MsgKind::JoinerReady;
            ready.from_pid = pid_;
            ready.subject = replaces;
            send_to(leader, ready);
        });
    }

    /// Non-fail-stop return of a crashed element: act on volatile state.
    void zombie()
    {
        guarded([&] {
            if (mode_ != Mode::Active) return;
            record("paxos_zombie", {{"member", member_}, {"was_leader", role_ == Role::Leader}});
            if (role_ == Role::Leader) {
                Msg hb = make(MsgKind::Heartbeat, view_);
                hb.ballot = ballot_;
                broadcast(view_, hb);
            }
            Persist s = view_;
            s.promised = Ballot{s.promised.round + 1, member_};
            heap_->transact([&] { write_header(s); });
            start_tick();
        });
    }

    /// Test hook: apply a message and report whether the arena changed.
    bool probe(const Msg& m)
    {
        if (mode_ != Mode::Active || !running() || !heap_) return false;
        try {
            auto before = snapshot_bytes();
            receive(m);
            auto after = snapshot_bytes();
            mem_.take_elapsed();
            return before != after;
        } catch (const Error&) {
            return false;
        }
    }

    [[nodiscard]] std::size_t arena_bytes() const { return heap_ ? heap_->size_bytes() : 0; }

    ProcessId dead_;

private:
    // ---------------------------------------------------------- plumbing

    [[nodiscard]] SimTime now() const { return w_.sim().now(); }
    static std::string endpoint(MemberId m) { return "member-" + std::to_string(m); }

    void record(const std::string& kind, nlohmann::json fields)
    {
        fields["pid"] = pid_.value;
        w_.sim().record(w_.os_of(pid_).name(), kind, std::move(fields));
    }

    void step(const char* what)
    {
        record("reincarnate_step", {{"step", what}, {"member", member_}, {"for", dead_.value}});
    }

    template <typename F>
    void guarded(F&& body)
    {
        if (mode_ == Mode::Retired || !running()) return;
        mem_.take_elapsed();
        delay_ = SimTime{};
        try {
            body();
        } catch (const MemoryFaultError& e) {
            // The OS already has the MemoryFault signal queued.
            if (is_element_failure(e.kind())) {
                PaxosMetrics& met = c_.metrics_;
                const SimTime signal_at = now() + mem_.elapsed();
                if (!met.memory_fault_signal_at) {
                    met.memory_fault_signal_at = signal_at;
                    const SimTime cost = e.kind() == FaultKind::Timeout ? w_.access_timeout()
                                                                         : w_.sim().profile().rtt(LinkClass::RackMmu);
                    met.memory_access_started_at = signal_at - cost;
                }
            }
            record("paxos_fault", {{"fault", std::string(to_string(e.kind()))}, {"member", member_}});
        } catch (const Error& e) {
            record("paxos_error", {{"what", e.what()}, {"member", member_}});
        }
    }

    Persist load()
    {
        std::array<std::byte, kHeaderBytes> b{};
        heap_->read(hdr_, b);
        view_ = Persist::decode(b);
        return view_;
    }

    void write_header(const Persist& s)
    {
        const auto b = s.encode();
        heap_->tx_write(hdr_, b);
        view_ = s;
    }

    SlotRec read_slot(std::uint64_t slot)
    {
        std::array<std::byte, kSlotBytes> b{};
        heap_->read(slots_ + slot * kSlotBytes, b);
        SlotRec r;
        r.ballot = Ballot::from_raw(get64(&b[0]));
        r.cmd = get64(&b[8]);
        r.chosen = get64(&b[16]) != 0;
        r.chosen_cmd = get64(&b[24]);
        return r;
    }

    void write_slot(std::uint64_t slot, const SlotRec& r)
    {
        std::array<std::byte, kSlotBytes> b{};
        put64(&b[0], r.ballot.raw());
        put64(&b[8], r.cmd);
        put64(&b[16], r.chosen ? 1 : 0);
        put64(&b[24], r.chosen_cmd);
        heap_->tx_write(slots_ + slot * kSlotBytes, b);
    }

    std::vector<std::byte> snapshot_bytes()
    {
        std::vector<std::byte> out(kHeaderBytes + c_.config_.slot_capacity * kSlotBytes);
        heap_->read(hdr_, std::span(out).first(kHeaderBytes));
        heap_->read(slots_, std::span(out).subspan(kHeaderBytes));
        return out;
    }

    [[nodiscard]] bool in_range(std::uint64_t slot) const { return slot < c_.config_.slot_capacity; }

    Msg make(MsgKind k, const Persist& s) const
    {
        Msg m;
        m.kind = k;
        m.from = member_;
        m.from_pid = pid_;
        m.epoch = s.epoch;
        return m;
    }

    /// Memory latency so far in this handler delays what the handler sends.
    SimTime charge()
    {
        delay_ += mem_.take_elapsed();
        return delay_;
    }

    void send_pid(ProcessId to, const Msg& m, std::size_t bytes = 0)
    {
        if (!w_.exists(to) || to == pid_) return;
        const SimTime d = charge();
        ComputeOs& os = w_.os_of(pid_);
        PaxosCluster* c = &c_;
        const ProcessId from = pid_;
        auto deliver = [c, to, m] {
            if (Replica* r = c->replica(to)) r->receive(m);
        };
        const std::string kind = "paxos_" + std::string(name(m.kind));
        nlohmann::json fields{{"from_member", m.from}, {"slot", m.slot}, {"epoch", m.epoch}};
        if (d == SimTime{}) {
            os.send(from, to, kind, deliver, bytes, fields);
            return;
        }
        os.post(from, d, "paxos_out", [&os, from, to, kind, deliver, bytes, fields] {
            os.send(from, to, kind, deliver, bytes, fields);
        });
    }

    void send_to(MemberId to, const Msg& m, std::size_t bytes = 0)
    {
        if (auto p = w_.tor().route(endpoint(to))) send_pid(*p, m, bytes);
    }

    void broadcast(const Persist& s, const Msg& m)
    {
        for (const auto& [id, rack] : s.members)
            if (id != member_) send_to(id, m);
    }

    [[nodiscard]] bool authentic(const Msg& m) const
    {
        if (m.kind == MsgKind::JoinerReady) return true;
        auto p = w_.tor().route(endpoint(m.from));
        return p && *p == m.from_pid;
    }

    std::optional<MemberId> member_for(const Persist& s, ProcessId pid) const
    {
        for (const auto& [id, rack] : s.members)
            if (auto p = w_.tor().route(endpoint(id)); p && *p == pid) return id;
        return std::nullopt;
    }

    void install_handlers()
    {
        ComputeOs& os = w_.os_of(pid_);
        PaxosCluster* c = &c_;
        const ProcessId me = pid_;
        os.set_handler(pid_, SignalKind::GroupFailureNotice, [c, me](const Signal& sig) {
            if (Replica* r = c->replica(me)) r->on_notice(sig);
        });
        os.on_resume(pid_, [c, me] {
            if (Replica* r = c->replica(me)) r->zombie();
        });
    }

    void register_groups()
    {
        std::set<ProcessId> peers;
        for (const auto& [id, rack] : view_.members)
            if (auto p = w_.tor().route(endpoint(id)); p && *p != pid_ && id != member_) peers.insert(*p);
        ComputeOs& os = w_.os_of(pid_);
        if (c_.config_.failure_groups && !peers.empty()) os.sys_register_failure_group(pid_, peers);
        if (!c_.config_.fast_handlers) return;
        RackMonitor& mon = *w_.rack(w_.host(pid_).rack).monitor;
        if (c_.config_.strategy == RecoveryStrategy::Reincarnate) {
            mon.register_handler(pid_, FastFailureHandler{{{HandlerStep::Kind::RequestProvision, "paxos-heir"},
                                                           {HandlerStep::Kind::RevokeMemory, {}},
                                                           {HandlerStep::Kind::StealOnBehalf, {}}}});
        }
        mon.register_group(pid_, peers);
    }

    void later(std::function<void()> fn)
    {
        w_.os_of(pid_).post(pid_, charge(), "paxos_step", std::move(fn));
    }

    void start_tick()
    {
        const std::uint64_t gen = ++tick_gen_;
        schedule_tick(gen, c_.heartbeat_);
    }

    void schedule_tick(std::uint64_t gen, SimTime after)
    {
        PaxosCluster* c = &c_;
        const ProcessId me = pid_;
        w_.os_of(pid_).post(pid_, after, "paxos_tick", [c, me, gen] {
            if (Replica* r = c->replica(me)) r->tick(gen);
        });
    }

    // ------------------------------------------------------------- state

    void retire(const Persist& s)
    {
        if (mode_ == Mode::Retired) return;
        mode_ = Mode::Retired;
        role_ = Role::Follower;
        record("paxos_retired", {{"member", member_}, {"epoch", s.epoch}});
    }

    void step_down(Ballot seen)
    {
        if (role_ != Role::Follower)
            record("paxos_step_down", {{"member", member_}, {"ballot", ballot_.raw()}, {"seen", seen.raw()}});
        role_ = Role::Follower;
        inflight_.reset();
        last_contact_ = now();
    }

    /// Records a chosen value in the arena and applies whatever is ready.
    void learn(std::uint64_t slot, std::uint64_t cmd)
    {
        if (!in_range(slot)) return;
        SlotRec r = read_slot(slot);
        if (r.chosen) {
            if (r.chosen_cmd != cmd)
                c_.note_violation("slot " + std::to_string(slot) + " relearned as " + command::describe(cmd));
            return;
        }
        Persist s = view_;
        if (slot < s.applied) return;
        r.chosen = true;
        r.chosen_cmd = cmd;
        heap_->transact([&] {
            write_slot(slot, r);
            if (slot + 1 > s.max_slot) {
                s.max_slot = slot + 1;
                write_header(s);
            }
        });
        c_.note_chosen(pid_, slot, cmd);
        record("paxos_chosen", {{"slot", slot}, {"cmd", command::describe(cmd)}, {"member", member_}});
        apply_ready();
    }

    void apply_ready()
    {
        for (;;) {
            Persist s = load();
            if (!in_range(s.applied)) return;
            const std::uint64_t slot = s.applied;
            SlotRec r = read_slot(slot);
            if (!r.chosen) return;
            const std::uint64_t cmd = r.chosen_cmd;
            const std::uint64_t p = command::payload(cmd);
            bool excluded = false;
            heap_->transact([&] {
                switch (command::kind(cmd)) {
                case command::Kind::Client:
                    s.last_client = p;
                    break;
                case command::Kind::Reconfigure: {
                    const auto old_m = static_cast<MemberId>((p >> 32) & 0xff);
                    const auto new_m = static_cast<MemberId>((p >> 24) & 0xff);
                    const auto rack = static_cast<std::uint32_t>((p >> 16) & 0xff);
                    std::erase_if(s.members, [old_m](const auto& e) { return e.first == old_m; });
                    if (!s.has(new_m)) s.members.emplace_back(new_m, rack);
                    ++s.epoch;
                    excluded = old_m == member_;
                    break;
                }
                case command::Kind::Noop:
                case command::Kind::Reincarnate:
                    break;
                }
                s.hash = (s.hash ^ cmd) * 1099511628211ull;
                ++s.applied;
                write_header(s);
            });
            c_.note_applied(pid_, slot, cmd);
            reproposals_.erase(slot);
            if (inflight_ && *inflight_ == slot) {
                // decided without our proposal; keep a control command alive
                const auto k = command::kind(inflight_cmd_);
                if (inflight_cmd_ != cmd && (k == command::Kind::Reconfigure || k == command::Kind::Reincarnate))
                    control_.push_front(inflight_cmd_);
                inflight_.reset();
            }
            if (excluded) return retire(s);
            after_apply(s, cmd);
            if (mode_ != Mode::Active) return;
        }
    }

    void after_apply(const Persist& s, std::uint64_t cmd)
    {
        const std::uint64_t p = command::payload(cmd);
        switch (command::kind(cmd)) {
        case command::Kind::Reconfigure: {
            const auto old_m = static_cast<MemberId>((p >> 32) & 0xff);
            const auto new_m = static_cast<MemberId>((p >> 24) & 0xff);
            const ProcessId joiner{static_cast<std::uint32_t>(p & 0xffff)};
            record("paxos_reconfigured", {{"epoch", s.epoch}, {"removed", old_m}, {"added", new_m}});
            joiners_[new_m] = joiner;
            if (pending_.erase(old_m) != 0) {
                pending_since_.erase(old_m);
                pending_.insert(new_m);
                pending_since_[new_m] = now();
            }
            if (role_ == Role::Leader) {
                send_snapshot(s, new_m, joiner);
                reprepare_ = true;
            }
            break;
        }
        case command::Kind::Reincarnate:
            if (role_ == Role::Leader) execute_reincarnation(s, static_cast<MemberId>((p >> 32) & 0xff),
                                                             ProcessId{static_cast<std::uint32_t>(p & 0xffff)});
            break;
        default:
            break;
        }
    }

    // -------------------------------------------------------- elections

    void start_election(bool by_timeout)
    {
        Persist s = load();
        if (!s.has(member_)) return retire(s);
        ballot_ = Ballot{std::max(s.promised.round, ballot_.round) + 1, member_};
        s.promised = ballot_;
        heap_->transact([&] { write_header(s); });
        role_ = Role::Candidate;
        candidate_since_ = now();
        elected_by_timeout_ = by_timeout;
        promises_ = {member_};
        reports_.clear();
        prepare_from_ = s.applied;
        for (std::uint64_t slot = s.applied; slot < s.max_slot && in_range(slot); ++slot) {
            SlotRec r = read_slot(slot);
            if (r.accepted() || r.chosen) reports_[slot].push_back(r);
        }
        record("paxos_prepare", {{"member", member_}, {"ballot", ballot_.raw()}, {"epoch", s.epoch}});
        if (promises_.size() >= s.majority()) return become_leader(s);
        Msg m = make(MsgKind::Prepare, s);
        m.ballot = ballot_;
        m.applied = s.applied;
        broadcast(s, m);
    }

    void elect_if_first(const Persist& s, MemberId failed)
    {
        MemberId first = 0;
        for (const auto& [id, rack] : s.members)
            if (id != failed && !pending_.contains(id) && (first == 0 || id < first)) first = id;
        if (first == member_ && role_ == Role::Follower) {
            start_election(true);
        } else {
            last_contact_ = now();
        }
    }

    void on_prepare(const Persist& s0, const Msg& m)
    {
        Persist s = s0;
        if (!epoch_ok(s, m) || !s.has(m.from)) return;
        if (!paxos_rules::admit_prepare(s.promised, m.ballot)) return nack(s, m.from);
        s.promised = m.ballot;
        heap_->transact([&] { write_header(s); });
        if (role_ != Role::Follower && m.from != member_) step_down(m.ballot);
        last_contact_ = now();
        leader_hint_ = m.from;
        Msg p = make(MsgKind::Promise, s);
        p.ballot = m.ballot;
        p.applied = s.applied;
        for (std::uint64_t slot = m.applied; slot < s.max_slot && in_range(slot); ++slot) {
            SlotRec r = read_slot(slot);
            if (r.chosen) {
                p.entries.push_back({slot, r.ballot, r.chosen_cmd, true});
            } else if (r.accepted()) {
                p.entries.push_back({slot, r.ballot, r.cmd, false});
            }
        }
        send_to(m.from, p);
    }

    void on_promise(const Persist& s, const Msg& m)
    {
        if (!epoch_ok(s, m) || !s.has(m.from)) return;
        if (role_ != Role::Candidate || m.ballot != ballot_) return;
        for (const auto& e : m.entries) {
            SlotRec r;
            r.ballot = e.ballot;
            r.cmd = e.cmd;
            r.chosen = e.chosen;
            r.chosen_cmd = e.cmd;
            reports_[e.slot].push_back(r);
        }
        promises_.insert(m.from);
        if (promises_.size() >= s.majority()) become_leader(s);
    }

    void become_leader(const Persist& s)
    {
        role_ = Role::Leader;
        const MemberId previous = leader_hint_;
        leader_hint_ = member_;
        record("paxos_leader", {{"member", member_}, {"ballot", ballot_.raw()}, {"epoch", s.epoch}});
        for (const auto& [id, rack] : s.members) last_ack_[id] = now();
        if (elected_by_timeout_ && previous != 0 && previous != member_ && s.has(previous) &&
            !promises_.contains(previous))
            last_ack_[previous] = now() - c_.suspicion_ - SimTime::from_ns(1);

        reproposals_.clear();
        std::uint64_t top = s.applied;
        for (const auto& [slot, list] : reports_) top = std::max(top, slot + 1);
        for (std::uint64_t slot = s.applied; slot < top; ++slot) {
            auto it = reports_.find(slot);
            std::optional<std::uint64_t> chosen;
            std::vector<std::optional<paxos_rules::Vote>> votes;
            if (it != reports_.end()) {
                for (const auto& r : it->second) {
                    if (r.chosen) chosen = r.chosen_cmd;
                    if (r.accepted()) votes.push_back(paxos_rules::Vote{r.ballot, r.cmd});
                }
            }
            if (chosen) {
                learn(slot, *chosen);
                if (mode_ != Mode::Active || role_ != Role::Leader) return;
            } else {
                reproposals_[slot] = paxos_rules::pick_value(votes, command::noop());
            }
        }
        Msg hb = make(MsgKind::Heartbeat, s);
        hb.ballot = ballot_;
        hb.applied = s.applied;
        broadcast(s, hb);
        for (const auto& m : std::set<MemberId>(pending_))
            if (!joiners_.contains(m)) recover(s, m, false);
        drive();
    }

    void on_nack(const Persist& s, const Msg& m)
    {
        if (m.epoch > s.epoch) return catch_up_from(s, m.from);
        if (m.ballot > ballot_ && role_ != Role::Follower) step_down(m.ballot);
    }

    void nack(const Persist& s, MemberId to)
    {
        Msg n = make(MsgKind::Nack, s);
        n.ballot = s.promised;
        send_to(to, n);
    }

    /// Same epoch, or reacts: an older sender is told, a newer one is
    /// caught up with.
    bool epoch_ok(const Persist& s, const Msg& m)
    {
        if (m.epoch == s.epoch) return true;
        if (m.epoch < s.epoch) {
            record("paxos_ignored", {{"msg", name(m.kind)}, {"from", m.from}, {"reason", "stale-epoch"}, {"epoch", m.epoch}});
            if (s.has(m.from)) nack(s, m.from);
            return false;
        }
        catch_up_from(s, m.from);
        return false;
    }

    void catch_up_from(const Persist& s, MemberId from)
    {
        Msg r = make(MsgKind::CatchUpRequest, s);
        r.applied = s.applied;
        send_to(from, r);
    }

    // ------------------------------------------------------------ phase 2

    void drive()
    {
        if (reprepare_ && role_ == Role::Leader) {
            reprepare_ = false;
            return start_election(false);
        }
        while (role_ == Role::Leader && !inflight_ && mode_ == Mode::Active) {
            Persist s = load();
            const std::uint64_t slot = s.applied;
            if (!in_range(slot)) {
                record("paxos_log_full", {{"slot", slot}});
                return;
            }
            SlotRec r = read_slot(slot);
            if (r.chosen) {
                apply_ready();
                continue;
            }
            std::uint64_t cmd = 0;
            if (auto it = reproposals_.find(slot); it != reproposals_.end()) {
                cmd = it->second;
            } else if (!control_.empty()) {
                cmd = control_.front();
                control_.pop_front();
            } else if (pending_.empty() && s.last_client < c_.config_.commands) {
                cmd = command::client(s.last_client + 1);
            } else {
                return;
            }
            propose(s, slot, cmd);
            return;
        }
    }

    void propose(const Persist& s0, std::uint64_t slot, std::uint64_t cmd)
    {
        Persist s = s0;
        if (!paxos_rules::admit_accept(s.promised, ballot_)) return step_down(s.promised);
        SlotRec r = read_slot(slot);
        r.ballot = ballot_;
        r.cmd = cmd;
        heap_->transact([&] {
            write_slot(slot, r);
            if (slot + 1 > s.max_slot) {
                s.max_slot = slot + 1;
                write_header(s);
            }
        });
        inflight_ = slot;
        inflight_cmd_ = cmd;
        inflight_since_ = now();
        votes_ = {member_};
        if (votes_.size() >= s.majority()) return choose(s);
        Msg a = make(MsgKind::Accept, s);
        a.ballot = ballot_;
        a.slot = slot;
        a.cmd = cmd;
        broadcast(s, a);
    }

    void on_accept(const Persist& s0, const Msg& m)
    {
        Persist s = s0;
        if (!epoch_ok(s, m) || !s.has(m.from) || !in_range(m.slot)) return;
        if (!paxos_rules::admit_accept(s.promised, m.ballot)) return nack(s, m.from);
        if (m.slot < s.applied) {
            // already decided here; the leader learns it from a catch-up
            Msg d = make(MsgKind::Decide, s);
            d.slot = m.slot;
            d.cmd = read_slot(m.slot).chosen_cmd;
            send_to(m.from, d);
            return;
        }
        SlotRec r = read_slot(m.slot);
        r.ballot = m.ballot;
        r.cmd = m.cmd;
        s.promised = m.ballot;
        s.max_slot = std::max(s.max_slot, m.slot + 1);
        heap_->transact([&] {
            write_slot(m.slot, r);
            write_header(s);
        });
        if (role_ != Role::Follower && m.from != member_) step_down(m.ballot);
        last_contact_ = now();
        leader_hint_ = m.from;
        Msg v = make(MsgKind::Accepted, s);
        v.ballot = m.ballot;
        v.slot = m.slot;
        send_to(m.from, v);
    }

    void on_accepted(const Persist& s, const Msg& m)
    {
        if (!epoch_ok(s, m) || !s.has(m.from)) return;
        last_ack_[m.from] = now();
        if (role_ != Role::Leader || m.ballot != ballot_ || !inflight_ || m.slot != *inflight_) return;
        votes_.insert(m.from);
        if (votes_.size() >= s.majority()) choose(s);
    }

    void choose(const Persist& s)
    {
        const std::uint64_t slot = *inflight_;
        const std::uint64_t cmd = inflight_cmd_;
        inflight_.reset();
        reproposals_.erase(slot);
        learn(slot, cmd);
        Msg d = make(MsgKind::Decide, s);
        d.slot = slot;
        d.cmd = cmd;
        broadcast(s, d);
        if (reprepare_) {
            // the new configuration needs its own promises
            reprepare_ = false;
            return start_election(false);
        }
        drive();
    }

    void on_decide(const Msg& m)
    {
        learn(m.slot, m.cmd);
        if (view_.applied < m.slot) catch_up_from(view_, m.from);
        drive();
    }

    // ---------------------------------------------------- liveness

    void tick(std::uint64_t gen)
    {
        if (gen != tick_gen_) return;
        guarded([&] {
            if (mode_ != Mode::Active) return;
            Persist s = load();
            if (!s.has(member_)) return retire(s);
            const SimTime t = now();
            switch (role_) {
            case Role::Leader: {
                Msg hb = make(MsgKind::Heartbeat, s);
                hb.ballot = ballot_;
                hb.applied = s.applied;
                broadcast(s, hb);
                for (const auto& [id, rack] : s.members) {
                    if (id == member_ || pending_.contains(id)) continue;
                    auto it = last_ack_.find(id);
                    if (it == last_ack_.end()) {
                        last_ack_[id] = t;
                    } else if (t - it->second > c_.suspicion_) {
                        suspect(s, id);
                    }
                }
                for (auto m : std::set<MemberId>(pending_)) {
                    auto& since = pending_since_[m];
                    if (since == SimTime{}) since = t;
                    if (t - since > c_.suspicion_ * 2) {
                        since = t;
                        recover(s, m, false);
                    }
                }
                if (inflight_ && t - inflight_since_ >= c_.heartbeat_) {
                    inflight_since_ = t;
                    Msg a = make(MsgKind::Accept, s);
                    a.ballot = ballot_;
                    a.slot = *inflight_;
                    a.cmd = inflight_cmd_;
                    for (const auto& [id, rack] : s.members)
                        if (id != member_ && !votes_.contains(id)) send_to(id, a);
                }
                drive();
                break;
            }
            case Role::Candidate:
                if (t - candidate_since_ > c_.suspicion_) start_election(true);
                break;
            case Role::Follower:
                if (t - last_contact_ > c_.suspicion_ + SimTime::from_us(5) * member_) start_election(true);
                break;
            }
            schedule_tick(gen, c_.heartbeat_ + charge());
        });
    }

    void suspect(const Persist& s, MemberId m)
    {
        record("paxos_suspect", {{"member", m}});
        if (!c_.metrics_.suspicion_at) c_.metrics_.suspicion_at = now();
        pending_.insert(m);
        pending_since_[m] = now();
        recover(s, m, false);
    }

    void on_heartbeat(const Persist& s, const Msg& m)
    {
        if (!epoch_ok(s, m) || !s.has(m.from)) return;
        if (m.ballot < s.promised) return nack(s, m.from);
        if (role_ != Role::Follower && m.from != member_) step_down(m.ballot);
        last_contact_ = now();
        leader_hint_ = m.from;
        pending_.erase(m.from);
        Msg ack = make(MsgKind::HeartbeatAck, s);
        ack.applied = s.applied;
        send_to(m.from, ack);
        if (m.applied > s.applied) catch_up_from(s, m.from);
    }

    void on_heartbeat_ack(const Persist& s, const Msg& m)
    {
        if (m.epoch != s.epoch || !s.has(m.from)) return;
        last_ack_[m.from] = now();
        if (pending_.erase(m.from) != 0) {
            pending_since_.erase(m.from);
            record("paxos_member_back", {{"member", m.from}, {"how", "answered"}});
            drive();
        }
    }

    void on_catchup_request(const Persist& s, const Msg& m)
    {
        Msg r = make(MsgKind::CatchUp, s);
        for (std::uint64_t slot = m.applied; slot < s.max_slot && in_range(slot); ++slot) {
            SlotRec rec = read_slot(slot);
            if (!rec.chosen) break;
            r.entries.push_back({slot, rec.ballot, rec.chosen_cmd, true});
        }
        if (!r.entries.empty()) send_pid(m.from_pid, r);
    }

    void on_catchup(const Msg& m)
    {
        for (const auto& e : m.entries) {
            if (mode_ != Mode::Active) return;
            if (e.chosen) learn(e.slot, e.cmd);
        }
        drive();
    }

    // ------------------------------------------------------ recovery

    /// Leader reaction to a member that is down. `by_notice` means the
    /// failure type is known from a broadcast rather than a timeout.
    void recover(const Persist& s, MemberId m, bool by_notice)
    {
        if (role_ != Role::Leader || !s.has(m)) return;
        const bool transfer = c_.config_.strategy == RecoveryStrategy::Transfer || memory_dead_.contains(m);
        if (transfer) return start_transfer(s, m);
        if (by_notice) {
            // the rack's fast failure handler is on it
            ++reincarnations_tried_[m];
            return;
        }
        auto dead = w_.tor().route(endpoint(m));
        if (!dead) return;
        if (reincarnations_tried_[m]++ > 0) {
            // a reincarnation already had its chance
            record("paxos_escalate", {{"member", m}});
            return start_transfer(s, m);
        }
        const std::uint64_t cmd = command::reincarnate(m, *dead);
        if (std::find(control_.begin(), control_.end(), cmd) == control_.end()) {
            record("paxos_propose_reincarnate", {{"member", m}, {"dead", dead->value}});
            control_.push_back(cmd);
        }
        drive();
    }

    void execute_reincarnation(const Persist& s, MemberId m, ProcessId dead)
    {
        auto rack = s.rack_of(m);
        if (!rack) return;
        PaxosCluster* c = &c_;
        World* w = &w_;
        const std::string ep = endpoint(m);
        const NodeRef from = w_.host(pid_);
        const NodeRef to{*rack, NodeRef::kInfra};
        const SimTime d = charge();
        auto request = [w, c, ep, dead, from, to] {
            w->tor().send(from, to, w->rack(to.rack).mmu->actor(), "reincarnate_request", [w, c, ep, dead, to] {
                auto current = w->tor().route(ep);
                if (!current || *current != dead || !w->exists(dead) || c->replica(dead) == nullptr) {
                    w->sim().record(w->rack(to.rack).mmu->name(), "reincarnate_request_skipped", {{"dead", dead.value}});
                    return;
                }
                w->sim().record(w->rack(to.rack).mmu->name(), "reincarnate_request_run", {{"dead", dead.value}});
                w->rack(to.rack).monitor->run_handler(
                    dead,
                    FastFailureHandler{{{HandlerStep::Kind::RequestProvision, "paxos-heir"},
                                        {HandlerStep::Kind::RevokeMemory, {}},
                                        {HandlerStep::Kind::StealOnBehalf, {}}}},
                    w->host(dead).index);
            });
        };
        if (d == SimTime{}) {
            request();
        } else {
            w_.os_of(pid_).post(pid_, d, "paxos_out", request);
        }
    }

    void start_transfer(const Persist& s, MemberId m)
    {
        if (transfer_requested_.contains(m)) return;
        auto rack = s.rack_of(m);
        auto dead = w_.tor().route(endpoint(m));
        if (!rack || !dead) return;
        transfer_requested_.insert(m);
        record("paxos_transfer_start", {{"member", m}});
        c_.join_requests_[*dead] = PaxosCluster::JoinRequest{member_, m};
        World* w = &w_;
        const NodeRef from = w_.host(pid_);
        const NodeRef to{*rack, NodeRef::kInfra};
        const ProcessId d = *dead;
        const SimTime delay = charge();
        auto request = [w, from, to, d] {
            w->tor().send(from, to, w->rack(to.rack).mmu->actor(), "provision_request", [w, to, d] {
                if (!w->provision(to.rack, "paxos-joiner", d))
                    w->sim().record(w->rack(to.rack).mmu->name(), "provision_failed", {{"for", d.value}});
            });
        };
        if (delay == SimTime{}) {
            request();
        } else {
            w_.os_of(pid_).post(pid_, delay, "paxos_out", request);
        }
    }

    void on_joiner_ready(const Persist& s, const Msg& m)
    {
        if (role_ != Role::Leader || !s.has(m.subject)) return;
        for (auto cmd : control_)
            if (command::kind(cmd) == command::Kind::Reconfigure && ((command::payload(cmd) >> 32) & 0xff) == m.subject)
                return;
        const MemberId fresh = c_.next_member_id();
        const auto rack = w_.host(m.from_pid).rack;
        control_.push_back(command::reconfigure(m.subject, fresh, rack, m.from_pid));
        record("paxos_propose_reconfigure", {{"old", m.subject}, {"new", fresh}, {"joiner", m.from_pid.value}});
        drive();
    }

    void send_snapshot(const Persist& s, MemberId new_member, ProcessId joiner)
    {
        Msg snap = make(MsgKind::Snapshot, s);
        snap.subject = new_member;
        Persist st = s;
        st.member = new_member;
        st.promised = Ballot{};
        snap.state = st;
        for (std::uint64_t slot = 0; slot < s.applied && in_range(slot); ++slot) {
            SlotRec r = read_slot(slot);
            snap.entries.push_back({slot, r.ballot, r.chosen_cmd, true});
        }
        const std::size_t bytes = heap_->size_bytes();
        c_.metrics_.snapshot_bytes += bytes;
        record("paxos_snapshot", {{"to", joiner.value}, {"bytes", bytes}, {"slots", snap.entries.size()}});
        send_pid(joiner, snap, bytes);
    }

    void install(const Msg& m)
    {
        if (!m.state) return;
        Persist s = *m.state;
        constexpr std::size_t kBatch = 8;
        for (std::size_t i = 0; i < m.entries.size(); i += kBatch) {
            heap_->transact([&] {
                for (std::size_t j = i; j < std::min(m.entries.size(), i + kBatch); ++j) {
                    const auto& e = m.entries[j];
                    SlotRec r;
                    r.ballot = e.ballot;
                    r.cmd = e.cmd;
                    r.chosen = true;
                    r.chosen_cmd = e.cmd;
                    write_slot(e.slot, r);
                }
            });
        }
        heap_->transact([&] { write_header(s); });
        member_ = s.member;
        w_.tor().set_route(endpoint(member_), pid_);
        ++c_.metrics_.transfers;
        record("paxos_joined", {{"member", member_}, {"epoch", s.epoch}, {"applied", s.applied}});
        activate();
        c_.note_adopted(pid_, ProcessId{}, s.applied);
        Msg j = make(MsgKind::Joined, s);
        j.subject = c_.join_requests_.count(dead_) ? c_.join_requests_[dead_].replaces : 0;
        j.applied = s.applied;
        broadcast(s, j);
    }

    void on_rejoined(const Persist& s, const Msg& m)
    {
        if (!s.has(m.from)) return;
        pending_.erase(m.from);
        pending_since_.erase(m.from);
        reincarnations_tried_.erase(m.from);
        last_ack_[m.from] = now();
        record("paxos_member_back", {{"member", m.from}, {"how", "reincarnated"}});
        if (role_ == Role::Leader) {
            if (inflight_) {
                Msg a = make(MsgKind::Accept, s);
                a.ballot = ballot_;
                a.slot = *inflight_;
                a.cmd = inflight_cmd_;
                send_to(m.from, a);
            }
            Msg hb = make(MsgKind::Heartbeat, s);
            hb.ballot = ballot_;
            hb.applied = s.applied;
            send_to(m.from, hb);
            drive();
        }
    }

    void on_joined(const Persist& s, const Msg& m)
    {
        if (!s.has(m.from)) return;
        pending_.erase(m.subject);
        pending_since_.erase(m.subject);
        memory_dead_.erase(m.subject);
        joiners_.erase(m.from);
        pending_.erase(m.from);
        pending_since_.erase(m.from);
        last_ack_[m.from] = now();
        record("paxos_member_back", {{"member", m.from}, {"how", "joined"}, {"replaces", m.subject}});
        register_groups();
        if (role_ == Role::Leader) {
            Msg hb = make(MsgKind::Heartbeat, s);
            hb.ballot = ballot_;
            hb.applied = s.applied;
            send_to(m.from, hb);
            drive();
        }
    }

    PaxosCluster& c_;
    World& w_;
    ProcessId pid_;
    ProcessMemory mem_;
    std::optional<UndoLogHeap> heap_;
    VirtualAddress hdr_;
    VirtualAddress slots_;
    MemberId member_ = 0;
    Mode mode_;
    Role role_ = Role::Follower;
    Persist view_;
    SimTime delay_{};
    std::uint64_t tick_gen_ = 0;

    Ballot ballot_;
    bool elected_by_timeout_ = false;
    bool reprepare_ = false;
    std::set<MemberId> promises_;
    std::map<std::uint64_t, std::vector<SlotRec>> reports_;
    std::uint64_t prepare_from_ = 0;
    std::map<std::uint64_t, std::uint64_t> reproposals_;
    std::deque<std::uint64_t> control_;
    std::optional<std::uint64_t> inflight_;
    std::uint64_t inflight_cmd_ = 0;
    SimTime inflight_since_{};
    std::set<MemberId> votes_;

    MemberId leader_hint_ = 0;
    SimTime last_contact_{};
    SimTime candidate_since_{};
    std::map<MemberId, SimTime> last_ack_;
    std::set<MemberId> pending_;
    std::map<MemberId, SimTime> pending_since_;
    std::set<MemberId> memory_dead_;
    std::set<MemberId> transfer_requested_;
    std::map<MemberId, unsigned> reincarnations_tried_;
    std::map<MemberId, ProcessId> joiners_;

public:
    void start_as_member()
    {
        activate();
    }
    void campaign() { guarded([&] { start_election(false); }); }
    void probe_receive(const Msg& m) { receive(m); }
    friend class PaxosCluster;
};

// ======================================================================
// PaxosCluster

PaxosCluster::PaxosCluster(World& world, PaxosConfig config) : world_(world), config_(config)
{
    if (config_.replicas == 0 || config_.replicas > kMaxMembers)
        throw Error(Errc::config_invalid, "replica count must be between 1 and 8");
    if (world_.rack_count() < config_.replicas)
        throw Error(Errc::config_invalid, "one rack per replica is required");
    const LatencyProfile& p = world_.sim().profile();
    suspicion_ = config_.suspicion_timeout == SimTime{} ? p.rtt(LinkClass::CrossRackTor) * 3 : config_.suspicion_timeout;
    heartbeat_ = config_.heartbeat_interval == SimTime{} ? p.rtt(LinkClass::CrossRackTor) : config_.heartbeat_interval;
    world_.register_program("paxos-heir", [this](ProcessId fresh, ProcessId dead) { start_heir(fresh, dead); });
    world_.register_program("paxos-joiner", [this](ProcessId fresh, ProcessId dead) { start_joiner(fresh, dead); });
}

PaxosCluster::~PaxosCluster() = default;

WorldConfig PaxosCluster::world_config(const PaxosConfig& config, const LatencyProfile& profile, std::uint64_t seed)
{
    WorldConfig wc;
    wc.profile = profile;
    wc.seed = seed;
    wc.racks = config.replicas;
    wc.rack.compute_elements = 4;
    wc.rack.memory_elements = 2;
    wc.rack.frames_per_element = 64;
    wc.trace_events = false;
    return wc;
}

void PaxosCluster::start()
{
    if (started_) return;
    started_ = true;
    std::vector<std::pair<MemberId, std::uint32_t>> members;
    for (unsigned i = 0; i < config_.replicas; ++i) members.emplace_back(static_cast<MemberId>(i + 1), i);
    next_member_ = static_cast<MemberId>(config_.replicas + 1);
    std::vector<Replica*> created;
    for (unsigned i = 0; i < config_.replicas; ++i) {
        const ProcessId pid = world_.spawn(NodeRef{i, 0});
        auto r = std::make_unique<Replica>(*this, pid, Replica::Mode::Active);
        r->create(static_cast<MemberId>(i + 1), members);
        world_.tor().set_route("member-" + std::to_string(i + 1), pid);
        applied_[pid] = {};
        created.push_back(r.get());
        replicas_[pid] = std::move(r);
    }
    for (auto* r : created) r->start_as_member();
    metrics_.epoch_before = 1;
    world_.start_monitors();
    created.front()->campaign();
}

void PaxosCluster::inject(const PaxosFault& fault)
{
    world_.sim().schedule(world_.tor().actor(), Delivery::after(fault.at - world_.sim().now()), "fault",
                          [this, fault] { apply_fault(fault); });
}

std::optional<std::uint32_t> PaxosCluster::arena_element(ProcessId pid) const
{
    auto it = replicas_.find(pid);
    if (it == replicas_.end() || !it->second->heap()) return std::nullopt;
    auto tr = world_.rack(world_.host(pid).rack).mmu->translate(pid, it->second->heap()->base());
    if (!tr) return std::nullopt;
    return tr->frame.element;
}

void PaxosCluster::apply_fault(const PaxosFault& fault)
{
    Simulator& sim = world_.sim();
    auto pid = pid_of(fault.member);
    nlohmann::json rec{{"member", fault.member}};
    if (!metrics_.first_fault_at && fault.kind != PaxosFault::Kind::Revive && fault.kind != PaxosFault::Kind::FailMonitor)
        metrics_.first_fault_at = sim.now();
    switch (fault.kind) {
    case PaxosFault::Kind::CrashCompute:
    case PaxosFault::Kind::CrashBoth: {
        if (!pid) break;
        const NodeRef node = world_.host(*pid);
        if (fault.kind == PaxosFault::Kind::CrashBoth) {
            if (auto e = arena_element(*pid)) {
                world_.memory(node.rack, *e).fail_now();
                rec["memory"] = world_.memory(node.rack, *e).name();
            }
        }
        world_.compute(node).crash();
        last_crashed_[fault.member] = node;
        rec["compute"] = node.str();
        break;
    }
    case PaxosFault::Kind::FailMemory: {
        if (!pid) break;
        const NodeRef node = world_.host(*pid);
        if (auto e = arena_element(*pid)) {
            world_.memory(node.rack, *e).fail_now();
            rec["memory"] = world_.memory(node.rack, *e).name();
        }
        break;
    }
    case PaxosFault::Kind::FailMonitor: {
        if (pid) {
            world_.rack(world_.host(*pid).rack).monitor->fail();
        } else if (fault.member >= 1 && fault.member <= world_.rack_count()) {
            world_.rack(fault.member - 1).monitor->fail();
        }
        break;
    }
    case PaxosFault::Kind::Revive: {
        auto it = last_crashed_.find(fault.member);
        if (it == last_crashed_.end()) break;
        world_.compute(it->second).revive();
        rec["compute"] = it->second.str();
        break;
    }
    }
    static constexpr std::array<const char*, 5> kNames{"crash-compute", "fail-memory", "crash-both", "fail-monitor",
                                                       "revive"};
    rec["fault"] = kNames[static_cast<std::size_t>(fault.kind)];
    sim.record(world_.tor().actor(), "paxos_fault_injected", rec);
}

void PaxosCluster::start_heir(ProcessId fresh, ProcessId dead)
{
    auto r = std::make_unique<Replica>(*this, fresh, Replica::Mode::Adopting);
    r->dead_ = dead;
    Replica* raw = r.get();
    replicas_[fresh] = std::move(r);
    ComputeOs& os = world_.os_of(fresh);
    os.set_handler(fresh, SignalKind::PageAdded, [raw](const Signal& sig) { raw->adopt(sig); });
    os.set_handler(fresh, SignalKind::MemoryFault, [raw](const Signal& sig) { raw->give_up(sig); });
}

void PaxosCluster::start_joiner(ProcessId fresh, ProcessId dead)
{
    auto r = std::make_unique<Replica>(*this, fresh, Replica::Mode::Installing);
    r->dead_ = dead;
    Replica* raw = r.get();
    replicas_[fresh] = std::move(r);
    auto req = join_requests_.find(dead);
    if (req == join_requests_.end()) return;
    raw->prepare_join(req->second.leader, req->second.replaces);
}

Replica* PaxosCluster::replica(ProcessId pid)
{
    auto it = replicas_.find(pid);
    return it == replicas_.end() ? nullptr : it->second.get();
}

std::optional<ProcessId> PaxosCluster::pid_of(MemberId m) const
{
    return world_.tor().route("member-" + std::to_string(m));
}

std::optional<MemberId> PaxosCluster::leader() const
{
    std::optional<MemberId> best;
    Ballot top;
    for (const auto& [pid, r] : replicas_) {
        if (r->mode() != Replica::Mode::Active || r->role() != Replica::Role::Leader) continue;
        if (!world_.compute(world_.host(pid)).running(pid)) continue;
        if (!best || r->ballot_ > top) {
            best = r->member();
            top = r->ballot_;
        }
    }
    return best;
}

std::uint64_t PaxosCluster::epoch() const
{
    std::uint64_t e = 0;
    for (const auto& [pid, r] : replicas_)
        if (r->mode() == Replica::Mode::Active) e = std::max(e, r->view().epoch);
    return e;
}

std::vector<MemberId> PaxosCluster::members() const
{
    const Replica* newest = nullptr;
    for (const auto& [pid, r] : replicas_)
        if (r->mode() == Replica::Mode::Active && (!newest || r->view().epoch > newest->view().epoch)) newest = r.get();
    std::vector<MemberId> out;
    if (newest)
        for (const auto& [id, rack] : newest->view().members) out.push_back(id);
    return out;
}

std::vector<std::uint64_t> PaxosCluster::applied_log(ProcessId pid) const
{
    auto it = applied_.find(pid);
    return it == applied_.end() ? std::vector<std::uint64_t>{} : it->second;
}

bool PaxosCluster::healthy() const
{
    auto ms = members();
    if (ms.empty()) return false;
    for (auto m : ms) {
        auto pid = pid_of(m);
        if (!pid) return false;
        auto it = replicas_.find(*pid);
        if (it == replicas_.end() || it->second->mode() != Replica::Mode::Active) return false;
        const NodeRef node = world_.host(*pid);
        if (!world_.compute(node).running(*pid) || world_.tor().fenced(node)) return false;
        auto e = arena_element(*pid);
        if (!e || world_.memory(node.rack, *e).failed()) return false;
    }
    return true;
}

bool PaxosCluster::finished() const
{
    if (!healthy()) return false;
    for (auto m : members()) {
        auto pid = pid_of(m);
        auto it = replicas_.find(*pid);
        if (it->second->view().last_client < config_.commands) return false;
    }
    return true;
}

const PaxosMetrics& PaxosCluster::run(SimTime limit)
{
    world_.sim().run_until([this] { return finished(); }, limit);
    metrics_.epoch_after = epoch();
    check_safety();
    return metrics_;
}

void PaxosCluster::note_chosen(ProcessId by, std::uint64_t slot, std::uint64_t cmd)
{
    auto [it, fresh] = chosen_.emplace(slot, cmd);
    if (!fresh && it->second != cmd)
        note_violation("agreement: slot " + std::to_string(slot) + " chosen as " + command::describe(it->second) +
                       " and " + command::describe(cmd) + " (P" + std::to_string(by.value) + ")");
    if (!fresh) return;
    if (command::kind(cmd) == command::Kind::Client) {
        ++metrics_.client_chosen;
        if (metrics_.first_fault_at && !metrics_.next_chosen_at && healthy()) {
            metrics_.next_chosen_at = world_.sim().now();
            if (!metrics_.full_health_at) metrics_.full_health_at = world_.sim().now();
        }
    }
}

void PaxosCluster::note_applied(ProcessId by, std::uint64_t slot, std::uint64_t cmd)
{
    auto& log = applied_[by];
    if (slot != log.size())
        note_violation("P" + std::to_string(by.value) + " applied slot " + std::to_string(slot) + " out of order");
    auto it = chosen_.find(slot);
    if (it == chosen_.end() || it->second != cmd)
        note_violation("P" + std::to_string(by.value) + " applied an unchosen command at slot " + std::to_string(slot));
    log.push_back(cmd);
}

void PaxosCluster::note_adopted(ProcessId pid, ProcessId predecessor, std::uint64_t applied)
{
    // The arena's applied prefix must be a prefix of the chosen log.
    std::vector<std::uint64_t> prefix;
    for (std::uint64_t slot = 0; slot < applied; ++slot) {
        auto it = chosen_.find(slot);
        if (it == chosen_.end()) {
            note_violation("P" + std::to_string(pid.value) + " adopted an applied slot nobody chose: " + std::to_string(slot));
            break;
        }
        prefix.push_back(it->second);
    }
    if (predecessor.value != 0) {
        const auto& before = applied_[predecessor];
        if (before.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), before.begin()))
            note_violation("P" + std::to_string(pid.value) + " adopted a prefix its predecessor never applied");
    }
    applied_[pid] = std::move(prefix);
    if (metrics_.first_fault_at && !metrics_.full_health_at && healthy()) metrics_.full_health_at = world_.sim().now();
}

void PaxosCluster::note_violation(std::string what)
{
    world_.sim().record(world_.tor().actor(), "violation", {{"what", what}});
    metrics_.violations.push_back(std::move(what));
}

std::size_t PaxosCluster::inject_stale_accept(MemberId from, std::uint64_t stale_epoch, std::uint64_t slot,
                                              std::uint64_t cmd)
{
    Msg m;
    m.kind = MsgKind::Accept;
    m.from = from;
    m.from_pid = pid_of(from).value_or(ProcessId{});
    m.epoch = stale_epoch;
    m.ballot = Ballot{1u << 20, from};
    m.slot = slot;
    m.cmd = cmd;
    std::size_t changed = 0;
    for (auto& [pid, r] : replicas_)
        if (r->member() != from && r->probe(m)) ++changed;
    return changed;
}

void PaxosCluster::check_safety()
{
    // applied logs against the chosen log
    for (const auto& [pid, log] : applied_) {
        for (std::size_t slot = 0; slot < log.size(); ++slot) {
            auto it = chosen_.find(slot);
            if (it == chosen_.end() || it->second != log[slot]) {
                note_violation("P" + std::to_string(pid.value) + " applied log diverges at slot " + std::to_string(slot));
                break;
            }
        }
    }
    // no write lands from a fenced element after its fence
    std::map<std::string, SimTime> fences;
    for (const auto* e : world_.sim().trace().of_kind("fence")) {
        if (!e->fields.contains("node")) continue;
        const std::string node = e->fields["node"].get<std::string>();
        if (!fences.contains(node)) fences[node] = e->t;
    }
    for (const auto* e : world_.sim().trace().of_kind("me_access")) {
        const auto& f = e->fields;
        if (f.value("op", "") != "write" || f.value("outcome", "") != "ok") continue;
        auto it = fences.find(f.value("requester", ""));
        if (it != fences.end() && e->t >= it->second)
            note_violation("write from fenced " + it->first + " at " + std::to_string(e->t.ns()) + "ns");
    }
}

}  // namespace ddc

namespace ddc {

PaxosFuzzCase make_paxos_fuzz_case(std::uint64_t seed)
{
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 7);
    auto pick = [&rng](std::uint64_t lo, std::uint64_t hi) { return lo + rng() % (hi - lo + 1); };

    PaxosFuzzCase c;
    c.seed = seed;
    c.config.commands = static_cast<unsigned>(pick(4, 10));
    c.config.strategy = pick(0, 1) ? RecoveryStrategy::Transfer : RecoveryStrategy::Reincarnate;
    c.config.fast_handlers = pick(0, 3) != 0;
    c.jitter = static_cast<double>(pick(0, 50)) / 100.0;

    const auto member = [&] { return static_cast<MemberId>(pick(1, c.config.replicas)); };
    const auto when = [&] { return SimTime::from_us(static_cast<SimTime::rep>(pick(40, 900))); };
    const std::size_t n = pick(1, 2);
    for (std::size_t i = 0; i < n; ++i) {
        PaxosFault f;
        f.member = member();
        f.at = when();
        switch (pick(0, 5)) {
        case 0:
        case 1: f.kind = PaxosFault::Kind::CrashCompute; break;
        case 2: f.kind = PaxosFault::Kind::FailMemory; break;
        case 3: f.kind = PaxosFault::Kind::CrashBoth; break;
        case 4: f.kind = PaxosFault::Kind::FailMonitor; break;
        default: {
            // crash, then come back as a zombie
            f.kind = PaxosFault::Kind::CrashCompute;
            c.faults.push_back(f);
            f.kind = PaxosFault::Kind::Revive;
            f.at = f.at + SimTime::from_us(static_cast<SimTime::rep>(pick(2, 400)));
            break;
        }
        }
        c.faults.push_back(f);
    }
    return c;
}

PaxosFuzzOutcome run_paxos_case(const PaxosFuzzCase& c, SimTime limit)
{
    LatencyProfile profile = LatencyProfile::current();
    profile.jitter_fraction = c.jitter;
    World world(PaxosCluster::world_config(c.config, profile, c.seed));
    PaxosCluster cluster(world, c.config);
    cluster.start();
    for (const auto& f : c.faults) cluster.inject(f);
    PaxosFuzzOutcome out;
    out.input = c;
    out.metrics = cluster.run(limit);
    out.finished = cluster.finished();
    return out;
}

PaxosFuzzSummary paxos_fuzz(std::uint64_t first_seed, std::size_t runs)
{
    PaxosFuzzSummary sum;
    for (std::uint64_t seed = first_seed; seed < first_seed + runs; ++seed) {
        auto out = run_paxos_case(make_paxos_fuzz_case(seed));
        ++sum.runs;
        if (out.finished) ++sum.finished;
        sum.reincarnations += out.metrics.reincarnations;
        sum.transfers += out.metrics.transfers;
        if (!out.metrics.violations.empty()) sum.failures[seed] = out.metrics.violations.front();
    }
    return sum;
}

}  // namespace ddc
