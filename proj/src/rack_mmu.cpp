#include "ddc/rack_mmu.hpp"

#include <algorithm>

namespace ddc {

namespace {

nlohmann::json pages_json(const std::vector<VirtualAddress>& pages)
{
    auto arr = nlohmann::json::array();
    for (auto p : pages) arr.push_back(p.raw());
    return arr;
}

std::vector<VirtualAddress> unique_pages(const std::vector<VirtualAddress>& pages)
{
    std::vector<VirtualAddress> out;
    out.reserve(pages.size());
    for (auto p : pages) out.push_back(p.page_base());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

RackMmu::RackMmu(Simulator& sim, std::string name, std::vector<MemoryElement*> elements, RackMmuConfig config)
    : sim_(sim), name_(std::move(name)), elements_(std::move(elements)), config_(config)
{
    actor_ = sim_.add_actor(name_);
    frame_used_.reserve(elements_.size());
    for (auto* me : elements_) frame_used_.emplace_back(me->capacity(), false);
}

void RackMmu::register_process(ProcessId pid, std::uint32_t compute_element)
{
    if (pid.value > kMaxPid) throw Error(Errc::unknown_process, "pid exceeds the reserved address bits");
    auto& p = procs_[pid];
    p.compute = compute_element;
    p.alive = true;
    p.table.owner = pid;
    record("mmu_register", {{"pid", pid.value}, {"compute", compute_element}});
}

void RackMmu::mark_dead(ProcessId pid)
{
    auto it = procs_.find(pid);
    if (it == procs_.end() || !it->second.alive) return;
    it->second.alive = false;
    record("mmu_process_dead", {{"pid", pid.value}});
}

bool RackMmu::alive(ProcessId pid) const
{
    auto it = procs_.find(pid);
    return it != procs_.end() && it->second.alive;
}

std::uint32_t RackMmu::host_of(ProcessId pid) const
{
    auto it = procs_.find(pid);
    if (it == procs_.end()) throw Error(Errc::unknown_process);
    return it->second.compute;
}

void RackMmu::set_reachable(std::uint32_t compute_element, std::uint32_t memory_element, bool reachable)
{
    if (reachable)
        cut_links_.erase({compute_element, memory_element});
    else
        cut_links_.insert({compute_element, memory_element});
}

bool RackMmu::reachable(std::uint32_t compute_element, std::uint32_t memory_element) const
{
    return !cut_links_.contains({compute_element, memory_element});
}

std::size_t RackMmu::free_frames() const
{
    std::size_t n = 0;
    for (const auto& used : frame_used_) n += static_cast<std::size_t>(std::count(used.begin(), used.end(), false));
    return n;
}

std::vector<VirtualAddress> RackMmu::allocate(ProcessId pid, std::size_t n_pages, AllocFlags flags)
{
    auto it = procs_.find(pid);
    if (it == procs_.end()) throw Error(Errc::unknown_process);
    if (n_pages == 0) return {};
    Proc& proc = it->second;

    std::size_t available = 0;
    bool any_reachable = false;
    for (std::uint32_t e = 0; e < elements_.size(); ++e) {
        if (!reachable(proc.compute, e) || elements_[e]->failed()) continue;
        any_reachable = true;
        available += static_cast<std::size_t>(std::count(frame_used_[e].begin(), frame_used_[e].end(), false));
    }
    if (!any_reachable) throw Error(Errc::no_reachable_element);
    if (available < n_pages) throw Error(Errc::out_of_frames);

    std::vector<VirtualAddress> out;
    auto frames = nlohmann::json::array();
    for (std::uint32_t e = 0; e < elements_.size() && out.size() < n_pages; ++e) {
        if (!reachable(proc.compute, e) || elements_[e]->failed()) continue;
        for (std::uint32_t f = 0; f < frame_used_[e].size() && out.size() < n_pages; ++f) {
            if (frame_used_[e][f]) continue;
            VirtualAddress page;
            do {
                page = VirtualAddress::make(pid, proc.next_page++);
            } while (proc.table.reserved.contains(page) || proc.table.entries.contains(page));
            frame_used_[e][f] = true;
            proc.table.entries[page] = Mapping{FrameId{e, f}, kPermRW, flags.allow_steal, false};
            out.push_back(page);
            frames.push_back(FrameId{e, f}.str());

            MappingUpdate set{MappingUpdate::Op::Set, pid, page, f, kPermRW, true};
            // allocation is a synchronous setup call: the entry exists on return
            static_cast<void>(elements_[e]->apply_mapping_update(set));
        }
    }
    record("mmu_allocate", {{"pid", pid.value}, {"pages", pages_json(out)}, {"frames", frames},
                            {"allow_steal", flags.allow_steal}});
    return out;
}

Result<Translation> RackMmu::translate(ProcessId pid, VirtualAddress vaddr) const
{
    auto it = procs_.find(pid);
    if (it == procs_.end()) return Errc::unmapped_address;
    auto e = it->second.table.entries.find(vaddr.page_base());
    if (e == it->second.table.entries.end()) return Errc::unmapped_address;
    if (e->second.revoked) return Errc::permission_absent;
    return Translation{e->second.frame, e->second.perms};
}

void RackMmu::grant(ProcessId src, const std::vector<VirtualAddress>& pages, ProcessId dst, Completion done)
{
    const std::uint64_t op_id = next_op_++;
    auto fail = [&](Errc e) { complete("grant", op_id, done, make_error_code(e)); };
    auto s = procs_.find(src);
    auto d = procs_.find(dst);
    if (s == procs_.end() || d == procs_.end()) return fail(Errc::unknown_process);
    if (src == dst) return fail(Errc::self_grant);
    if (!d->second.alive) return fail(Errc::dst_process_dead);

    const auto wanted = unique_pages(pages);
    for (auto p : wanted) {
        auto e = s->second.table.entries.find(p);
        if (e == s->second.table.entries.end() || e->second.revoked) return fail(Errc::unmapped_page);
    }
    if (wanted.empty()) return complete("grant", op_id, done, {});

    std::vector<Moved> moved;
    auto frames = nlohmann::json::array();
    for (auto p : wanted) {
        auto e = s->second.table.entries.find(p);
        moved.push_back({p, e->second});
        frames.push_back(e->second.frame.str());
        d->second.table.entries[p] = e->second;
        if (defect_ != MmuDefect::KeepSourceMapping) s->second.table.entries.erase(e);
        s->second.table.reserved.insert(p);
    }
    record("mmu_grant", {{"op_id", op_id}, {"src", src.value}, {"dst", dst.value}, {"pages", pages_json(wanted)},
                         {"frames", frames}});
    invalidate(src, wanted);
    reassign("grant", op_id, src, dst, std::move(moved), std::move(done));
}

void RackMmu::steal(ProcessId caller, ProcessId src, const PageSelection& pages, StealCompletion done)
{
    const std::uint64_t op_id = next_op_++;
    std::vector<VirtualAddress> wanted;
    auto wrap = [&](std::vector<VirtualAddress> moved) -> Completion {
        return [done, moved = std::move(moved)](std::error_code ec) {
            if (done) done(ec, ec ? std::vector<VirtualAddress>{} : moved);
        };
    };
    auto fail = [&](Errc e) {
        Completion c = wrap({});
        complete("steal", op_id, c, make_error_code(e));
    };
    auto c = procs_.find(caller);
    auto s = procs_.find(src);
    if (c == procs_.end() || s == procs_.end()) return fail(Errc::unknown_process);
    if (!c->second.alive) return fail(Errc::dst_process_dead);
    if (caller != src && !shares_group(caller, src)) {
        record("mmu_steal_denied", {{"op_id", op_id}, {"caller", caller.value}, {"src", src.value}});
        return fail(Errc::not_in_group);
    }

    if (pages.all) {
        for (const auto& [p, m] : s->second.table.entries) wanted.push_back(p);
    } else {
        wanted = unique_pages(pages.pages);
        for (auto p : wanted)
            if (!s->second.table.entries.contains(p)) return fail(Errc::unmapped_page);
    }
    for (auto p : wanted)
        if (!s->second.table.entries.at(p).allow_steal) return fail(Errc::page_steal_disallowed);

    if (caller == src || wanted.empty()) {
        record("mmu_steal", {{"op_id", op_id}, {"caller", caller.value}, {"src", src.value},
                             {"pages", pages_json(wanted)}, {"noop", true}});
        Completion c2 = wrap(caller == src ? wanted : std::vector<VirtualAddress>{});
        return complete("steal", op_id, c2, {});
    }

    std::vector<Moved> moved;
    auto frames = nlohmann::json::array();
    for (auto p : wanted) {
        auto e = s->second.table.entries.find(p);
        Mapping m = e->second;
        m.revoked = false;
        moved.push_back({p, m});
        frames.push_back(m.frame.str());
        c->second.table.entries[p] = m;
        s->second.table.entries.erase(e);
        s->second.table.reserved.insert(p);
    }
    record("mmu_steal", {{"op_id", op_id}, {"caller", caller.value}, {"src", src.value},
                         {"pages", pages_json(wanted)}, {"frames", frames}});
    invalidate(src, wanted);
    reassign("steal", op_id, src, caller, std::move(moved), wrap(wanted));
}

void RackMmu::revoke(ProcessId pid, const PageSelection& pages, Completion done)
{
    const std::uint64_t op_id = next_op_++;
    auto it = procs_.find(pid);
    if (it == procs_.end()) return complete("revoke", op_id, done, make_error_code(Errc::unknown_process));
    auto& entries = it->second.table.entries;

    std::vector<VirtualAddress> wanted;
    if (pages.all) {
        for (const auto& [p, m] : entries) wanted.push_back(p);
    } else {
        wanted = unique_pages(pages.pages);
        for (auto p : wanted)
            if (!entries.contains(p)) return complete("revoke", op_id, done, make_error_code(Errc::unmapped_page));
    }
    if (wanted.empty()) return complete("revoke", op_id, done, {});

    std::vector<MappingUpdate> updates;
    std::vector<std::uint32_t> targets;
    for (auto p : wanted) {
        Mapping& m = entries.at(p);
        m.revoked = true;
        updates.push_back({MappingUpdate::Op::Clear, pid, p, m.frame.index, kPermNone, false});
        targets.push_back(m.frame.element);
    }
    record("mmu_revoke", {{"op_id", op_id}, {"pid", pid.value}, {"pages", pages_json(wanted)}});
    invalidate(pid, wanted);
    push_updates(std::move(updates), std::move(targets),
                 [this, op_id, done = std::move(done)](bool acked) mutable {
                     complete("revoke", op_id, done, acked ? std::error_code{} : make_error_code(Errc::element_unreachable));
                 });
}

std::uint32_t RackMmu::register_group(const std::set<ProcessId>& members)
{
    for (auto m : members)
        if (!procs_.contains(m)) throw Error(Errc::unknown_process, "group member " + m.str() + " is not registered");
    const std::uint32_t id = next_group_++;
    groups_[id] = members;
    auto arr = nlohmann::json::array();
    for (auto m : members) arr.push_back(m.value);
    record("mmu_group", {{"group", id}, {"members", arr}});
    return id;
}

bool RackMmu::shares_group(ProcessId a, ProcessId b) const
{
    return std::any_of(groups_.begin(), groups_.end(),
                       [&](const auto& g) { return g.second.contains(a) && g.second.contains(b); });
}

const V2PTable* RackMmu::table(ProcessId pid) const
{
    auto it = procs_.find(pid);
    return it == procs_.end() ? nullptr : &it->second.table;
}

std::vector<const V2PTable*> RackMmu::tables() const
{
    std::vector<const V2PTable*> out;
    for (const auto& [pid, p] : procs_) out.push_back(&p.table);
    return out;
}

void RackMmu::complete(const std::string& op, std::uint64_t op_id, Completion& done, std::error_code ec)
{
    record("mmu_complete", {{"op", op}, {"op_id", op_id}, {"outcome", ec ? ec.message() : "ok"}});
    if (!done) return;
    // completions are always asynchronous so callers see one contract
    sim_.schedule(actor_, Delivery::immediate(), "mmu_done", [d = std::move(done), ec] { d(ec); },
                  {{"op", op}, {"op_id", op_id}});
}

void RackMmu::reassign(const std::string& op, std::uint64_t op_id, ProcessId from, ProcessId to,
                       std::vector<Moved> moved, Completion done)
{
    std::vector<MappingUpdate> clears, sets;
    std::vector<std::uint32_t> elems;
    for (const auto& m : moved) {
        clears.push_back({MappingUpdate::Op::Clear, from, m.page, m.mapping.frame.index, kPermNone, false});
        sets.push_back({MappingUpdate::Op::Set, to, m.page, m.mapping.frame.index, m.mapping.perms, false});
        elems.push_back(m.mapping.frame.element);
    }
    if (defect_ == MmuDefect::SetBeforeClear) std::swap(clears, sets);
    auto finish = [this, op, op_id, done = std::move(done)](bool acked) mutable {
        complete(op, op_id, done, acked ? std::error_code{} : make_error_code(Errc::element_unreachable));
    };
    push_updates(std::move(clears), elems,
                 [this, sets = std::move(sets), elems, finish = std::move(finish)](bool acked) mutable {
                     // the set phase runs even after a timed-out clear so healthy
                     // elements still converge to the MMU's view
                     push_updates(std::move(sets), elems, [acked, finish = std::move(finish)](bool acked2) mutable {
                         finish(acked && acked2);
                     });
                 });
}

void RackMmu::push_updates(std::vector<MappingUpdate> updates, std::vector<std::uint32_t> elements,
                           std::function<void(bool)> then)
{
    if (updates.empty()) {
        then(true);
        return;
    }
    struct Waiter {
        std::size_t remaining;
        bool fired = false;
        EventId timer = 0;
        std::function<void(bool)> then;
    };
    auto w = std::make_shared<Waiter>(Waiter{updates.size(), false, 0, std::move(then)});
    w->timer = sim_.schedule(actor_, Delivery::after(config_.ack_timeout), "mmu_ack_timeout", [w] {
        if (w->fired) return;
        w->fired = true;
        w->then(false);
    });
    for (std::size_t i = 0; i < updates.size(); ++i) {
        MemoryElement* me = elements_.at(elements[i]);
        const MappingUpdate u = updates[i];
        sim_.schedule(
            me->actor(), Delivery::after(config_.update_delay), "mmu_update",
            [this, me, u, w] {
                if (!me->apply_mapping_update(u)) return;
                sim_.schedule(actor_, Delivery::after(config_.update_delay), "me_ack", [this, w] {
                    if (w->fired || --w->remaining > 0) return;
                    w->fired = true;
                    sim_.cancel(w->timer);
                    w->then(true);
                });
            },
            {{"op", u.op == MappingUpdate::Op::Set ? "set" : "clear"}, {"pid", u.pid.value}, {"page", u.page.raw()}});
    }
}

void RackMmu::record(const std::string& kind, nlohmann::json fields)
{
    sim_.record(name_, kind, std::move(fields));
}

void RackMmu::invalidate(ProcessId owner, const std::vector<VirtualAddress>& pages)
{
    auto it = procs_.find(owner);
    if (it == procs_.end() || !on_invalidate) return;
    on_invalidate(owner, it->second.compute, pages);
}

}  // namespace ddc
