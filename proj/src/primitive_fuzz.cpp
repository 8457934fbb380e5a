#include "ddc/primitive_fuzz.hpp"

#include "ddc/world.hpp"

#include <algorithm>
#include <random>
#include <set>

namespace ddc {

bool PrimitiveRunReport::ok() const
{
    return std::all_of(violations.begin(), violations.end(), [](const auto& kv) { return kv.second == 0; });
}

nlohmann::json PrimitiveRunReport::to_json() const
{
    return {{"seed", seed},
            {"attempted", attempted},
            {"succeeded", succeeded},
            {"violations", violations},
            {"details", details}};
}

nlohmann::json PrimitiveFuzzSummary::to_json() const
{
    nlohmann::json f = nlohmann::json::object();
    for (const auto& [seed, what] : failures) f[std::to_string(seed)] = what;
    return {{"runs", runs}, {"violations", violations}, {"succeeded", succeeded}, {"failures", f}};
}

WorldConfig primitive_world_config(const PrimitiveScriptConfig& config, std::uint64_t seed)
{
    WorldConfig wc;
    wc.profile = config.profile;
    wc.seed = seed;
    wc.racks = 1;
    wc.rack.compute_elements = config.processes;
    wc.rack.memory_elements = 2;
    wc.rack.frames_per_element = (config.processes * config.pages + 1) / 2;
    wc.rack.memory_failure_mode = FailureMode::Explicit;
    wc.monitor.enabled = false;
    wc.mmu.update_delay = SimTime{};
    return wc;
}

namespace {

using Bytes = std::vector<std::byte>;

class Script {
public:
    Script(World& world, const PrimitiveScriptConfig& config, std::uint64_t seed)
        : w_(world), c_(config), rng_(seed * 0x9e3779b97f4a7c15ull + 3), mmu_(*world.rack(0).mmu)
    {
        r_.seed = seed;
        for (auto p : kPrimitiveProperties) r_.violations[std::string(p)] = 0;
    }

    PrimitiveRunReport run()
    {
        mmu_.inject_defect(c_.defect);
        setup();
        SimTime at = w_.sim().now();
        for (unsigned i = 0; i < c_.ops; ++i) {
            at = at + SimTime::from_ns(static_cast<SimTime::rep>(pick(0, 3000)));
            w_.sim().schedule(w_.tor().actor(), Delivery::after(at - w_.sim().now()), "script_op", [this] {
                check_tables();
                try {
                    step();
                } catch (const Error&) {
                    // crashed caller
                }
            });
        }
        w_.sim().run();
        check_tables();
        check_rest();
        check_contents();
        replay();
        return r_;
    }

private:
    std::uint64_t pick(std::uint64_t lo, std::uint64_t hi) { return lo + rng_() % (hi - lo + 1); }
    ProcessId any_pid() { return pids_[pick(0, pids_.size() - 1)]; }
    VirtualAddress any_page() { return all_pages_[pick(0, all_pages_.size() - 1)]; }

    void violate(std::string_view property, const std::string& detail)
    {
        ++r_.violations[std::string(property)];
        if (r_.details.size() < 8) r_.details.push_back(std::string(property) + ": " + detail);
    }

    void attempt(const std::string& op) { ++r_.attempted[op]; }
    void success(const std::string& op) { ++r_.succeeded[op]; }

    void setup()
    {
        for (unsigned i = 0; i < c_.processes; ++i) pids_.push_back(w_.spawn(NodeRef{0, i}));
        const unsigned pinned = std::min(4u, c_.pages);
        for (auto pid : pids_) {
            ComputeOs& os = w_.os_of(pid);
            auto a = os.sys_allocate(pid, c_.pages - pinned);
            auto b = os.sys_allocate(pid, pinned, AllocFlags{false});
            for (const auto* got : {&a, &b}) {
                if (!*got) continue;
                for (auto v : got->value()) {
                    all_pages_.push_back(v);
                    frame_of_[v] = mmu_.table(pid)->entries.at(v).frame;
                    Bytes content(kPageSize, std::byte{0});
                    expected_[v] = content;
                    write(pid, v, 0, signature(v));
                }
            }
        }
    }

    Bytes signature(VirtualAddress v)
    {
        Bytes b(16);
        for (std::size_t i = 0; i < b.size(); ++i) b[i] = static_cast<std::byte>((v.raw() >> (i % 8 * 8)) ^ rng_());
        return b;
    }

    bool write(ProcessId pid, VirtualAddress page, std::size_t offset, const Bytes& data)
    {
        auto r = w_.os_of(pid).access_now(pid, page + offset, AccessOp::Write, data, 0);
        if (!r.result.ok()) return false;
        auto& e = expected_.at(page);
        std::copy(data.begin(), data.end(), e.begin() + static_cast<std::ptrdiff_t>(offset));
        return true;
    }

    std::vector<VirtualAddress> owned_by(ProcessId pid)
    {
        std::vector<VirtualAddress> out;
        if (const auto* t = mmu_.table(pid))
            for (const auto& [v, m] : t->entries) out.push_back(v);
        return out;
    }

    std::vector<VirtualAddress> some_of(std::vector<VirtualAddress> pages)
    {
        std::shuffle(pages.begin(), pages.end(), rng_);
        pages.resize(std::min<std::size_t>(pages.size(), pick(1, 4)));
        return pages;
    }

    void step()
    {
        const auto roll = pick(0, 99);
        if (roll < 30) return grant();
        if (roll < 50) return steal();
        if (roll < 60) return group();
        if (roll < 68) return revoke();
        if (roll < 94) return poke();
        if (!c_.failures) return poke();
        if (roll < 97) return crash();
        return fail_element();
    }

    void grant()
    {
        const ProcessId src = any_pid();
        ProcessId dst = any_pid();
        if (dst == src) dst = pids_[(std::find(pids_.begin(), pids_.end(), src) - pids_.begin() + 1) % pids_.size()];
        auto pages = pick(0, 4) == 0 ? std::vector<VirtualAddress>{any_page()} : some_of(owned_by(src));
        if (pages.empty()) pages.push_back(any_page());
        attempt("grant");
        w_.os_of(src).sys_grant(src, pages, dst, [this](std::error_code ec) {
            if (!ec) success("grant");
        });
    }

    void steal()
    {
        const ProcessId caller = any_pid();
        const ProcessId src = any_pid();
        PageSelection sel;
        const auto how = pick(0, 9);
        if (how < 3) {
            sel = PageSelection::everything();
        } else if (how < 8) {
            auto pages = some_of(owned_by(src));
            if (pages.empty()) pages.push_back(any_page());
            sel = PageSelection::of(pages);
        } else {
            sel = PageSelection::of({any_page()});
        }
        attempt("steal");
        w_.os_of(caller).sys_steal(caller, src, sel, [this](std::error_code ec, const std::vector<VirtualAddress>&) {
            if (!ec) success("steal");
        });
    }

    void group()
    {
        std::set<ProcessId> members;
        const auto n = pick(2, 3);
        while (members.size() < n) members.insert(any_pid());
        const ProcessId self = *members.begin();
        attempt("group");
        try {
            w_.os_of(self).sys_register_steal_group(self, members);
            success("group");
        } catch (const Error&) {
        }
    }

    void revoke()
    {
        const ProcessId pid = any_pid();
        auto pages = some_of(owned_by(pid));
        attempt("revoke");
        if (pages.empty()) return;
        mmu_.revoke(pid, PageSelection::of(pages), [this](std::error_code ec) {
            if (!ec) success("revoke");
        });
    }

    /// A write from a random process: succeeds only for the owner.
    void poke()
    {
        const ProcessId pid = any_pid();
        VirtualAddress v = any_page();
        if (pick(0, 1) == 0) {
            auto mine = owned_by(pid);
            if (!mine.empty()) v = mine[pick(0, mine.size() - 1)];
        }
        Bytes data(8);
        for (auto& b : data) b = static_cast<std::byte>(rng_());
        attempt("write");
        if (write(pid, v, pick(0, kPageSize / 8 - 1) * 8, data)) success("write");
    }

    void crash()
    {
        const ProcessId pid = any_pid();
        attempt("crash");
        w_.os_of(pid).crash_process(pid);
        success("crash");
    }

    void fail_element()
    {
        attempt("fail-memory");
        if (failed_element_) return;
        failed_element_ = true;
        w_.memory(0, static_cast<std::uint32_t>(pick(0, w_.rack(0).memory.size() - 1))).fail_now();
        success("fail-memory");
    }

    // ---------------------------------------------------------------- checks

    void check_tables()
    {
        std::map<FrameId, std::pair<ProcessId, VirtualAddress>> holder;
        for (const auto* t : mmu_.tables()) {
            for (const auto& [v, m] : t->entries) {
                auto [it, fresh] = holder.emplace(m.frame, std::pair{t->owner, v});
                if (!fresh)
                    violate("single-owner", m.frame.str() + " held by " + it->second.first.str() + " and " + t->owner.str());
                auto orig = frame_of_.find(v);
                if (orig == frame_of_.end()) {
                    violate("address-stability", v.str() + " appeared from nowhere in " + t->owner.str());
                } else if (orig->second != m.frame) {
                    violate("address-stability", v.str() + " now maps " + m.frame.str() + ", allocated on " +
                                                     orig->second.str());
                }
            }
        }
    }

    /// Element page tables once the script has drained.
    void check_rest()
    {
        for (std::uint32_t e = 0; e < w_.rack(0).memory.size(); ++e) {
            std::map<std::uint32_t, PageKey> by_frame;
            for (const auto& [key, entry] : w_.memory(0, e).table()) {
                auto [it, fresh] = by_frame.emplace(entry.frame_index, key);
                if (!fresh)
                    violate("single-owner", w_.memory(0, e).name() + " frame " + std::to_string(entry.frame_index) +
                                                " mapped for " + it->second.pid.str() + " and " + key.pid.str());
            }
        }
    }

    void check_contents()
    {
        for (const auto& [v, want] : expected_) {
            const FrameId f = frame_of_.at(v);
            const MemoryElement& me = w_.memory(0, f.element);
            if (me.failed()) continue;
            auto got = me.frame(f.index);
            if (!std::equal(got.begin(), got.end(), want.begin(), want.end()))
                violate("content-preservation", v.str() + " on " + f.str() + " differs from its writes");
        }
    }

    /// Independent replay of the trace: ownership and groups from the Rack
    /// MMU's records, element mappings from the elements' records.
    void replay()
    {
        std::map<std::uint64_t, std::uint32_t> owner;
        std::vector<std::set<std::uint32_t>> groups;
        std::map<std::string, std::map<std::pair<std::uint32_t, std::uint64_t>, std::uint32_t>> mapped;
        std::map<std::string, std::map<std::uint32_t, std::set<std::pair<std::uint32_t, std::uint64_t>>>> frame_keys;
        auto shared = [&](std::uint32_t a, std::uint32_t b) {
            return std::any_of(groups.begin(), groups.end(), [&](const auto& g) { return g.contains(a) && g.contains(b); });
        };
        auto owns = [&](std::uint32_t pid, const nlohmann::json& pages, const std::string& what) {
            for (const auto& p : pages) {
                auto it = owner.find(p.get<std::uint64_t>());
                if (it == owner.end() || it->second != pid)
                    violate("capability-soundness", what + " by P" + std::to_string(pid) + " of a page it does not own");
            }
        };
        auto move = [&](const nlohmann::json& pages, std::uint32_t to) {
            for (const auto& p : pages) owner[p.get<std::uint64_t>()] = to;
        };
        for (const auto& e : w_.sim().trace().entries()) {
            const auto& f = e.fields;
            if (e.kind == "mmu_allocate") {
                move(f["pages"], f["pid"].get<std::uint32_t>());
            } else if (e.kind == "mmu_group") {
                groups.emplace_back();
                for (const auto& m : f["members"]) groups.back().insert(m.get<std::uint32_t>());
            } else if (e.kind == "mmu_grant") {
                owns(f["src"].get<std::uint32_t>(), f["pages"], "grant");
                move(f["pages"], f["dst"].get<std::uint32_t>());
            } else if (e.kind == "mmu_steal" && !f.contains("noop")) {
                const auto caller = f["caller"].get<std::uint32_t>();
                const auto src = f["src"].get<std::uint32_t>();
                if (caller != src && !shared(caller, src))
                    violate("capability-soundness", "steal by P" + std::to_string(caller) + " from P" +
                                                        std::to_string(src) + " without a shared group");
                owns(src, f["pages"], "steal source");
                move(f["pages"], caller);
            } else if (e.kind == "mmu_revoke") {
                owns(f["pid"].get<std::uint32_t>(), f["pages"], "revoke");
            } else if (e.kind == "me_set") {
                const std::pair key{f["pid"].get<std::uint32_t>(), f["page"].get<std::uint64_t>()};
                const auto frame = f["frame"].get<std::uint32_t>();
                auto& keys = frame_keys[e.actor][frame];
                for (const auto& other : keys)
                    if (other.first != key.first)
                        violate("revoke-before-reassign", e.actor + " frame " + std::to_string(frame) + " set for P" +
                                                              std::to_string(key.first) + " while P" +
                                                              std::to_string(other.first) + " still maps it");
                keys.insert(key);
                mapped[e.actor][key] = frame;
            } else if (e.kind == "me_clear" && f.contains("frame")) {
                const std::pair key{f["pid"].get<std::uint32_t>(), f["page"].get<std::uint64_t>()};
                frame_keys[e.actor][f["frame"].get<std::uint32_t>()].erase(key);
                mapped[e.actor].erase(key);
            } else if (e.kind == "me_access" && f.value("outcome", "") == "ok") {
                const auto pid = f["pid"].get<std::uint32_t>();
                const auto page = VirtualAddress::from_raw(f["vaddr"].get<std::uint64_t>()).page_base().raw();
                if (!mapped[e.actor].contains({pid, page}))
                    violate("capability-soundness", "P" + std::to_string(pid) + " accessed an unmapped page on " + e.actor);
            }
        }
    }

    World& w_;
    PrimitiveScriptConfig c_;
    std::mt19937_64 rng_;
    RackMmu& mmu_;
    PrimitiveRunReport r_;
    std::vector<ProcessId> pids_;
    std::vector<VirtualAddress> all_pages_;
    std::map<VirtualAddress, FrameId> frame_of_;
    std::map<VirtualAddress, Bytes> expected_;
    bool failed_element_ = false;
};

}  // namespace

PrimitiveRunReport run_primitive_script(World& world, const PrimitiveScriptConfig& config, std::uint64_t seed)
{
    return Script(world, config, seed).run();
}

PrimitiveRunReport run_primitive_script(const PrimitiveScriptConfig& config, std::uint64_t seed)
{
    World world(primitive_world_config(config, seed));
    return run_primitive_script(world, config, seed);
}

PrimitiveFuzzSummary primitive_fuzz(const PrimitiveScriptConfig& config, std::uint64_t first_seed, std::size_t runs)
{
    PrimitiveFuzzSummary sum;
    for (auto p : kPrimitiveProperties) sum.violations[std::string(p)] = 0;
    for (std::uint64_t seed = first_seed; seed < first_seed + runs; ++seed) {
        auto r = run_primitive_script(config, seed);
        ++sum.runs;
        for (const auto& [k, n] : r.violations) sum.violations[k] += n;
        for (const auto& [k, n] : r.succeeded) sum.succeeded[k] += n;
        if (!r.ok()) sum.failures[seed] = r.details.empty() ? "violation" : r.details.front();
    }
    return sum;
}

}  // namespace ddc
