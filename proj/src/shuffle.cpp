#include "ddc/shuffle.hpp"

#include "ddc/cc_heap.hpp"
#include "ddc/error.hpp"
#include "ddc/world.hpp"

#include <zlib.h>

#include <algorithm>
#include <memory>
#include <random>
#include <set>

namespace ddc {

std::string_view to_string(TransferMode m)
{
    return m == TransferMode::Grant ? "grant" : "transparent";
}

TransferMode transfer_mode_by_name(std::string_view name)
{
    if (name == "grant") return TransferMode::Grant;
    if (name == "transparent") return TransferMode::Transparent;
    throw Error(Errc::config_invalid, "unknown transfer mode: " + std::string(name));
}

std::string_view to_string(StragglerPolicy p)
{
    return p == StragglerPolicy::Steal ? "steal" : "restart";
}

StragglerPolicy straggler_policy_by_name(std::string_view name)
{
    if (name == "steal") return StragglerPolicy::Steal;
    if (name == "restart") return StragglerPolicy::Restart;
    throw Error(Errc::config_invalid, "unknown straggler policy: " + std::string(name));
}

std::uint64_t pages_for(std::uint64_t bytes)
{
    return (bytes + kPageSize - 1) / kPageSize;
}

std::uint32_t checksum(const std::vector<std::byte>& bytes)
{
    uLong c = crc32(0L, Z_NULL, 0);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(c);
}

// ---------------------------------------------------------------- graph

std::size_t TaskGraph::task_count() const
{
    std::size_t n = 0;
    for (const auto& s : stages) n += s.size();
    return n;
}

std::size_t TaskGraph::stage_of(std::uint32_t task) const
{
    for (std::size_t i = 0; i < stages.size(); ++i)
        if (std::find(stages[i].begin(), stages[i].end(), task) != stages[i].end()) return i;
    throw Error(Errc::invalid_graph, "task " + std::to_string(task) + " is in no stage");
}

void TaskGraph::validate() const
{
    const std::size_t n = task_count();
    std::set<std::uint32_t> seen;
    for (const auto& s : stages) {
        if (s.empty()) throw Error(Errc::invalid_graph, "empty stage");
        for (auto t : s) {
            if (t >= n) throw Error(Errc::invalid_graph, "task ids must be dense");
            if (!seen.insert(t).second) throw Error(Errc::invalid_graph, "task in two stages");
        }
    }
    std::set<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (const auto& e : edges) {
        if (e.producer >= n || e.consumer >= n) throw Error(Errc::invalid_graph, "edge names an unknown task");
        if (stage_of(e.producer) >= stage_of(e.consumer))
            throw Error(Errc::invalid_graph, "edge must point to a later stage");
        if (e.bytes == 0) throw Error(Errc::invalid_graph, "empty partition");
        if (!pairs.emplace(e.producer, e.consumer).second) throw Error(Errc::invalid_graph, "duplicate edge");
    }
}

TaskGraph TaskGraph::shuffle(unsigned mappers, unsigned reducers, std::uint64_t partition_bytes)
{
    TaskGraph g;
    g.stages.resize(2);
    for (std::uint32_t m = 0; m < mappers; ++m) g.stages[0].push_back(m);
    for (std::uint32_t r = 0; r < reducers; ++r) g.stages[1].push_back(mappers + r);
    for (std::uint32_t m = 0; m < mappers; ++m)
        for (std::uint32_t r = 0; r < reducers; ++r) g.edges.push_back({m, mappers + r, partition_bytes});
    return g;
}

nlohmann::json JobMetrics::to_json() const
{
    nlohmann::json edges_json = nlohmann::json::array();
    for (const auto& e : edges)
        edges_json.push_back({{"started_us", e.started.us()},
                              {"time_us", e.duration().us()},
                              {"rtts", e.rtts()},
                              {"checksum", e.consumer_checksum}});
    return {{"mode", to_string(mode)},
            {"completed", completed},
            {"cause", cause},
            {"total_time_us", total_time.us()},
            {"tor_bytes", tor_bytes},
            {"rtt_counts", {{"rack_mmu", rack_mmu_rtts}, {"tor", tor_rtts}, {"total", rtts()}}},
            {"reexecuted_units", reexecuted_units},
            {"edges", edges_json}};
}

WorldConfig shuffle_world_config(const TaskGraph& graph, const LatencyProfile& profile, std::uint64_t seed)
{
    WorldConfig wc;
    wc.profile = profile;
    wc.seed = seed;
    wc.racks = 1;
    wc.rack.compute_elements = static_cast<unsigned>(graph.task_count()) + 1;
    wc.rack.memory_elements = 2;
    std::uint64_t pages = 0;
    for (const auto& e : graph.edges) pages += 2 * pages_for(e.bytes);
    wc.rack.frames_per_element = static_cast<unsigned>(std::max<std::uint64_t>(64, pages));
    wc.monitor.enabled = false;
    return wc;
}

namespace {

constexpr const char* kJobActor = "job";

std::vector<std::byte> partition_bytes(std::uint64_t seed, std::size_t edge, std::uint64_t len)
{
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + edge + 1);
    std::vector<std::byte> out(len);
    for (auto& b : out) b = static_cast<std::byte>(rng() & 0xff);
    return out;
}

class Job {
public:
    Job(World& world, const TaskGraph& graph, const ShuffleConfig& config)
        : w_(world), g_(graph), c_(config)
    {
        m_.mode = c_.mode;
    }

    JobMetrics run()
    {
        g_.validate();
        if (w_.rack_count() < 1 || w_.rack(0).compute.size() < g_.task_count())
            throw Error(Errc::config_invalid, "the rack needs one compute element per task");
        setup();
        for (const auto& f : c_.faults) schedule_fault(f);
        if (!failed_) start_stage(0);
        w_.sim().run_until([this] { return done_ || failed_; }, c_.limit);
        if (!done_ && !failed_) fail("stalled: not every task finished");
        m_.tor_bytes = w_.tor().bytes_sent("shuffle_data");
        if (done_) verify();
        return m_;
    }

private:
    struct Task {
        ProcessId pid;
        std::size_t stage = 0;
        std::vector<std::size_t> in, out;
        bool computed = false;
    };

    Simulator& sim() { return w_.sim(); }
    void record(const std::string& kind, nlohmann::json fields) { sim().record(kJobActor, kind, std::move(fields)); }

    void fail(std::string cause)
    {
        if (failed_ || done_) return;
        failed_ = true;
        m_.cause = std::move(cause);
        record("job_failed", {{"cause", m_.cause}});
    }

    void setup()
    {
        tasks_.resize(g_.task_count());
        stage_pending_.assign(g_.stages.size(), 0);
        for (std::uint32_t t = 0; t < tasks_.size(); ++t) {
            tasks_[t].pid = w_.spawn(NodeRef{0, t});
            tasks_[t].stage = g_.stage_of(t);
            ComputeOs& os = w_.os_of(tasks_[t].pid);
            os.set_handler(tasks_[t].pid, SignalKind::MemoryFault, [this, t](const Signal& sig) {
                fail("task " + std::to_string(t) + ": " + std::string(to_string(sig.fault)) + " at " + sig.address.str() +
                     (sig.element.empty() ? "" : " on " + sig.element));
            });
            os.set_handler(tasks_[t].pid, SignalKind::PageAdded, [this, t](const Signal& sig) {
                received_[t].insert(sig.pages.begin(), sig.pages.end());
            });
        }
        m_.edges.resize(g_.edges.size());
        parts_.resize(g_.edges.size());
        landing_.resize(g_.edges.size());
        for (std::size_t e = 0; e < g_.edges.size(); ++e) {
            const auto& edge = g_.edges[e];
            tasks_[edge.producer].out.push_back(e);
            tasks_[edge.consumer].in.push_back(e);
            ++stage_pending_[tasks_[edge.consumer].stage];
            const std::size_t n = pages_for(edge.bytes);
            try {
                parts_[e].pages = w_.os_of(tasks_[edge.producer].pid).sys_allocate(tasks_[edge.producer].pid, n).value();
                parts_[e].byte_len = edge.bytes;
                if (c_.mode == TransferMode::Transparent)
                    landing_[e] = w_.os_of(tasks_[edge.consumer].pid).sys_allocate(tasks_[edge.consumer].pid, n).value();
            } catch (const std::exception& ex) {
                fail(std::string("allocation: ") + ex.what());
                return;
            }
        }
    }

    void schedule_fault(const ShuffleFault& f)
    {
        sim().schedule(w_.tor().actor(), Delivery::after(f.at - sim().now()), "shuffle_fault", [this, f] {
            if (f.kind == ShuffleFault::Kind::CrashTask) {
                w_.compute(NodeRef{0, f.target}).crash();
                record("shuffle_fault_injected", {{"task", f.target}});
            } else {
                w_.memory(0, f.target).fail_now();
                record("shuffle_fault_injected", {{"memory", w_.memory(0, f.target).name()}});
            }
        });
    }

    SimTime stage_time(std::size_t stage) const
    {
        if (c_.stage_time.empty()) return SimTime{};
        return c_.stage_time[std::min(stage, c_.stage_time.size() - 1)];
    }

    void start_stage(std::size_t stage)
    {
        record("stage_start", {{"stage", stage}});
        for (auto t : g_.stages[stage]) {
            w_.os_of(tasks_[t].pid).post(tasks_[t].pid, stage_time(stage), "task_compute", [this, t] { computed(t); });
        }
    }

    void computed(std::uint32_t t)
    {
        if (failed_) return;
        Task& task = tasks_[t];
        task.computed = true;
        ++computed_;
        record("task_computed", {{"task", t}});
        for (auto e : task.out) {
            if (!produce(e)) return;
            transfer(e);
        }
        maybe_done();
    }

    /// Materializes the partition in the producer's remote memory. Part of
    /// the task's compute time, so not charged to the transfer.
    bool produce(std::size_t e)
    {
        const auto& edge = g_.edges[e];
        const ProcessId pid = tasks_[edge.producer].pid;
        auto bytes = partition_bytes(c_.seed, e, edge.bytes);
        m_.edges[e].producer_checksum = checksum(bytes);
        parts_[e].checksum = m_.edges[e].producer_checksum;
        ComputeOs& os = w_.os_of(pid);
        for (std::size_t i = 0; i < parts_[e].pages.size(); ++i) {
            const std::size_t off = i * kPageSize;
            const std::size_t len = std::min<std::size_t>(kPageSize, bytes.size() - off);
            auto r = os.access_now(pid, parts_[e].pages[i], AccessOp::Write,
                                   std::span<const std::byte>(bytes.data() + off, len), 0);
            if (!r.result.ok()) {
                fail("task " + std::to_string(edge.producer) + ": cannot write its output (" +
                     std::string(to_string(*r.result.fault)) + ")");
                return false;
            }
        }
        return true;
    }

    void phase(std::size_t e, LinkClass link, const char* what)
    {
        if (link == LinkClass::RackMmu) {
            ++m_.edges[e].rack_mmu_rtts;
            ++m_.rack_mmu_rtts;
        } else {
            ++m_.edges[e].tor_rtts;
            ++m_.tor_rtts;
        }
        record("shuffle_rtt", {{"edge", e}, {"link", to_string(link)}, {"phase", what}});
    }

    void transfer(std::size_t e)
    {
        m_.edges[e].started = sim().now();
        record("transfer_start", {{"edge", e}, {"mode", to_string(c_.mode)}, {"pages", parts_[e].pages.size()}});
        if (c_.mode == TransferMode::Grant) return grant(e);
        load(e);
    }

    void grant(std::size_t e)
    {
        const auto& edge = g_.edges[e];
        const ProcessId src = tasks_[edge.producer].pid;
        w_.os_of(src).sys_grant(src, parts_[e].pages, tasks_[edge.consumer].pid, [this, e](std::error_code ec) {
            if (ec) return fail("edge " + std::to_string(e) + ": grant failed: " + ec.message());
            phase(e, LinkClass::RackMmu, "grant");
            edge_done(e);
        });
    }

    // (1) load from remote memory, (2) send over the ToR, (3) store.
    void load(std::size_t e)
    {
        const auto& edge = g_.edges[e];
        const ProcessId src = tasks_[edge.producer].pid;
        auto buf = std::make_shared<std::vector<std::byte>>(edge.bytes);
        auto left = std::make_shared<std::size_t>(parts_[e].pages.size());
        for (std::size_t i = 0; i < parts_[e].pages.size(); ++i) {
            const std::size_t off = i * kPageSize;
            const std::size_t len = std::min<std::size_t>(kPageSize, edge.bytes - off);
            w_.os_of(src).access(src, parts_[e].pages[i], AccessOp::Read, {}, len,
                                 [this, e, buf, left, off, len](const AccessResult& r) {
                                     if (failed_ || !r.ok()) return;
                                     std::copy_n(r.data.begin(), len, buf->begin() + static_cast<std::ptrdiff_t>(off));
                                     if (--*left == 0) {
                                         phase(e, LinkClass::RackMmu, "load");
                                         send(e, buf);
                                     }
                                 });
        }
    }

    void send(std::size_t e, std::shared_ptr<std::vector<std::byte>> buf)
    {
        const auto& edge = g_.edges[e];
        const ProcessId src = tasks_[edge.producer].pid;
        const ProcessId dst = tasks_[edge.consumer].pid;
        w_.os_of(src).send(src, dst, "shuffle_data", [this, e, buf] { store(e, buf); }, edge.bytes, {{"edge", e}});
    }

    void store(std::size_t e, std::shared_ptr<std::vector<std::byte>> buf)
    {
        const auto& edge = g_.edges[e];
        const ProcessId dst = tasks_[edge.consumer].pid;
        auto left = std::make_shared<std::size_t>(landing_[e].size());
        for (std::size_t i = 0; i < landing_[e].size(); ++i) {
            const std::size_t off = i * kPageSize;
            const std::size_t len = std::min<std::size_t>(kPageSize, edge.bytes - off);
            std::vector<std::byte> chunk(buf->begin() + static_cast<std::ptrdiff_t>(off),
                                         buf->begin() + static_cast<std::ptrdiff_t>(off + len));
            w_.os_of(dst).access(dst, landing_[e][i], AccessOp::Write, std::move(chunk), 0,
                                 [this, e, left](const AccessResult& r) {
                                     if (failed_ || !r.ok()) return;
                                     if (--*left == 0) {
                                         phase(e, LinkClass::RackMmu, "store");
                                         ack(e);
                                     }
                                 });
        }
    }

    void ack(std::size_t e)
    {
        const auto& edge = g_.edges[e];
        const ProcessId src = tasks_[edge.producer].pid;
        const ProcessId dst = tasks_[edge.consumer].pid;
        w_.os_of(dst).send(dst, src, "shuffle_ack", [this, e] {
            phase(e, LinkClass::IntraRackTor, "send");
            edge_done(e);
        }, 0, {{"edge", e}});
    }

    void edge_done(std::size_t e)
    {
        if (failed_) return;
        m_.edges[e].finished = sim().now();
        record("transfer_done", {{"edge", e}, {"time_ns", m_.edges[e].duration().ns()}});
        ++edges_done_;
        const std::size_t stage = tasks_[g_.edges[e].consumer].stage;
        if (--stage_pending_[stage] == 0) start_stage(stage);
        maybe_done();
    }

    void maybe_done()
    {
        if (failed_ || done_) return;
        if (computed_ == tasks_.size() && edges_done_ == g_.edges.size()) {
            done_ = true;
            m_.completed = true;
            m_.total_time = sim().now();
            record("job_done", {{"time_ns", m_.total_time.ns()}});
        }
    }

    /// Reads every partition back from its consumer's address space.
    void verify()
    {
        for (std::size_t e = 0; e < g_.edges.size(); ++e) {
            const auto& edge = g_.edges[e];
            const ProcessId dst = tasks_[edge.consumer].pid;
            const auto& pages = c_.mode == TransferMode::Grant ? parts_[e].pages : landing_[e];
            std::vector<std::byte> bytes;
            for (std::size_t i = 0; i < pages.size(); ++i) {
                const std::size_t len = std::min<std::size_t>(kPageSize, edge.bytes - i * kPageSize);
                auto r = w_.os_of(dst).access_now(dst, pages[i], AccessOp::Read, {}, len);
                if (!r.result.ok()) break;
                bytes.insert(bytes.end(), r.result.data.begin(), r.result.data.begin() + static_cast<std::ptrdiff_t>(len));
            }
            m_.edges[e].consumer_checksum = checksum(bytes);
            if (c_.mode == TransferMode::Grant) {
                for (auto p : pages)
                    if (!received_[edge.consumer].contains(p)) m_.edges[e].consumer_checksum = 0;
            }
        }
    }

    World& w_;
    const TaskGraph& g_;
    ShuffleConfig c_;
    JobMetrics m_;
    std::vector<Task> tasks_;
    std::vector<Partition> parts_;
    std::vector<std::vector<VirtualAddress>> landing_;
    std::map<std::uint32_t, std::set<VirtualAddress>> received_;
    std::vector<std::size_t> stage_pending_;
    std::size_t computed_ = 0;
    std::size_t edges_done_ = 0;
    bool done_ = false;
    bool failed_ = false;
};

}  // namespace

JobMetrics run_job(World& world, const TaskGraph& graph, const ShuffleConfig& config)
{
    return Job(world, graph, config).run();
}

JobMetrics run_job(const TaskGraph& graph, const ShuffleConfig& config, const LatencyProfile& profile)
{
    graph.validate();
    World world(shuffle_world_config(graph, profile, config.seed));
    return run_job(world, graph, config);
}

// ------------------------------------------------------------- stragglers

std::uint64_t unit_result(std::uint32_t task, std::uint32_t unit)
{
    std::uint64_t z = (std::uint64_t{task} << 32 | unit) + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

nlohmann::json StragglerMetrics::to_json() const
{
    nlohmann::json j{{"completed", completed},
                     {"cause", cause},
                     {"total_time_us", total_time.us()},
                     {"units_total", units_total},
                     {"executions", executions},
                     {"reexecuted_units", reexecuted_units},
                     {"progress_at_takeover", progress_at_takeover},
                     {"inflight_at_takeover", inflight_at_takeover},
                     {"detected_by", detected_by},
                     {"results_ok", results_ok}};
    j["takeover_at_us"] = takeover_at ? nlohmann::json(takeover_at->us()) : nlohmann::json(nullptr);
    return j;
}

WorldConfig straggler_world_config(const StragglerConfig& config, const LatencyProfile& profile)
{
    WorldConfig wc;
    wc.profile = profile;
    wc.seed = config.seed;
    wc.racks = 1;
    // tasks, the orchestrator, two spares
    wc.rack.compute_elements = config.tasks + 3;
    wc.rack.memory_elements = 2;
    wc.rack.frames_per_element = std::max(64u, config.tasks * 8);
    return wc;
}

namespace {

constexpr std::uint64_t kArenaPages = 4;

class StragglerJob {
public:
    StragglerJob(World& world, const StragglerConfig& config) : w_(world), c_(config) {}

    StragglerMetrics run()
    {
        if (c_.tasks == 0 || c_.units == 0) throw Error(Errc::config_invalid, "tasks and units must be positive");
        if (w_.rack(0).compute.size() < c_.tasks + 2)
            throw Error(Errc::config_invalid, "the rack needs a compute element per task plus the orchestrator");
        m_.units_total = std::size_t{c_.tasks} * c_.units;
        executed_.assign(c_.tasks, std::vector<std::size_t>(c_.units, 0));
        std::mt19937_64 rng(c_.seed);
        std::uniform_real_distribution<double> speed(1.0, 1.0 + c_.spread);

        orch_ = w_.spawn(NodeRef{0, c_.tasks});
        w_.os_of(orch_).set_handler(orch_, SignalKind::GroupFailureNotice, [this](const Signal& sig) {
            for (std::uint32_t t = 0; t < tasks_.size(); ++t)
                if (tasks_[t].current == sig.failure.pid) takeover(t, "failure-notice");
        });
        tasks_.resize(c_.tasks);
        for (std::uint32_t t = 0; t < c_.tasks; ++t) {
            double f = speed(rng);
            if (static_cast<int>(t) == c_.straggler && !c_.crash_at) f *= c_.slowdown;
            const ProcessId pid = w_.spawn(NodeRef{0, t});
            tasks_[t].started = w_.sim().now();
            tasks_[t].current = pid;
            auto& wk = add_worker(t, pid, f);
            if (!format(wk)) return finish();
            if (c_.failure_notices) w_.rack(0).monitor->register_group(pid, {orch_});
            begin_unit(wk);
        }
        w_.start_monitors();
        if (c_.crash_at && c_.straggler >= 0) {
            const NodeRef node{0, static_cast<std::uint32_t>(c_.straggler)};
            w_.sim().schedule(w_.tor().actor(), Delivery::after(*c_.crash_at), "straggler_crash", [this, node] {
                w_.compute(node).crash();
                w_.sim().record("job", "task_element_crashed", {{"element", node.str()}});
            });
        }
        w_.os_of(orch_).post(orch_, c_.unit_time, "orchestrator_check", [this] { check(); });
        w_.sim().run_until([this] { return done_ || failed_; }, c_.limit);
        if (!done_ && !failed_) fail("stalled");
        return finish();
    }

private:
    struct Worker {
        std::uint32_t task = 0;
        ProcessId pid;
        double speed = 1.0;
        std::unique_ptr<ProcessMemory> mem;
        std::optional<UndoLogHeap> heap;
        VirtualAddress progress;
        VirtualAddress results;
        std::uint32_t next = 0;
        bool inflight = false;
    };
    struct Task {
        ProcessId current;
        SimTime started;
        bool finished = false;
        bool taken_over = false;
        SimTime duration;
    };

    Worker& add_worker(std::uint32_t task, ProcessId pid, double speed)
    {
        auto wk = std::make_unique<Worker>();
        wk->task = task;
        wk->pid = pid;
        wk->speed = speed;
        wk->mem = std::make_unique<ProcessMemory>(w_, pid);
        workers_[pid] = std::move(wk);
        return *workers_[pid];
    }

    void fail(std::string cause)
    {
        if (failed_ || done_) return;
        failed_ = true;
        m_.cause = std::move(cause);
        w_.sim().record("job", "job_failed", {{"cause", m_.cause}});
    }

    bool format(Worker& wk)
    {
        try {
            auto pages = w_.os_of(wk.pid).sys_allocate(wk.pid, kArenaPages).value();
            wk.heap = UndoLogHeap::format(*wk.mem, pages.front(), kArenaPages, 2);
            wk.heap->transact([&] {
                wk.progress = wk.heap->alloc(8);
                wk.results = wk.heap->alloc(std::size_t{c_.units} * 8);
                wk.heap->set_root("progress", wk.progress);
                wk.heap->set_root("results", wk.results);
            });
        } catch (const std::exception& ex) {
            fail(std::string("task arena: ") + ex.what());
            return false;
        }
        return true;
    }

    void begin_unit(Worker& wk)
    {
        if (failed_) return;
        const ProcessId pid = wk.pid;
        if (wk.next == c_.units) {
            w_.os_of(pid).send(pid, orch_, "task_done", [this, pid] { task_done(pid); }, 0, {{"task", wk.task}});
            return;
        }
        ++m_.executions;
        ++executed_[wk.task][wk.next];
        wk.inflight = true;
        const SimTime work = SimTime::from_ns(static_cast<SimTime::rep>(c_.unit_time.ns() * wk.speed));
        w_.os_of(pid).post(pid, work + wk.mem->take_elapsed(), "work_unit", [this, pid] { commit(pid); });
    }

    void commit(ProcessId pid)
    {
        Worker& wk = *workers_.at(pid);
        try {
            const std::uint32_t u = wk.next;
            wk.heap->transact([&] {
                wk.heap->tx_write_u64(wk.results + u * 8, unit_result(wk.task, u));
                wk.heap->tx_write_u64(wk.progress, u + 1);
            });
        } catch (const MemoryFaultError&) {
            // pages are gone; the fault signal ends the process
            return;
        }
        wk.inflight = false;
        ++wk.next;
        begin_unit(wk);
    }

    void task_done(ProcessId pid)
    {
        const std::uint32_t t = workers_.at(pid)->task;
        if (tasks_[t].current != pid || tasks_[t].finished) return;
        tasks_[t].finished = true;
        tasks_[t].duration = w_.sim().now() - tasks_[t].started;
        w_.sim().record("job", "task_done", {{"task", t}, {"pid", pid.value}});
        if (std::all_of(tasks_.begin(), tasks_.end(), [](const Task& x) { return x.finished; })) {
            done_ = true;
            m_.completed = true;
            m_.total_time = w_.sim().now();
        }
    }

    void check()
    {
        if (done_ || failed_) return;
        std::vector<SimTime> durations;
        for (const auto& t : tasks_)
            if (t.finished) durations.push_back(t.duration);
        if (durations.size() * 2 >= tasks_.size()) {
            std::sort(durations.begin(), durations.end());
            const SimTime median = durations[(durations.size() - 1) / 2];
            const auto limit = SimTime::from_ns(static_cast<SimTime::rep>(median.ns() * c_.slack));
            for (std::uint32_t t = 0; t < tasks_.size(); ++t) {
                const Task& task = tasks_[t];
                if (!task.finished && !task.taken_over && w_.sim().now() - task.started > limit) takeover(t, "straggler");
            }
        }
        w_.os_of(orch_).post(orch_, c_.unit_time, "orchestrator_check", [this] { check(); });
    }

    void takeover(std::uint32_t t, const std::string& why)
    {
        Task& task = tasks_[t];
        if (task.finished || task.taken_over || failed_) return;
        task.taken_over = true;
        const Worker& old = *workers_.at(task.current);
        m_.takeover_at = w_.sim().now();
        m_.detected_by = why;
        m_.progress_at_takeover = old.next;
        m_.inflight_at_takeover = old.inflight ? 1 : 0;
        w_.sim().record("job", "takeover", {{"task", t}, {"why", why}, {"policy", to_string(c_.policy)},
                                            {"progress", old.next}, {"inflight", old.inflight}});

        auto spare = w_.spare_compute(0);
        if (!spare) return fail("no spare compute element");
        const ProcessId dead = task.current;
        const ProcessId fresh = w_.spawn(*spare);
        task.current = fresh;
        auto& wk = add_worker(t, fresh, 1.0);
        if (c_.policy == StragglerPolicy::Restart) {
            w_.os_of(dead).crash_process(dead);
            if (!format(wk)) return;
            return begin_unit(wk);
        }
        try {
            w_.os_of(orch_).sys_register_steal_group(orch_, {orch_, dead, fresh});
        } catch (const std::exception& ex) {
            return fail(std::string("steal group: ") + ex.what());
        }
        const VirtualAddress base = old.heap->base();
        w_.os_of(fresh).sys_steal(fresh, dead, PageSelection::everything(),
                                  [this, fresh, base](std::error_code ec, const std::vector<VirtualAddress>&) {
                                      if (ec) return fail("steal failed: " + ec.message());
                                      resume(fresh, base);
                                  });
    }

    void resume(ProcessId pid, VirtualAddress base)
    {
        Worker& wk = *workers_.at(pid);
        try {
            wk.heap = UndoLogHeap::open(*wk.mem, base);
            wk.progress = wk.heap->get_root("progress");
            wk.results = wk.heap->get_root("results");
            wk.next = static_cast<std::uint32_t>(wk.heap->read_u64(wk.progress));
        } catch (const std::exception& ex) {
            return fail(std::string("resume: ") + ex.what());
        }
        w_.sim().record("job", "task_resumed", {{"task", wk.task}, {"pid", pid.value}, {"progress", wk.next}});
        begin_unit(wk);
    }

    StragglerMetrics finish()
    {
        for (const auto& per_task : executed_)
            for (auto n : per_task)
                if (n > 1) m_.reexecuted_units += n - 1;
        m_.results_ok = m_.completed;
        if (m_.completed) {
            for (std::uint32_t t = 0; t < tasks_.size(); ++t) {
                const Worker& wk = *workers_.at(tasks_[t].current);
                ProcessMemory check(w_, wk.pid);
                try {
                    auto heap = UndoLogHeap::open(check, wk.heap->base());
                    const auto results = heap.get_root("results");
                    if (heap.read_u64(heap.get_root("progress")) != c_.units) m_.results_ok = false;
                    for (std::uint32_t u = 0; u < c_.units; ++u)
                        if (heap.read_u64(results + u * 8) != unit_result(t, u)) m_.results_ok = false;
                } catch (const std::exception&) {
                    m_.results_ok = false;
                }
            }
        }
        return m_;
    }

    World& w_;
    StragglerConfig c_;
    StragglerMetrics m_;
    ProcessId orch_;
    std::vector<Task> tasks_;
    std::map<ProcessId, std::unique_ptr<Worker>> workers_;
    std::vector<std::vector<std::size_t>> executed_;
    bool done_ = false;
    bool failed_ = false;
};

}  // namespace

StragglerMetrics run_straggler_job(World& world, const StragglerConfig& config)
{
    return StragglerJob(world, config).run();
}

StragglerMetrics run_straggler_job(const StragglerConfig& config, const LatencyProfile& profile)
{
    World world(straggler_world_config(config, profile));
    return run_straggler_job(world, config);
}

}  // namespace ddc
