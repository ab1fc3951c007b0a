#include "fluxattn/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fluxattn/attention.hpp"

namespace fluxattn {

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::Priority: return "priority";
        case Policy::NoParallel: return "no_parallel";
        case Policy::Uniform: return "uniform";
        case Policy::LengthBased: return "length";
    }
    return "?";
}

Policy parse_policy(const std::string& name) {
    if (name == "priority") return Policy::Priority;
    if (name == "no_parallel") return Policy::NoParallel;
    if (name == "uniform") return Policy::Uniform;
    if (name == "length") return Policy::LengthBased;
    throw std::runtime_error("bad-policy: " + name);
}

WorkerProfile WorkerProfile::standard(std::size_t head_dim) {
    WorkerProfile p;
    const double host_bandwidth = 57e9; // aggregate across host workers
    p.host_token_rate =
        host_bandwidth / double(p.host_workers) / (double(head_dim) * kBytesPerElement);
    return p;
}

SparseTask make_task(const GroupPlan& plan, std::size_t l_cpu, std::size_t head_dim) {
    if (plan.streaming_group)
        throw std::runtime_error("not-schedulable: streaming group");
    SparseTask t;
    t.group_id = plan.group_id;
    t.plan = plan;
    t.priority = priority(plan);
    t.l_cpu = l_cpu;
    t.head_count = int(plan.budgets.size());
    t.cost.token_units = plan.volume;
    t.cost.bytes_moved = plan.volume * double(head_dim) * kBytesPerElement;
    // one multiply-add per transferred element
    t.cost.flops = plan.volume * double(head_dim) * 2.0;
    return t;
}

TaskQueue::TaskQueue(std::vector<SparseTask> tasks) : tasks_(std::move(tasks)) {}

const SparseTask* TaskQueue::pop() {
    const std::size_t i = next_.fetch_add(1, std::memory_order_relaxed);
    return i < tasks_.size() ? &tasks_[i] : nullptr;
}

TaskQueue enqueue_batch(std::vector<SparseTask> tasks) {
    std::vector<int> ids;
    for (const auto& t : tasks) ids.push_back(t.group_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw std::runtime_error("duplicate-task: group enqueued twice in one batch");
    std::sort(tasks.begin(), tasks.end(), [](const SparseTask& a, const SparseTask& b) {
        if (a.priority != b.priority) return a.priority > b.priority;
        return a.group_id < b.group_id;
    });
    return TaskQueue(std::move(tasks));
}

TaskResult execute_task(const SparseTask& task) {
    if (task.cache == nullptr || task.metadata == nullptr)
        throw std::runtime_error("no-context: task has no executable payload");
    TaskResult res;
    res.group_id = task.group_id;
    const std::size_t l_cpu = task.cache->len(Segment::Cpu);
    for (std::size_t h = 0; h < task.queries.size(); ++h) {
        const auto& q = task.queries[h];
        PartialOutput acc = default_kv_attention(q, *task.cache);
        const std::size_t k = blocks_for_budget(task.plan.budgets[h], l_cpu,
                                                task.plan.block_size);
        if (k > 0) {
            const SelectionResult sel = topk_blocks(q, *task.metadata, k);
            detail::merge_into(acc, sparse_attention(q, *task.cache, sel));
        }
        res.head_outputs.push_back(std::move(acc.o));
    }
    return res;
}

namespace {

struct SimAssignment {
    int worker;
    std::size_t task_index; // index into queue order
};

ScheduleReport finish_report(const TaskQueue& queue, const WorkerProfile& profile,
                             Policy policy, std::vector<TaskEvent> events) {
    ScheduleReport rep;
    rep.mode = RunMode::Simulated;
    rep.policy = policy;
    rep.workers.resize(profile.worker_count());
    rep.workers[0].accelerator = true;
    for (const auto& e : events) {
        rep.makespan = std::max(rep.makespan, e.end);
        auto& w = rep.workers[e.worker];
        w.busy += e.end - e.start;
        w.tasks += 1;
    }
    for (auto& w : rep.workers) w.idle = rep.makespan - w.busy;
    std::sort(events.begin(), events.end(),
              [](const TaskEvent& a, const TaskEvent& b) { return a.task_index < b.task_index; });
    rep.events = std::move(events);
    (void)queue;
    return rep;
}

// Greedy pull: every worker takes the next queued task the moment it goes
// idle; equivalently, tasks are handed out in queue order to the earliest
// free worker (ties to the lower worker id).
ScheduleReport simulate_priority(TaskQueue& queue, const WorkerProfile& profile) {
    using Slot = std::pair<double, int>; // (free time, worker id)
    std::priority_queue<Slot, std::vector<Slot>, std::greater<>> free_at;
    for (int w = 0; w < profile.worker_count(); ++w) free_at.emplace(0.0, w);

    std::vector<TaskEvent> events;
    const auto& tasks = queue.tasks();
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        auto [t, w] = free_at.top();
        free_at.pop();
        const double service = profile.service(w, tasks[i].cost);
        events.push_back({int(i), tasks[i].group_id, w, t, t + service});
        free_at.emplace(t + service, w);
    }
    return finish_report(queue, profile, Policy::Priority, std::move(events));
}

ScheduleReport simulate_static(TaskQueue& queue, const WorkerProfile& profile, Policy policy) {
    const auto& tasks = queue.tasks();
    const int n_workers = profile.worker_count();
    std::vector<std::vector<std::size_t>> assigned(n_workers);

    if (policy == Policy::NoParallel) {
        for (std::size_t i = 0; i < tasks.size(); ++i) assigned[std::min(1, n_workers - 1)].push_back(i);
    } else if (policy == Policy::Uniform) {
        // balance head counts, blind to cost
        std::vector<long> heads(n_workers, 0);
        std::vector<std::size_t> order(tasks.size());
        for (std::size_t i = 0; i < tasks.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return tasks[a].group_id < tasks[b].group_id;
        });
        for (std::size_t i : order) {
            const int w = int(std::min_element(heads.begin(), heads.end()) - heads.begin());
            assigned[w].push_back(i);
            heads[w] += tasks[i].head_count;
        }
    } else { // LengthBased: static LPT on an L_cpu-derived proxy cost
        std::vector<std::size_t> order(tasks.size());
        for (std::size_t i = 0; i < tasks.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (tasks[a].l_cpu != tasks[b].l_cpu) return tasks[a].l_cpu > tasks[b].l_cpu;
            return tasks[a].group_id < tasks[b].group_id;
        });
        std::vector<double> load(n_workers, 0.0);
        for (std::size_t i : order) {
            CostEstimate proxy;
            proxy.token_units = double(tasks[i].l_cpu);
            proxy.bytes_moved = proxy.token_units * tasks[i].cost.bytes_moved /
                                std::max(tasks[i].cost.token_units, 1.0);
            proxy.flops = proxy.token_units * tasks[i].cost.flops /
                          std::max(tasks[i].cost.token_units, 1.0);
            int best = 0;
            double best_t = 0.0;
            for (int w = 0; w < n_workers; ++w) {
                const double t = load[w] + profile.service(w, proxy);
                if (w == 0 || t < best_t) {
                    best = w;
                    best_t = t;
                }
            }
            assigned[best].push_back(i);
            load[best] += profile.service(best, proxy);
        }
    }

    std::vector<TaskEvent> events;
    for (int w = 0; w < n_workers; ++w) {
        double t = 0.0;
        for (std::size_t i : assigned[w]) {
            const double service = profile.service(w, tasks[i].cost);
            events.push_back({int(i), tasks[i].group_id, w, t, t + service});
            t += service;
        }
    }
    return finish_report(queue, profile, policy, std::move(events));
}

int executed_host_workers(const WorkerProfile& profile) {
    int n = profile.host_workers;
    // one core stays with the dispatcher
    const int hw = int(std::thread::hardware_concurrency());
    if (hw > 1) n = std::min(n, hw - 1);
    if (const char* cap = std::getenv("FLUXATTN_THREADS")) {
        const int c = std::atoi(cap);
        if (c > 0) n = std::min(n, c);
    }
    return std::max(n, 1);
}

ScheduleReport run_executed(TaskQueue& queue, const WorkerProfile& profile,
                            std::vector<TaskResult>* results) {
    const int n_host = executed_host_workers(profile);
    const int n_workers = n_host + 1;

    if (results) results->assign(queue.size(), TaskResult{});
    std::vector<TaskEvent> events(queue.size());
    std::vector<WorkerStat> stats(n_workers);
    stats[0].accelerator = true;
    std::atomic<bool> abort{false};
    std::vector<int> failed;
    std::mutex failed_mu;

    const auto t0 = std::chrono::steady_clock::now();
    auto now_s = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    auto worker_loop = [&](int worker_id) {
        auto& stat = stats[worker_id];
        while (!abort.load(std::memory_order_relaxed)) {
            const SparseTask* task = queue.pop();
            if (!task) break;
            const std::size_t index = std::size_t(task - queue.tasks().data());
            const double start = now_s();
            try {
                TaskResult r = execute_task(*task);
                if (results) (*results)[index] = std::move(r);
            } catch (const std::exception&) {
                std::lock_guard<std::mutex> lk(failed_mu);
                failed.push_back(task->group_id);
                abort.store(true, std::memory_order_relaxed);
                break;
            }
            const double end = now_s();
            events[index] = {int(index), task->group_id, worker_id, start, end};
            stat.busy += end - start;
            stat.tasks += 1;
            if (worker_id == 0) stat.modeled_busy += profile.accel_service(task->cost);
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(std::size_t(n_workers));
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker_loop, w);
    for (auto& th : threads) th.join();

    ScheduleReport rep;
    rep.mode = RunMode::Executed;
    rep.policy = Policy::Priority;
    rep.workers = std::move(stats);
    rep.failed_groups = std::move(failed);
    rep.aborted = !rep.failed_groups.empty();
    for (const auto& e : events)
        if (e.end > 0.0) {
            rep.makespan = std::max(rep.makespan, e.end);
            rep.events.push_back(e);
        }
    for (auto& w : rep.workers) w.idle = std::max(0.0, rep.makespan - w.busy);
    return rep;
}

} // namespace

ScheduleReport run(TaskQueue& queue, const WorkerProfile& workers, RunMode mode,
                   std::vector<TaskResult>* results) {
    if (mode == RunMode::Simulated) return simulate_priority(queue, workers);
    return run_executed(queue, workers, results);
}

ScheduleReport run_baseline(TaskQueue& queue, const WorkerProfile& workers, Policy policy) {
    if (policy == Policy::Priority) return simulate_priority(queue, workers);
    return simulate_static(queue, workers, policy);
}

std::string ScheduleReport::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"mode\":\"" << (mode == RunMode::Simulated ? "sim" : "exec") << "\"";
    os << ",\"policy\":\"" << policy_name(policy) << "\"";
    os << ",\"makespan\":" << makespan;
    os << ",\"aborted\":" << (aborted ? "true" : "false");
    os << ",\"workers\":[";
    for (std::size_t i = 0; i < workers.size(); ++i) {
        const auto& w = workers[i];
        os << (i ? "," : "") << "{\"accelerator\":" << (w.accelerator ? "true" : "false")
           << ",\"busy\":" << w.busy << ",\"idle\":" << w.idle << ",\"tasks\":" << w.tasks
           << ",\"modeled_busy\":" << w.modeled_busy << "}";
    }
    os << "],\"tasks\":[";
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        os << (i ? "," : "") << "{\"task\":" << e.task_index << ",\"group\":" << e.group_id
           << ",\"worker\":" << e.worker << ",\"start\":" << e.start << ",\"end\":" << e.end
           << "}";
    }
    os << "],\"failed_groups\":[";
    for (std::size_t i = 0; i < failed_groups.size(); ++i)
        os << (i ? "," : "") << failed_groups[i];
    os << "]}";
    return os.str();
}

std::string ScheduleReport::trace_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "task,group,worker,start,end\n";
    for (const auto& e : events)
        os << e.task_index << "," << e.group_id << "," << e.worker << "," << e.start << ","
           << e.end << "\n";
    return os.str();
}

} // namespace fluxattn
