#pragma once

#include <atomic>
#include <cstddef>
#include <string>
#include <vector>

#include "fluxattn/block_index.hpp"
#include "fluxattn/kv_cache.hpp"
#include "fluxattn/selector.hpp"

namespace fluxattn {

enum class Policy { Priority, NoParallel, Uniform, LengthBased };
enum class RunMode { Simulated, Executed };

const char* policy_name(Policy p);
Policy parse_policy(const std::string& name);

/// Modeled element width; mirrors 16-bit KV storage on hardware.
inline constexpr double kBytesPerElement = 2.0;

struct CostEstimate {
    double token_units = 0.0; // V(blk*): token-rows of one tensor
    double bytes_moved = 0.0;
    double flops = 0.0;
};

/// One schedulable unit: top-k selection plus sparse attention for every
/// head of one retrieval group at the planned granularity and budgets.
struct SparseTask {
    int group_id = 0;
    GroupPlan plan;
    double priority = 0.0;
    CostEstimate cost;
    std::size_t l_cpu = 0;
    int head_count = 0;

    // Executed-mode context; cost-only tasks leave these empty.
    const SegmentedKvCache* cache = nullptr;
    const BlockMetadata* metadata = nullptr;
    std::vector<std::vector<float>> queries; // one per head, group order
};

/// Cost-model task from a plan (no execution context).
SparseTask make_task(const GroupPlan& plan, std::size_t l_cpu, std::size_t head_dim);

struct WorkerProfile {
    int host_workers = 20;
    double host_token_rate = 0.0; // token-units/s per host worker
    double accel_bytes_per_s = 32e9;
    double accel_flops_per_s = 10e12;
    double accel_launch_s = 30e-6;

    /// Testbed-shaped defaults: 57 GB/s of host bandwidth split across 20
    /// workers, a 32 GB/s transfer link, and the given head dimension.
    static WorkerProfile standard(std::size_t head_dim);

    double host_service(const CostEstimate& c) const { return c.token_units / host_token_rate; }
    double accel_service(const CostEstimate& c) const {
        return accel_launch_s + c.bytes_moved / accel_bytes_per_s + c.flops / accel_flops_per_s;
    }
    /// worker 0 is the accelerator, 1..host_workers are host workers
    double service(int worker, const CostEstimate& c) const {
        return worker == 0 ? accel_service(c) : host_service(c);
    }
    int worker_count() const { return host_workers + 1; }
};

struct TaskEvent {
    int task_index = 0;
    int group_id = 0;
    int worker = 0;
    double start = 0.0;
    double end = 0.0;
};

struct WorkerStat {
    bool accelerator = false;
    double busy = 0.0;
    double idle = 0.0;
    double modeled_busy = 0.0; // analytic service sum (executed mode, accelerator)
    int tasks = 0;
};

struct ScheduleReport {
    RunMode mode = RunMode::Simulated;
    Policy policy = Policy::Priority;
    double makespan = 0.0;
    std::vector<WorkerStat> workers;
    std::vector<TaskEvent> events; // ordered by task index
    std::vector<int> failed_groups;
    bool aborted = false;

    double accel_idle_ratio() const {
        if (makespan <= 0.0 || workers.empty()) return 0.0;
        return workers.front().idle / makespan;
    }
    std::string to_json() const;
    std::string trace_csv() const;
};

/// Batch queue ordered by descending priority, ties to the lower group id.
/// pop() is an atomic cursor advance shared by all workers.
class TaskQueue {
public:
    explicit TaskQueue(std::vector<SparseTask> tasks);

    const SparseTask* pop();
    std::size_t size() const { return tasks_.size(); }
    const std::vector<SparseTask>& tasks() const { return tasks_; }
    void reset() { next_.store(0, std::memory_order_relaxed); }

private:
    std::vector<SparseTask> tasks_;
    std::atomic<std::size_t> next_{0};
};

TaskQueue enqueue_batch(std::vector<SparseTask> tasks);

/// Executed-mode result slot: final per-head outputs (defaults merged with
/// the sparse cpu partial).
struct TaskResult {
    int group_id = 0;
    std::vector<std::vector<double>> head_outputs;
};

TaskResult execute_task(const SparseTask& task);

/// Priority-policy run. Simulated mode consumes only cost estimates and is
/// bit-deterministic; executed mode spawns one accelerator-model thread plus
/// host worker threads that pull from the shared queue, and fills `results`
/// (indexed like the queue) when non-null.
ScheduleReport run(TaskQueue& queue, const WorkerProfile& workers, RunMode mode,
                   std::vector<TaskResult>* results = nullptr);

/// Simulated baselines for ablations over the same task batch.
ScheduleReport run_baseline(TaskQueue& queue, const WorkerProfile& workers, Policy policy);

} // namespace fluxattn
