#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fluxattn/budget_oracle.hpp"
#include "fluxattn/label_io.hpp"
#include "fluxattn/predictor.hpp"
#include "fluxattn/scheduler.hpp"
#include "fluxattn/workload.hpp"

namespace fluxattn {

/// Oracle labeling over a workload: one scan row per (sample, layer, head,
/// step). `sample` distinguishes workloads pooled into one dataset.
struct LabelRunConfig {
    ErrorBudgetConfig budget;
    std::uint32_t sample = 0;
    int threads = 0; // 0 = hardware default (capped by FLUXATTN_THREADS)
};

ScanDataset build_scan_dataset(const Workload& w, const LabelRunConfig& cfg);

/// How head properties are produced at decode time.
enum class PropertySource { Oracle, Predictor };

/// Budget allocation criterion for the oracle source. Contribution is the
/// max-norm-normalized deviation rule; OutputOnly normalizes by the head's
/// own output norm; ScoreCoverage keeps a fraction of the attention mass.
enum class BudgetCriterion { Contribution, OutputOnly, ScoreCoverage };

struct DecodeConfig {
    double tau = 0.10;
    PropertySource source = PropertySource::Oracle;
    const PredictorModel* model = nullptr; // required for Predictor source
    BudgetCriterion criterion = BudgetCriterion::Contribution;
    double coverage = 0.95;      // ScoreCoverage criterion (at blk = 32)
    Policy policy = Policy::Priority;
    RunMode mode = RunMode::Simulated;
    WorkerProfile profile;
    // Fixed sparse baseline: overrides the selector with one (blk, bgt) for
    // every head of every group, never skipping streaming heads.
    std::optional<std::pair<int, double>> fixed;
    // FULL baseline: the whole cpu segment attends, no selection; volume is
    // the segment itself (2 * L_cpu token-units per group).
    bool full = false;
    bool measure_deviation = true;

    DecodeConfig() { profile = WorkerProfile::standard(64); }
};

struct StepReport {
    int step = 0;
    double makespan = 0.0;
    double accel_idle_ratio = 0.0;
    std::size_t scheduled_tasks = 0;
    std::size_t streaming_groups = 0;
    double mean_allocated_budget = 0.0; // over all heads, streaming = 0
    double total_volume = 0.0;
    std::vector<double> head_deviations; // vs full attention, per (layer*H+head)
};

struct PlanRecord {
    int step = 0;
    int layer = 0;
    GroupPlan plan;
    std::string to_json() const;
};

struct DecodeReport {
    std::vector<StepReport> steps;
    std::vector<PlanRecord> plans;

    double mean_makespan() const;
    double mean_allocated_budget() const;
    double deviation_quantile_at_tau(double tau) const; // fraction of head-steps <= tau
};

DecodeReport run_decode(const Workload& w, const DecodeConfig& cfg);

/// Per-head full attention outputs for one layer at one step's queries.
std::vector<std::vector<double>> step_full_outputs(const LayerWorkload& lw,
                                                   const Matrix& queries, int group_size);

} // namespace fluxattn
