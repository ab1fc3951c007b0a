#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fluxattn/attention.hpp"
#include "fluxattn/block_index.hpp"
#include "fluxattn/kv_cache.hpp"

namespace fluxattn {

/// Labeled head behavior: minimum budget at block size 1, budget growth per
/// log2(blk) step, and the streaming flag.
struct HeadProperties {
    double bgt0 = 0.0;
    double k = 0.0;
    bool streaming = false;
};

struct ErrorBudgetConfig {
    double tau = 0.10;
    std::array<int, 5> label_blocks{1, 16, 32, 64, 128};
    std::array<int, 4> selector_blocks{16, 32, 64, 128};
    int sink_tokens = 64;
    int local_tokens = 256;
};

struct MinBudgetResult {
    double budget = 0.0;      // realized token fraction of the cpu segment
    std::size_t blocks = 0;   // selected block count at this granularity
    bool saturated = false;   // even full selection violated tau
};

/// Relative output deviation of a sparse reconstruction (defaults merged
/// with the selected cpu tokens) against the head's full attention output,
/// normalized by the largest head-output norm at this step.
double output_deviation(std::size_t head, std::span<const float> q, const SegmentedKvCache& cache,
                        const SelectionResult& sel,
                        const std::vector<std::vector<double>>& head_outputs);

/// Smallest budget on the block-multiple grid whose deviation is <= tau.
/// Scans upward from zero blocks, so the grid predecessor always violates.
MinBudgetResult min_budget(std::span<const float> q, const SegmentedKvCache& cache,
                           int block_size, std::span<const double> o_full, double normalizer,
                           const ErrorBudgetConfig& cfg);

/// True iff the default KV (sink + local + new) alone reconstructs the head
/// output within tau.
bool label_streaming(std::span<const float> q, const SegmentedKvCache& cache,
                     std::span<const double> o_full, double normalizer,
                     const ErrorBudgetConfig& cfg);

struct CoverageBudget {
    double budget = 0.0;
    std::size_t blocks = 0;
};

/// Score-coverage baseline: blocks taken in block-score order until their
/// true attention mass reaches `coverage` of the cpu segment total.
CoverageBudget score_coverage_budget(std::span<const float> q, const SegmentedKvCache& cache,
                                     const BlockMetadata& meta, double coverage);

struct FitResult {
    HeadProperties props;
    double free_intercept = 0.0;  // discarded Eq-1 intercept, kept for diagnostics
    double max_abs_residual = 0.0;
};

/// Least-squares slope of budget on log2(blk); the intercept is anchored to
/// the separately measured blk=1 budget and the fitted one only reported.
FitResult fit_curve(std::span<const std::pair<int, double>> points, double bgt0, bool streaming);

/// max_h ||o_h||_2 over the full per-head outputs of one step.
double max_output_norm(const std::vector<std::vector<double>>& head_outputs);

} // namespace fluxattn
