#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "fluxattn/budget_oracle.hpp"

namespace fluxattn {

inline constexpr std::array<int, 4> kCandidateBlocks{16, 32, 64, 128};

/// Per-group sparse configuration: the chosen granularity, per-head budgets
/// at that granularity, and the data-access volume used as priority.
struct GroupPlan {
    int group_id = 0;
    int block_size = 0;
    std::vector<double> budgets;  // per head, 0 for streaming heads
    double volume = 0.0;          // token-units at block_size
    bool streaming_group = false; // all heads streaming; nothing to schedule
    std::array<double, 4> candidate_volumes{}; // V at each candidate granularity
};

/// Data-access volume in token-units: metadata term (min/max vectors per
/// block) plus the budgeted KV term with the per-head budget sum as an
/// upper bound on the selected union.
double volume(int block_size, std::size_t l_cpu, std::span<const double> budgets);

/// Budget at a granularity from head properties: bgt0 + k * log2(blk),
/// with negative predicted k treated as 0 and the result clamped to [0,1].
double budget_at(const HeadProperties& props, int block_size);

/// Enumerate candidate granularities, pick the volume minimizer (ties to the
/// larger block size), and derive per-head budgets at the winner.
GroupPlan plan_group(int group_id, std::span<const HeadProperties> props, std::size_t l_cpu);

/// Scheduling priority of a plan (its volume); streaming plans have none.
double priority(const GroupPlan& plan);

} // namespace fluxattn
