#include "fluxattn/selector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fluxattn {

double volume(int block_size, std::size_t l_cpu, std::span<const double> budgets) {
    double budget_sum = 0.0;
    for (double b : budgets) budget_sum += std::clamp(b, 0.0, 1.0);
    return 2.0 * double(l_cpu) / double(block_size) + 2.0 * double(l_cpu) * budget_sum;
}

double budget_at(const HeadProperties& props, int block_size) {
    if (props.streaming) return 0.0;
    const double k = std::max(props.k, 0.0);
    return std::clamp(props.bgt0 + k * std::log2(double(block_size)), 0.0, 1.0);
}

GroupPlan plan_group(int group_id, std::span<const HeadProperties> props, std::size_t l_cpu) {
    if (props.empty())
        throw std::runtime_error("empty-group: plan_group needs at least one head");

    GroupPlan plan;
    plan.group_id = group_id;
    plan.streaming_group =
        std::all_of(props.begin(), props.end(), [](const auto& p) { return p.streaming; });
    if (plan.streaming_group) return plan;

    double best = 0.0;
    std::vector<double> budgets(props.size());
    for (std::size_t c = 0; c < kCandidateBlocks.size(); ++c) {
        const int blk = kCandidateBlocks[c];
        for (std::size_t h = 0; h < props.size(); ++h) budgets[h] = budget_at(props[h], blk);
        const double v = volume(blk, l_cpu, budgets);
        plan.candidate_volumes[c] = v;
        if (plan.block_size == 0 || v <= best) { // ties go to the larger blk
            best = v;
            plan.block_size = blk;
            plan.budgets = budgets;
        }
    }
    plan.volume = best;
    return plan;
}

double priority(const GroupPlan& plan) {
    if (plan.streaming_group)
        throw std::runtime_error("not-schedulable: streaming group has no priority");
    return plan.volume;
}

} // namespace fluxattn
