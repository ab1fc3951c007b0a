#include "fluxattn/budget_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fluxattn {

namespace {

double reconstruction_deviation(const PartialOutput& reconstructed,
                                std::span<const double> o_full, double normalizer) {
    if (reconstructed.empty()) {
        // Nothing attended at all; the reconstruction is the zero vector.
        return l2_norm(o_full) / normalizer;
    }
    return l2_distance(reconstructed.o, o_full) / normalizer;
}

std::vector<std::size_t> score_order(std::span<const float> q, const BlockMetadata& meta) {
    std::vector<std::pair<double, std::size_t>> scored(meta.block_count);
    for (std::size_t b = 0; b < meta.block_count; ++b)
        scored[b] = {block_score(q, meta, b), b};
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<std::size_t> order(meta.block_count);
    for (std::size_t i = 0; i < meta.block_count; ++i) order[i] = scored[i].second;
    return order;
}

} // namespace

double max_output_norm(const std::vector<std::vector<double>>& head_outputs) {
    double m = 0.0;
    for (const auto& o : head_outputs) m = std::max(m, l2_norm(o));
    return m;
}

double output_deviation(std::size_t head, std::span<const float> q, const SegmentedKvCache& cache,
                        const SelectionResult& sel,
                        const std::vector<std::vector<double>>& head_outputs) {
    const double normalizer = max_output_norm(head_outputs);
    if (normalizer == 0.0)
        throw std::runtime_error("degenerate-normalizer: all head outputs are zero");

    PartialOutput acc = default_kv_attention(q, cache);
    detail::merge_into(acc, sparse_attention(q, cache, sel));
    return reconstruction_deviation(acc, head_outputs.at(head), normalizer);
}

MinBudgetResult min_budget(std::span<const float> q, const SegmentedKvCache& cache,
                           int block_size, std::span<const double> o_full, double normalizer,
                           const ErrorBudgetConfig& cfg) {
    if (normalizer == 0.0)
        throw std::runtime_error("degenerate-normalizer: all head outputs are zero");

    const std::size_t l_cpu = cache.len(Segment::Cpu);
    const PartialOutput defaults = default_kv_attention(q, cache);

    MinBudgetResult res;
    if (reconstruction_deviation(defaults, o_full, normalizer) <= cfg.tau || l_cpu == 0)
        return res; // zero blocks suffice

    const BlockMetadata meta = build_metadata(cache.keys(Segment::Cpu), block_size);
    const std::vector<std::size_t> order = score_order(q, meta);

    // Selection at k blocks extends selection at k-1; keep a running cpu
    // partial and merge one block at a time.
    PartialOutput cpu_acc;
    std::size_t tokens = 0;
    const auto& k_cpu = cache.keys(Segment::Cpu);
    const auto& v_cpu = cache.values(Segment::Cpu);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t b = order[i];
        std::vector<std::size_t> idx(meta.block_end(b) - meta.block_begin(b));
        std::iota(idx.begin(), idx.end(), meta.block_begin(b));
        detail::merge_into(cpu_acc, detail::gathered_attention_unchecked(q, k_cpu, v_cpu, idx));
        tokens += idx.size();

        PartialOutput merged = defaults;
        detail::merge_into(merged, cpu_acc);
        if (reconstruction_deviation(merged, o_full, normalizer) <= cfg.tau) {
            res.budget = double(tokens) / double(l_cpu);
            res.blocks = i + 1;
            return res;
        }
    }
    res.budget = 1.0;
    res.blocks = meta.block_count;
    res.saturated = true;
    return res;
}

bool label_streaming(std::span<const float> q, const SegmentedKvCache& cache,
                     std::span<const double> o_full, double normalizer,
                     const ErrorBudgetConfig& cfg) {
    if (cache.len(Segment::Cpu) == 0) return true;
    if (normalizer == 0.0)
        throw std::runtime_error("degenerate-normalizer: all head outputs are zero");
    const PartialOutput defaults = default_kv_attention(q, cache);
    return reconstruction_deviation(defaults, o_full, normalizer) <= cfg.tau;
}

CoverageBudget score_coverage_budget(std::span<const float> q, const SegmentedKvCache& cache,
                                     const BlockMetadata& meta, double coverage) {
    CoverageBudget out;
    const std::size_t l_cpu = cache.len(Segment::Cpu);
    if (l_cpu == 0 || coverage <= 0.0) return out;

    const auto& k_cpu = cache.keys(Segment::Cpu);
    const double inv_sqrt_d = 1.0 / std::sqrt(double(meta.dim));
    std::vector<double> w(l_cpu);
    double max_score = kNegInf;
    for (std::size_t i = 0; i < l_cpu; ++i) {
        w[i] = dot(q, k_cpu.row(i)) * inv_sqrt_d;
        max_score = std::max(max_score, w[i]);
    }
    double total = 0.0;
    for (auto& x : w) {
        x = std::exp(x - max_score);
        total += x;
    }

    const std::vector<std::size_t> order = score_order(q, meta);
    double acc = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b : order) {
        for (std::size_t t = meta.block_begin(b); t < meta.block_end(b); ++t) acc += w[t];
        tokens += meta.block_end(b) - meta.block_begin(b);
        ++out.blocks;
        if (acc >= coverage * total) break;
    }
    out.budget = double(tokens) / double(l_cpu);
    return out;
}

FitResult fit_curve(std::span<const std::pair<int, double>> points, double bgt0, bool streaming) {
    std::vector<int> distinct;
    for (const auto& p : points)
        if (std::find(distinct.begin(), distinct.end(), p.first) == distinct.end())
            distinct.push_back(p.first);
    if (distinct.size() < 2)
        throw std::runtime_error("underdetermined: need at least 2 distinct block sizes");

    double sx = 0.0, sy = 0.0;
    for (const auto& [blk, bgt] : points) {
        sx += std::log2(double(blk));
        sy += bgt;
    }
    const double n = double(points.size());
    const double mx = sx / n, my = sy / n;
    double sxx = 0.0, sxy = 0.0;
    for (const auto& [blk, bgt] : points) {
        const double dx = std::log2(double(blk)) - mx;
        sxx += dx * dx;
        sxy += dx * (bgt - my);
    }

    FitResult res;
    res.props.bgt0 = bgt0;
    res.props.k = sxy / sxx;
    res.props.streaming = streaming;
    res.free_intercept = my - res.props.k * mx;
    for (const auto& [blk, bgt] : points) {
        const double pred = res.free_intercept + res.props.k * std::log2(double(blk));
        res.max_abs_residual = std::max(res.max_abs_residual, std::abs(pred - bgt));
    }
    return res;
}

} // namespace fluxattn
