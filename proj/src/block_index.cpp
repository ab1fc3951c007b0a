#include "fluxattn/block_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fluxattn {

BlockMetadata build_metadata(const Matrix& k_cpu, int block_size) {
    if (block_size <= 0)
        throw std::runtime_error("invalid-granularity: block size must be >= 1");

    BlockMetadata meta;
    meta.block_size = block_size;
    meta.source_len = k_cpu.rows();
    meta.dim = k_cpu.cols();
    meta.block_count = (k_cpu.rows() + std::size_t(block_size) - 1) / std::size_t(block_size);
    meta.mins.resize(meta.block_count * meta.dim);
    meta.maxs.resize(meta.block_count * meta.dim);

    for (std::size_t b = 0; b < meta.block_count; ++b) {
        const std::size_t begin = meta.block_begin(b);
        const std::size_t end = meta.block_end(b);
        float* mn = meta.mins.data() + b * meta.dim;
        float* mx = meta.maxs.data() + b * meta.dim;
        const auto first = k_cpu.row(begin);
        std::copy(first.begin(), first.end(), mn);
        std::copy(first.begin(), first.end(), mx);
        for (std::size_t i = begin + 1; i < end; ++i) {
            const auto row = k_cpu.row(i);
            for (std::size_t d = 0; d < meta.dim; ++d) {
                mn[d] = std::min(mn[d], row[d]);
                mx[d] = std::max(mx[d], row[d]);
            }
        }
    }
    return meta;
}

double block_score(std::span<const float> q, const BlockMetadata& meta, std::size_t block) {
    if (block >= meta.block_count)
        throw std::runtime_error("bad-block: block id out of range");
    const auto mn = meta.min_row(block);
    const auto mx = meta.max_row(block);
    double s = 0.0;
    for (std::size_t d = 0; d < meta.dim; ++d) {
        const double lo = double(q[d]) * double(mn[d]);
        const double hi = double(q[d]) * double(mx[d]);
        s += std::max(lo, hi);
    }
    return s;
}

SelectionResult topk_blocks(std::span<const float> q, const BlockMetadata& meta, std::size_t k) {
    SelectionResult sel;
    sel.block_size = meta.block_size;
    sel.source_len = meta.source_len;
    if (k > meta.block_count) {
        k = meta.block_count;
        sel.clamped = true;
    }
    if (k == 0 || meta.block_count == 0) return sel;

    std::vector<std::pair<double, std::size_t>> scored(meta.block_count);
    for (std::size_t b = 0; b < meta.block_count; ++b)
        scored[b] = {block_score(q, meta, b), b};
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });

    sel.blocks.reserve(k);
    for (std::size_t i = 0; i < k; ++i) sel.blocks.push_back(scored[i].second);
    for (std::size_t b : sel.blocks)
        for (std::size_t t = meta.block_begin(b); t < meta.block_end(b); ++t)
            sel.token_indices.push_back(t);
    std::sort(sel.token_indices.begin(), sel.token_indices.end());
    sel.budget_realized =
        meta.source_len == 0 ? 0.0 : double(sel.token_indices.size()) / double(meta.source_len);
    return sel;
}

PartialOutput sparse_attention(std::span<const float> q, const SegmentedKvCache& cache,
                               const SelectionResult& sel) {
    if (sel.source_len != cache.len(Segment::Cpu))
        throw std::runtime_error("stale-selection: cpu segment length changed");
    if (sel.token_indices.empty()) return PartialOutput{};
    if (!all_finite(q))
        throw std::runtime_error("non-finite: query");
    return detail::gathered_attention_unchecked(q, cache.keys(Segment::Cpu),
                                                cache.values(Segment::Cpu), sel.token_indices);
}

std::size_t blocks_for_budget(double budget, std::size_t l_cpu, int block_size) {
    if (budget <= 0.0 || l_cpu == 0) return 0;
    const std::size_t block_count =
        (l_cpu + std::size_t(block_size) - 1) / std::size_t(block_size);
    const double raw = budget * double(l_cpu) / double(block_size);
    const auto k = std::size_t(std::ceil(raw - 1e-12));
    return std::min(std::max<std::size_t>(k, 1), block_count);
}

} // namespace fluxattn
