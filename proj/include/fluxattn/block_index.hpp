#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fluxattn/attention.hpp"
#include "fluxattn/kv_cache.hpp"
#include "fluxattn/matrix.hpp"

namespace fluxattn {

/// Per-block metadata for logical blocking of a key matrix: element-wise
/// min/max of the keys in each block. Blocks are logical; rebuilding at a
/// different granularity is pure recomputation over the same storage.
struct BlockMetadata {
    int block_size = 0;
    std::size_t source_len = 0;
    std::size_t dim = 0;
    std::size_t block_count = 0;
    std::vector<float> mins; // [block_count x dim]
    std::vector<float> maxs; // [block_count x dim]

    std::span<const float> min_row(std::size_t b) const { return {mins.data() + b * dim, dim}; }
    std::span<const float> max_row(std::size_t b) const { return {maxs.data() + b * dim, dim}; }
    std::size_t block_begin(std::size_t b) const { return b * std::size_t(block_size); }
    std::size_t block_end(std::size_t b) const {
        return std::min(source_len, (b + 1) * std::size_t(block_size));
    }
};

struct SelectionResult {
    int block_size = 0;
    std::size_t source_len = 0;
    std::vector<std::size_t> blocks;        // selection order (score desc, id asc)
    std::vector<std::size_t> token_indices; // ascending
    double budget_realized = 0.0;
    bool clamped = false; // k exceeded block_count and was clamped
};

BlockMetadata build_metadata(const Matrix& k_cpu, int block_size);

/// Quest score: sum_d max(q_d * min_d, q_d * max_d). Upper-bounds <q, k_i>
/// for every token i in the block. Unscaled by 1/sqrt(D); ranking only.
double block_score(std::span<const float> q, const BlockMetadata& meta, std::size_t block);

/// Highest-scoring k blocks, ties broken toward the lower block id.
SelectionResult topk_blocks(std::span<const float> q, const BlockMetadata& meta, std::size_t k);

/// Partial attention over the selected cpu-segment tokens only.
PartialOutput sparse_attention(std::span<const float> q, const SegmentedKvCache& cache,
                               const SelectionResult& sel);

/// Blocks needed to realize at least the requested token-budget fraction:
/// ceil(bgt * L_cpu / blk), clamped to the block count.
std::size_t blocks_for_budget(double budget, std::size_t l_cpu, int block_size);

} // namespace fluxattn
