#pragma once

#include <limits>
#include <span>
#include <vector>

#include "fluxattn/kv_cache.hpp"
#include "fluxattn/matrix.hpp"

namespace fluxattn {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Segment-local attention result. `lse` is the log-sum-exp of the
/// unnormalized scores, `o` the softmax-weighted value sum over the segment
/// only. tokens == 0 is the merge identity (lse = -inf, o unused).
struct PartialOutput {
    std::vector<double> o;
    double lse = kNegInf;
    std::size_t tokens = 0;

    bool empty() const { return tokens == 0; }
};

/// softmax(q K^T / sqrt(D)) V with max-subtraction stabilization.
std::vector<double> full_attention(std::span<const float> q, const Matrix& k, const Matrix& v);

/// Partial attention over one segment, carrying the segment LSE.
PartialOutput segment_attention(std::span<const float> q, const Matrix& k, const Matrix& v);

/// FlashDecoding-style merge: lse_tot = logsumexp(lse_S),
/// o = sum_S exp(lse_S - lse_tot) * o_S. Empty partials are identities.
std::vector<double> merge_partials(std::span<const PartialOutput> parts);

/// Same merge rule but keeps the combined (o, lse, tokens) so results can be
/// merged incrementally; associative over disjoint token sets.
PartialOutput combine_partials(std::span<const PartialOutput> parts);

/// Attention over every segment of a cache (merged partials; equals single
/// pass full attention over the concatenated rows to fp tolerance).
std::vector<double> cache_attention(std::span<const float> q, const SegmentedKvCache& cache);

/// Attention over gpu-resident segments only (sink + local + new).
PartialOutput default_kv_attention(std::span<const float> q, const SegmentedKvCache& cache);

/// One GQA group: `G` query heads sharing a single KV cache (MHA is G=1).
struct GroupView {
    std::vector<int> head_ids;
    const SegmentedKvCache* cache = nullptr;

    std::size_t size() const { return head_ids.size(); }
};

struct HeadBinding {
    int head_id = 0;
    const SegmentedKvCache* cache = nullptr;
};

GroupView gqa_group_view(std::span<const HeadBinding> heads);

namespace detail {
// Hot-path kernel without finiteness checks; callers validate inputs once
// (cache construction validates tensors).
PartialOutput segment_attention_unchecked(std::span<const float> q, const Matrix& k,
                                          const Matrix& v);
PartialOutput gathered_attention_unchecked(std::span<const float> q, const Matrix& k,
                                           const Matrix& v,
                                           std::span<const std::size_t> token_indices);
void merge_into(PartialOutput& acc, const PartialOutput& part);
} // namespace detail

} // namespace fluxattn
