#include "fluxattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fluxattn {

namespace {

void check_inputs(std::span<const float> q, const Matrix& k, const Matrix& v) {
    if (k.rows() == 0 || v.rows() == 0)
        throw std::runtime_error("empty-context: attention over zero keys");
    if (k.rows() != v.rows())
        throw std::runtime_error("bad-shape: K/V row count mismatch");
    if (q.size() != k.cols())
        throw std::runtime_error("bad-shape: query width != key width");
    if (!all_finite(q) || !all_finite(k) || !all_finite(v))
        throw std::runtime_error("non-finite: attention input");
}

} // namespace

namespace detail {

PartialOutput segment_attention_unchecked(std::span<const float> q, const Matrix& k,
                                          const Matrix& v) {
    const std::size_t n = k.rows();
    const std::size_t d = q.size();
    PartialOutput out;
    if (n == 0) return out;

    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    std::vector<double> scores(n);
    double max_score = kNegInf;
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = dot(q, k.row(i)) * inv_sqrt_d;
        max_score = std::max(max_score, scores[i]);
    }

    std::vector<double> o(d, 0.0);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(scores[i] - max_score);
        denom += w;
        const auto row = v.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] += w * double(row[j]);
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= denom;

    out.o = std::move(o);
    out.lse = max_score + std::log(denom);
    out.tokens = n;
    return out;
}

PartialOutput gathered_attention_unchecked(std::span<const float> q, const Matrix& k,
                                           const Matrix& v,
                                           std::span<const std::size_t> token_indices) {
    const std::size_t n = token_indices.size();
    const std::size_t d = q.size();
    PartialOutput out;
    if (n == 0) return out;

    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    std::vector<double> scores(n);
    double max_score = kNegInf;
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = dot(q, k.row(token_indices[i])) * inv_sqrt_d;
        max_score = std::max(max_score, scores[i]);
    }

    std::vector<double> o(d, 0.0);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(scores[i] - max_score);
        denom += w;
        const auto row = v.row(token_indices[i]);
        for (std::size_t j = 0; j < d; ++j) o[j] += w * double(row[j]);
    }
    for (std::size_t j = 0; j < d; ++j) o[j] /= denom;

    out.o = std::move(o);
    out.lse = max_score + std::log(denom);
    out.tokens = n;
    return out;
}

void merge_into(PartialOutput& acc, const PartialOutput& part) {
    if (part.empty()) return;
    if (acc.empty()) {
        acc = part;
        return;
    }
    const double lse_tot = acc.lse > part.lse
                               ? acc.lse + std::log1p(std::exp(part.lse - acc.lse))
                               : part.lse + std::log1p(std::exp(acc.lse - part.lse));
    const double wa = std::exp(acc.lse - lse_tot);
    const double wb = std::exp(part.lse - lse_tot);
    for (std::size_t j = 0; j < acc.o.size(); ++j)
        acc.o[j] = wa * acc.o[j] + wb * part.o[j];
    acc.lse = lse_tot;
    acc.tokens += part.tokens;
}

} // namespace detail

std::vector<double> full_attention(std::span<const float> q, const Matrix& k, const Matrix& v) {
    check_inputs(q, k, v);
    return detail::segment_attention_unchecked(q, k, v).o;
}

PartialOutput segment_attention(std::span<const float> q, const Matrix& k, const Matrix& v) {
    check_inputs(q, k, v);
    return detail::segment_attention_unchecked(q, k, v);
}

PartialOutput combine_partials(std::span<const PartialOutput> parts) {
    PartialOutput acc;
    for (const auto& p : parts) detail::merge_into(acc, p);
    return acc;
}

std::vector<double> merge_partials(std::span<const PartialOutput> parts) {
    PartialOutput acc = combine_partials(parts);
    if (acc.empty())
        throw std::runtime_error("empty-context: all partials empty");
    return std::move(acc.o);
}

std::vector<double> cache_attention(std::span<const float> q, const SegmentedKvCache& cache) {
    PartialOutput acc;
    for (auto s : kAllSegments) {
        const auto& k = cache.keys(s);
        if (k.rows() == 0) continue;
        detail::merge_into(acc, detail::segment_attention_unchecked(q, k, cache.values(s)));
    }
    if (acc.empty())
        throw std::runtime_error("empty-context: cache has no tokens");
    return std::move(acc.o);
}

PartialOutput default_kv_attention(std::span<const float> q, const SegmentedKvCache& cache) {
    PartialOutput acc;
    for (auto s : {Segment::Sink, Segment::Local, Segment::New}) {
        const auto& k = cache.keys(s);
        if (k.rows() == 0) continue;
        detail::merge_into(acc, detail::segment_attention_unchecked(q, k, cache.values(s)));
    }
    return acc;
}

GroupView gqa_group_view(std::span<const HeadBinding> heads) {
    if (heads.empty())
        throw std::runtime_error("empty-group: group view needs at least one head");
    GroupView view;
    view.cache = heads.front().cache;
    for (const auto& h : heads) {
        if (h.cache != view.cache)
            throw std::runtime_error("mixed-group: heads reference different caches");
        view.head_ids.push_back(h.head_id);
    }
    return view;
}

} // namespace fluxattn
