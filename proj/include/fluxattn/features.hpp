#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "fluxattn/kv_cache.hpp"

namespace fluxattn {

inline constexpr std::size_t kFeatureCount = 41;
using FeatureVector = std::array<double, kFeatureCount>;

/// LSE sentinel for empty segments; keeps feature vectors finite.
inline constexpr double kEmptyLse = -1e6;

/// Fixed feature order. Groups: structural (4), KV distribution (12),
/// QK interaction (5), attention contribution (11), query dynamics (3),
/// budget estimation (4), cross-head (2).
enum Feature : std::size_t {
    kLayerIndex = 0,
    kHeadIndex,
    kCpuLen,
    kGpuLen,
    kSinkKeyNorm, // mean per-token row norm
    kSinkValueNorm,
    kMeanKeyCpuNorm, // norm of the mean key vector
    kMeanValueCpuNorm,
    kKeyCpuNormMean,
    kKeyCpuNormVar,
    kKeyCpuNormSkew,
    kKeyCpuNormKurt,
    kValueCpuNormMean,
    kValueCpuNormVar,
    kValueCpuNormSkew,
    kValueCpuNormKurt,
    kQMeanKeyScore, // <q, MEAN(K_cpu)> / (|q| sqrt(D))
    kZAnchorMean,
    kZAnchorVar,
    kZAnchorSkew,
    kZAnchorKurt,
    kLseSinkQ,
    kLseCpuQ, // moment approximation at decode time
    kLseLocalQ,
    kLseSinkAnchor,
    kLseCpuAnchor,
    kLseLocalAnchor,
    kOutSinkQNorm,
    kOutLocalQNorm,
    kOutSinkAnchorNorm,
    kOutCpuAnchorNorm,
    kOutLocalAnchorNorm,
    kQNorm,
    kAnchorNorm,
    kQAnchorCos,
    kBudget16,
    kBudget32,
    kBudget64,
    kBudget128,
    kCrossHeadMaxQ,
    kCrossHeadMaxAnchor,
};

extern const std::array<const char*, kFeatureCount> kFeatureNames;

/// Token-dimension statistics: population variance, excess kurtosis; the
/// zero-variance convention sets skew = kurt = 0.
struct Moments {
    double mean = 0.0;
    double var = 0.0;
    double skew = 0.0;
    double kurt = 0.0;
};

Moments compute_moments(std::span<const double> values);

/// Everything cached at prefill so decode-time extraction never reads the
/// cpu-segment tensors again.
struct PrefillStats {
    int layer = 0;
    int head = 0;
    std::size_t l_cpu = 0;
    std::size_t l_sink = 0;
    std::size_t l_local = 0;
    bool cpu_empty = false;

    std::vector<float> anchor_query;
    std::vector<double> mean_k_cpu;
    std::vector<double> mean_v_cpu;
    double sink_key_norm_mean = 0.0;
    double sink_value_norm_mean = 0.0;
    Moments k_cpu_norms;
    Moments v_cpu_norms;
    Moments z_anchor;

    double lse_sink_anchor = kEmptyLse;
    double lse_cpu_anchor = kEmptyLse;
    double lse_local_anchor = kEmptyLse;
    double out_sink_anchor_norm = 0.0;
    double out_cpu_anchor_norm = 0.0;
    double out_local_anchor_norm = 0.0;

    std::array<double, 4> budget_features{}; // min budgets at {16,32,64,128}
    double cross_head_max_anchor = 0.0;      // max_h |O~_h(q'_h)| over gpu tokens
};

/// Computed once after prefill. `budget_features` come from the budget
/// oracle at the anchor query; `cross_head_max_anchor` is the layer-wide
/// max gpu-resident output norm at the anchors.
PrefillStats prefill_stats(int layer, int head, const SegmentedKvCache& cache,
                           std::span<const float> anchor_query,
                           const std::array<double, 4>& budget_features,
                           double cross_head_max_anchor);

/// Decode-time features. Reads sink/local/new segments only; every
/// cpu-segment quantity comes from `stats` (the LSE via approx_lse_cpu).
FeatureVector decode_features(std::span<const float> q, const SegmentedKvCache& cache,
                              const PrefillStats& stats, double cross_head_max_now);

/// log(L_cpu) + |q| mu_q + 0.5 |q|^2 VAR(z(q')), with
/// mu_q = <q, MEAN(K_cpu)> / (|q| sqrt(D)).
double approx_lse_cpu(std::span<const float> q, const PrefillStats& stats);

/// Output norm over gpu-resident tokens only (sink + local + new).
double gpu_output_norm(std::span<const float> q, const SegmentedKvCache& cache);

struct FeatureNorms {
    std::vector<double> mu;
    std::vector<double> sigma;
};

/// (x - mu) / sigma per dimension; zero-sigma dimensions pass through as 0.
FeatureVector normalize(const FeatureVector& fv, const FeatureNorms& norms);

} // namespace fluxattn
