#include "fluxattn/features.hpp"

#include <cmath>
#include <stdexcept>

#include "fluxattn/attention.hpp"

namespace fluxattn {

const std::array<const char*, kFeatureCount> kFeatureNames = {
    "layer",          "head",           "l_cpu",          "l_gpu",
    "k_sink_norm",    "v_sink_norm",    "mean_k_cpu_norm", "mean_v_cpu_norm",
    "k_cpu_norm_mean", "k_cpu_norm_var", "k_cpu_norm_skew", "k_cpu_norm_kurt",
    "v_cpu_norm_mean", "v_cpu_norm_var", "v_cpu_norm_skew", "v_cpu_norm_kurt",
    "q_mean_key_score", "z_anchor_mean", "z_anchor_var",   "z_anchor_skew",
    "z_anchor_kurt",  "lse_sink_q",     "lse_cpu_q",       "lse_local_q",
    "lse_sink_anchor", "lse_cpu_anchor", "lse_local_anchor", "out_sink_q_norm",
    "out_local_q_norm", "out_sink_anchor_norm", "out_cpu_anchor_norm",
    "out_local_anchor_norm", "q_norm", "anchor_norm",      "q_anchor_cos",
    "bgt16",          "bgt32",          "bgt64",           "bgt128",
    "cross_head_max_q", "cross_head_max_anchor",
};

Moments compute_moments(std::span<const double> values) {
    Moments m;
    const std::size_t n = values.size();
    if (n == 0) return m;
    for (double v : values) m.mean += v;
    m.mean /= double(n);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : values) {
        const double d = v - m.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= double(n);
    m3 /= double(n);
    m4 /= double(n);
    m.var = m2;
    if (m2 > 0.0) {
        m.skew = m3 / std::pow(m2, 1.5);
        m.kurt = m4 / (m2 * m2) - 3.0; // excess
    }
    return m;
}

namespace {

std::vector<double> row_norms(const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = l2_norm(m.row(i));
    return out;
}

double mean_of(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

struct SegmentSummary {
    double lse = kEmptyLse;
    double out_norm = 0.0;
};

SegmentSummary segment_summary(std::span<const float> q, const SegmentedKvCache& cache,
                               Segment seg) {
    SegmentSummary s;
    if (cache.len(seg) == 0) return s;
    const PartialOutput p =
        detail::segment_attention_unchecked(q, cache.keys(seg), cache.values(seg));
    s.lse = p.lse;
    s.out_norm = l2_norm(p.o);
    return s;
}

} // namespace

double gpu_output_norm(std::span<const float> q, const SegmentedKvCache& cache) {
    const PartialOutput p = default_kv_attention(q, cache);
    return p.empty() ? 0.0 : l2_norm(p.o);
}

PrefillStats prefill_stats(int layer, int head, const SegmentedKvCache& cache,
                           std::span<const float> anchor_query,
                           const std::array<double, 4>& budget_features,
                           double cross_head_max_anchor) {
    PrefillStats st;
    st.layer = layer;
    st.head = head;
    st.l_cpu = cache.len(Segment::Cpu);
    st.l_sink = cache.len(Segment::Sink);
    st.l_local = cache.len(Segment::Local);
    st.cpu_empty = st.l_cpu == 0;
    st.anchor_query.assign(anchor_query.begin(), anchor_query.end());
    st.budget_features = budget_features;
    st.cross_head_max_anchor = cross_head_max_anchor;

    const std::size_t d = cache.dim();
    st.mean_k_cpu.assign(d, 0.0);
    st.mean_v_cpu.assign(d, 0.0);

    if (st.l_sink > 0) {
        st.sink_key_norm_mean = mean_of(row_norms(cache.keys(Segment::Sink)));
        st.sink_value_norm_mean = mean_of(row_norms(cache.values(Segment::Sink)));
    }

    if (!st.cpu_empty) {
        const Matrix& kc = cache.keys(Segment::Cpu);
        const Matrix& vc = cache.values(Segment::Cpu);
        for (std::size_t i = 0; i < kc.rows(); ++i) {
            const auto kr = kc.row(i);
            const auto vr = vc.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                st.mean_k_cpu[j] += double(kr[j]);
                st.mean_v_cpu[j] += double(vr[j]);
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            st.mean_k_cpu[j] /= double(st.l_cpu);
            st.mean_v_cpu[j] /= double(st.l_cpu);
        }
        st.k_cpu_norms = compute_moments(row_norms(kc));
        st.v_cpu_norms = compute_moments(row_norms(vc));

        const double qn = l2_norm(anchor_query);
        std::vector<double> z(st.l_cpu, 0.0);
        if (qn > 0.0) {
            const double denom = qn * std::sqrt(double(d));
            for (std::size_t i = 0; i < kc.rows(); ++i)
                z[i] = dot(anchor_query, kc.row(i)) / denom;
        }
        st.z_anchor = compute_moments(z);

        const SegmentSummary cpu = segment_summary(anchor_query, cache, Segment::Cpu);
        st.lse_cpu_anchor = cpu.lse;
        st.out_cpu_anchor_norm = cpu.out_norm;
    }

    const SegmentSummary sink = segment_summary(anchor_query, cache, Segment::Sink);
    st.lse_sink_anchor = sink.lse;
    st.out_sink_anchor_norm = sink.out_norm;
    const SegmentSummary local = segment_summary(anchor_query, cache, Segment::Local);
    st.lse_local_anchor = local.lse;
    st.out_local_anchor_norm = local.out_norm;
    return st;
}

double approx_lse_cpu(std::span<const float> q, const PrefillStats& stats) {
    if (stats.l_cpu == 0) return kEmptyLse;
    const double qn = l2_norm(q);
    if (qn == 0.0) return std::log(double(stats.l_cpu));
    const std::size_t d = stats.mean_k_cpu.size();
    double qk = 0.0;
    for (std::size_t j = 0; j < d; ++j) qk += double(q[j]) * stats.mean_k_cpu[j];
    const double mu_q = qk / (qn * std::sqrt(double(d)));
    return std::log(double(stats.l_cpu)) + qn * mu_q + 0.5 * qn * qn * stats.z_anchor.var;
}

FeatureVector decode_features(std::span<const float> q, const SegmentedKvCache& cache,
                              const PrefillStats& stats, double cross_head_max_now) {
    FeatureVector f{};
    const std::size_t d = cache.dim();

    f[kLayerIndex] = double(stats.layer);
    f[kHeadIndex] = double(stats.head);
    f[kCpuLen] = double(stats.l_cpu);
    f[kGpuLen] = double(stats.l_sink + stats.l_local + cache.len(Segment::New));

    f[kSinkKeyNorm] = stats.sink_key_norm_mean;
    f[kSinkValueNorm] = stats.sink_value_norm_mean;
    f[kMeanKeyCpuNorm] = l2_norm(stats.mean_k_cpu);
    f[kMeanValueCpuNorm] = l2_norm(stats.mean_v_cpu);
    f[kKeyCpuNormMean] = stats.k_cpu_norms.mean;
    f[kKeyCpuNormVar] = stats.k_cpu_norms.var;
    f[kKeyCpuNormSkew] = stats.k_cpu_norms.skew;
    f[kKeyCpuNormKurt] = stats.k_cpu_norms.kurt;
    f[kValueCpuNormMean] = stats.v_cpu_norms.mean;
    f[kValueCpuNormVar] = stats.v_cpu_norms.var;
    f[kValueCpuNormSkew] = stats.v_cpu_norms.skew;
    f[kValueCpuNormKurt] = stats.v_cpu_norms.kurt;

    const double qn = l2_norm(q);
    if (qn > 0.0 && !stats.cpu_empty) {
        double qk = 0.0;
        for (std::size_t j = 0; j < d; ++j) qk += double(q[j]) * stats.mean_k_cpu[j];
        f[kQMeanKeyScore] = qk / (qn * std::sqrt(double(d)));
    }
    f[kZAnchorMean] = stats.z_anchor.mean;
    f[kZAnchorVar] = stats.z_anchor.var;
    f[kZAnchorSkew] = stats.z_anchor.skew;
    f[kZAnchorKurt] = stats.z_anchor.kurt;

    const SegmentSummary sink = segment_summary(q, cache, Segment::Sink);
    const SegmentSummary local = segment_summary(q, cache, Segment::Local);
    f[kLseSinkQ] = sink.lse;
    f[kLseCpuQ] = approx_lse_cpu(q, stats);
    f[kLseLocalQ] = local.lse;
    f[kLseSinkAnchor] = stats.lse_sink_anchor;
    f[kLseCpuAnchor] = stats.lse_cpu_anchor;
    f[kLseLocalAnchor] = stats.lse_local_anchor;
    f[kOutSinkQNorm] = sink.out_norm;
    f[kOutLocalQNorm] = local.out_norm;
    f[kOutSinkAnchorNorm] = stats.out_sink_anchor_norm;
    f[kOutCpuAnchorNorm] = stats.out_cpu_anchor_norm;
    f[kOutLocalAnchorNorm] = stats.out_local_anchor_norm;

    const double an = l2_norm(std::span<const float>(stats.anchor_query));
    f[kQNorm] = qn;
    f[kAnchorNorm] = an;
    f[kQAnchorCos] =
        (qn > 0.0 && an > 0.0) ? dot(q, stats.anchor_query) / (qn * an) : 0.0;

    f[kBudget16] = stats.budget_features[0];
    f[kBudget32] = stats.budget_features[1];
    f[kBudget64] = stats.budget_features[2];
    f[kBudget128] = stats.budget_features[3];

    f[kCrossHeadMaxQ] = cross_head_max_now;
    f[kCrossHeadMaxAnchor] = stats.cross_head_max_anchor;
    return f;
}

FeatureVector normalize(const FeatureVector& fv, const FeatureNorms& norms) {
    if (norms.mu.size() != kFeatureCount || norms.sigma.size() != kFeatureCount)
        throw std::runtime_error("bad-norms: dimension count mismatch");
    FeatureVector out{};
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        out[i] = norms.sigma[i] > 0.0 ? (fv[i] - norms.mu[i]) / norms.sigma[i] : 0.0;
    return out;
}

} // namespace fluxattn
