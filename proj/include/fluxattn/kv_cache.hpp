#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "fluxattn/matrix.hpp"

namespace fluxattn {

enum class Segment : int { Sink = 0, Cpu = 1, Local = 2, New = 3 };
inline constexpr std::array<Segment, 4> kAllSegments = {Segment::Sink, Segment::Cpu,
                                                        Segment::Local, Segment::New};

/// Per-head (or per GQA group) KV cache split into position-ordered,
/// disjoint segments: sink | cpu-resident | local window | decoded tokens.
/// Tensor reads are counted per segment so tests can assert that decode-time
/// feature extraction never touches the cpu segment.
class SegmentedKvCache {
public:
    SegmentedKvCache() = default;
    SegmentedKvCache(Matrix k_sink, Matrix v_sink, Matrix k_cpu, Matrix v_cpu,
                     Matrix k_local, Matrix v_local)
        : k_{std::move(k_sink), std::move(k_cpu), std::move(k_local), Matrix{}},
          v_{std::move(v_sink), std::move(v_cpu), std::move(v_local), Matrix{}} {
        validate();
    }

    SegmentedKvCache(const SegmentedKvCache& o) : k_(o.k_), v_(o.v_) {}
    SegmentedKvCache& operator=(const SegmentedKvCache& o) {
        k_ = o.k_;
        v_ = o.v_;
        for (auto& c : reads_) c.store(0, std::memory_order_relaxed);
        return *this;
    }
    SegmentedKvCache(SegmentedKvCache&& o) noexcept
        : k_(std::move(o.k_)), v_(std::move(o.v_)) {}
    SegmentedKvCache& operator=(SegmentedKvCache&& o) noexcept {
        k_ = std::move(o.k_);
        v_ = std::move(o.v_);
        for (auto& c : reads_) c.store(0, std::memory_order_relaxed);
        return *this;
    }

    const Matrix& keys(Segment s) const {
        bump(s);
        return k_[idx(s)];
    }
    const Matrix& values(Segment s) const {
        bump(s);
        return v_[idx(s)];
    }

    std::size_t len(Segment s) const { return k_[idx(s)].rows(); }
    std::size_t total_len() const {
        return len(Segment::Sink) + len(Segment::Cpu) + len(Segment::Local) + len(Segment::New);
    }
    std::size_t dim() const {
        for (const auto& m : k_)
            if (m.cols() > 0) return m.cols();
        return 0;
    }

    /// Decode-time append; callers synchronize appends against concurrent
    /// readers (decode steps are separated by a barrier).
    void append_new(std::span<const float> k, std::span<const float> v) {
        if (!all_finite(k) || !all_finite(v))
            throw std::runtime_error("non-finite: appended kv row");
        k_[idx(Segment::New)].append_row(k);
        v_[idx(Segment::New)].append_row(v);
    }

    std::uint64_t tensor_reads(Segment s) const {
        return reads_[idx(s)].load(std::memory_order_relaxed);
    }

private:
    static std::size_t idx(Segment s) { return std::size_t(int(s)); }
    void bump(Segment s) const { reads_[idx(s)].fetch_add(1, std::memory_order_relaxed); }

    void validate() const {
        std::size_t d = 0;
        for (auto s : kAllSegments) {
            const auto& k = k_[idx(s)];
            const auto& v = v_[idx(s)];
            if (k.rows() != v.rows())
                throw std::runtime_error("bad-shape: K/V row count differs in a segment");
            if (k.rows() == 0) continue;
            if (k.cols() != v.cols())
                throw std::runtime_error("bad-shape: K/V width differs in a segment");
            if (d == 0) d = k.cols();
            if (k.cols() != d)
                throw std::runtime_error("bad-shape: segment dim mismatch");
            if (!all_finite(k) || !all_finite(v))
                throw std::runtime_error("non-finite: cache tensor");
        }
    }

    std::array<Matrix, 4> k_;
    std::array<Matrix, 4> v_;
    mutable std::array<std::atomic<std::uint64_t>, 4> reads_{};
};

} // namespace fluxattn
