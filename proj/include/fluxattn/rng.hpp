#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace fluxattn {

/// SplitMix64-based generator. Self-contained so that workloads are
/// bit-reproducible across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Independent stream derived from this seed; advancing one stream does
    /// not perturb the other.
    Rng fork(std::uint64_t stream) const {
        Rng r(state_ ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
        r.next_u64();
        return r;
    }

    /// Uniform in [0, 1).
    double uniform() {
        return double(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) {
        return std::size_t(uniform() * double(n)) % n;
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::vector<float> normal_vec(std::size_t n) {
        std::vector<float> v(n);
        for (auto& x : v) x = float(normal());
        return v;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[next_u64() % i]);
    }

private:
    std::uint64_t state_;
};

} // namespace fluxattn
