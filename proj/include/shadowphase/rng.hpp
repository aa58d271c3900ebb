#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace shadowphase {

namespace detail {

// SplitMix64 finalizer. Good avalanche, cheap, and fully portable: the
// output stream depends only on integer arithmetic.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t combine64(std::uint64_t key, std::uint64_t tag) {
    return mix64(key ^ (tag + 0x9e3779b97f4a7c15ULL + (key << 6) + (key >> 2)));
}

}  // namespace detail

// Counter-based splittable random stream. A stream is identified by a 64-bit
// key; fork(tag) derives an independent child stream from the key alone, so
// the result never depends on how many values the parent has produced. This
// is what makes datasets reproducible under parallel generation: every
// (state, shadow, site) gets its own stream derived from the run seed.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed) : key_(detail::mix64(seed)), counter_(0) {}

    RandomStream fork(std::uint64_t tag) const {
        RandomStream child(0);
        child.key_ = detail::combine64(key_, tag);
        child.counter_ = 0;
        return child;
    }

    RandomStream fork(std::uint64_t tag_a, std::uint64_t tag_b) const {
        return fork(tag_a).fork(tag_b);
    }

    std::uint64_t next_u64() { return detail::mix64(key_ + 0x632be59bd9b4e019ULL * ++counter_); }

    // Uniform on [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1]; safe as a log() argument.
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // 64-bit value below bound (bound > 0), via rejection-free modulo of a
    // mixed value; bias is negligible for bound << 2^64.
    std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

    // Standard normal via Box-Muller. Pairs are cached, so a stream yields a
    // deterministic sequence regardless of interleaving with uniform draws
    // only if callers keep normal/uniform usage itself deterministic.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t key_;
    std::uint64_t counter_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

// Stable 64-bit FNV-1a, used to stamp resolved configs into manifests.
inline std::uint64_t fnv1a_hash(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace shadowphase
