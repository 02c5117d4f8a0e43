#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "neuroswift/tensor.hpp"

namespace neuroswift {

namespace detail {

// murmur3 64-bit finalizer; full avalanche on a 64-bit word
inline std::uint64_t fmix64(std::uint64_t z) {
    z ^= z >> 33;
    z *= 0xff51afd7ed558ccdULL;
    z ^= z >> 33;
    z *= 0xc4ceb9fe1a85ec53ULL;
    z ^= z >> 33;
    return z;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace detail

inline std::uint64_t hash_name(std::string_view name) {
    // FNV-1a, then avalanche
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return detail::fmix64(h);
}

// Counter-based splittable RNG. The draw at position i is a pure function of
// (seed, stream_id, i), so copies replay identically and streams with distinct
// ids are statistically independent.
class RngStream {
  public:
    RngStream() : RngStream(0, 0) {}

    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id), counter_(0) {
        base_ = detail::fmix64(detail::fmix64(seed + detail::kGolden) ^
                               detail::fmix64(stream_id * 0xda942042e4dd58b5ULL + 1));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    // Child stream with an unrelated draw sequence; parent state is untouched.
    RngStream substream(std::uint64_t child_id) const {
        return RngStream(seed_, detail::fmix64(stream_id_ * 0x2545f4914f6cdd1dULL ^
                                               (child_id + detail::kGolden)));
    }
    RngStream substream(std::string_view name) const { return substream(hash_name(name)); }

    std::uint64_t next_u64() { return detail::fmix64(base_ + (counter_++) * detail::kGolden); }

    // uniform on (0,1), both endpoints excluded
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    // standard normal via Box-Muller; consumes exactly two uniforms per draw
    double next_normal() {
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double next_uniform_in(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t counter_;
    std::uint64_t base_;
};

inline Tensor normal_draw(RngStream& rng, std::vector<std::size_t> dims) {
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_normal();
    return t;
}

template <typename T>
inline void shuffle_indices(std::vector<T>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace neuroswift
