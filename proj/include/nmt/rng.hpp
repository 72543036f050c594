#pragma once

// Reproducible random streams.
//
// Generator: xoshiro256** 1.0 (Blackman & Vigna), state seeded by SplitMix64.
// Gaussians: Box-Muller on two 53-bit uniforms, both outputs used in order
// (cos branch first). The pair (kGeneratorName, kGeneratorVersion) is written
// into every experiment output so a change here is visible downstream.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace nmt {

inline constexpr const char* kGeneratorName = "xoshiro256ss+splitmix64+boxmuller";
inline constexpr int kGeneratorVersion = 1;

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& s : s_) s = splitmix64(sm);
        initial_ = s_;
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Independent child stream; depends only on this stream's seed material
    /// and `stream_id`, not on how many numbers were drawn.
    [[nodiscard]] Rng split(std::uint64_t stream_id) const noexcept {
        std::uint64_t sm = seed_material() ^ (0xd1b54a32d192ed03ULL * (stream_id + 1));
        return Rng(splitmix64(sm));
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform draw from {-1, +1}.
    int sign() noexcept { return ((*this)() >> 63) ? 1 : -1; }

    Eigen::VectorXd gaussian_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
        return v;
    }

    /// Uniform point on the unit sphere S^{n-1}.
    Eigen::VectorXd unit_vector(Eigen::Index n) {
        for (;;) {
            Eigen::VectorXd v = gaussian_vector(n);
            const double nrm = v.norm();
            if (nrm > 0.0) return v / nrm;
        }
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    [[nodiscard]] std::uint64_t seed_material() const noexcept {
        return initial_[0] ^ rotl(initial_[1], 13) ^ rotl(initial_[2], 29) ^ rotl(initial_[3], 41);
    }

    std::array<std::uint64_t, 4> s_{};
    std::array<std::uint64_t, 4> initial_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace nmt
