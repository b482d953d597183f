#ifndef DAQ_RNG_HPP
#define DAQ_RNG_HPP

// Deterministic 64-bit-seed generator used everywhere randomness is needed.
// Core is splitmix64 (Steele et al., "Fast splittable pseudorandom number
// generators"); normals come from Box-Muller over two uniforms. No standard
// library distributions are used, so streams are identical across platforms.

#include <cmath>
#include <cstdint>

namespace daq {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Derive an independent stream, e.g. one per tensor or per epoch.
    Rng fork(std::uint64_t stream) const {
        Rng r(state_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
        r.next_u64();
        return r;
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // i in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace daq

#endif // DAQ_RNG_HPP
