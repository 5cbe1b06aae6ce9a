#ifndef UQD_RNG_HPP
#define UQD_RNG_HPP

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace uqd {

// splitmix64 finalizer. Used to derive independent stream seeds from a base
// seed plus a stream tag (member index, epoch number, ...).
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic random source. mt19937_64 raw output is pinned by the
// standard, and every distribution transform is implemented here instead of
// through std:: distributions (whose algorithms are implementation-defined),
// so a fixed seed yields identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    // Box-Muller, two draws per call, no cached spare.
    double normal() {
        double u1 = u01();
        double u2 = u01();
        double r = std::sqrt(-2.0 * std::log(u1 > 1e-300 ? u1 : 1e-300));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return u01() < p; }

    // Inclusive bounds. Modulo bias is irrelevant for the spans used here
    // (all far below 2^32) and keeps the mapping platform-stable.
    int uniform_int(int lo, int hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next() % span);
    }

    // Fisher-Yates using this stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(0, i);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace uqd

#endif
