#ifndef UQD_PROB_MAP_HPP
#define UQD_PROB_MAP_HPP

#include <cstdint>
#include <vector>

#include "uqd/errors.hpp"

namespace uqd {

// How a probability map was produced.
enum class Provenance { single, ensemble_mean, mcd_mean };

// Per-pixel foreground probability field, row-major H x W, values in [0,1].
struct ProbMap {
    int h = 0;
    int w = 0;
    std::vector<double> probs;
    Provenance provenance = Provenance::single;
    int sources = 1; // member count / pass count behind a mean provenance

    std::size_t size() const { return probs.size(); }
};

// Binary mask, row-major H x W, values restricted to {0,1}.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> v;

    std::size_t size() const { return v.size(); }
};

enum class Measure { entropy, variance, mutual_information };

// Pixelwise uncertainty field. Entropy and mutual information live in
// [0, ln 2], member variance in [0, 0.25].
struct UncertaintyMap {
    int h = 0;
    int w = 0;
    std::vector<double> values;
    Measure measure = Measure::entropy;
};

inline void check_same_extent(const char* op, int ah, int aw, int bh, int bw) {
    if (ah != bh || aw != bw) throw DimensionError(std::string(op) + ": extent mismatch");
}

} // namespace uqd

#endif
