#ifndef UQD_UNCERTAINTY_HPP
#define UQD_UNCERTAINTY_HPP

#include <cstdint>
#include <vector>

#include "uqd/prob_map.hpp"
#include "uqd/segnet.hpp"

namespace uqd {

// M independently trained members sharing one architecture, all eval-mode.
struct EnsembleModel {
    std::vector<SegNet> members;

    int size() const { return static_cast<int>(members.size()); }
};

struct EnsemblePrediction {
    ProbMap mean;
    std::vector<ProbMap> members; // per member / per pass, in order
};

// Mean of the member probability maps, summed in ascending member order and
// divided once. members must agree on extent; M >= 1.
EnsemblePrediction ensemble_predict(const EnsembleModel& ens, const Tensor& image);

// T_passes train-mode-dropout forwards with per-pass generators seeded
// seed + k, averaged like ensemble_predict. dropout_rate must be > 0,
// otherwise the passes could not differ.
EnsemblePrediction mcd_predict(const SegNet& net, const Tensor& image,
                               int t_passes, std::uint64_t seed);

// H(p) = -p ln p - (1-p) ln(1-p) per pixel, logs clamped at kLogFloor.
UncertaintyMap predictive_entropy(const ProbMap& p);

// Population variance across members per pixel (zero for a single member).
UncertaintyMap member_variance(const std::vector<ProbMap>& members);

// Epistemic disagreement: mean over members of H(mean) - H(member), i.e.
// H(mean) minus the average member entropy, clamped at zero from below.
// mean must match the recomputed member mean within 1e-9 per pixel.
UncertaintyMap mutual_information(const ProbMap& mean, const std::vector<ProbMap>& members);

} // namespace uqd

#endif
