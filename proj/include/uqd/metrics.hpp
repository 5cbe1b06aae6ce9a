#ifndef UQD_METRICS_HPP
#define UQD_METRICS_HPP

#include <utility>
#include <vector>

#include "uqd/prob_map.hpp"

namespace uqd {

struct ConfusionCounts {
    long long tp = 0;
    long long fp = 0;
    long long tn = 0;
    long long fn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

struct ReliabilityBin {
    double lo = 0.0;
    double hi = 0.0;
    double mean_conf = 0.0; // 0 for an empty bin
    double accuracy = 0.0;  // 0 for an empty bin
    long long count = 0;
};

// Equal-width partition of the confidence domain [0.5, 1.0]. Intervals are
// closed-open except the last, which is closed; the realized assignment rule
// is bin = min(B-1, floor((confidence - 0.5) * 2B)).
struct ReliabilityTable {
    std::vector<ReliabilityBin> bins;
};

struct ImageMetrics {
    double dsc = 0.0, mcc = 0.0, ece = 0.0, brier = 0.0, nll = 0.0;
};

// Pixel-pooled scalars plus the pooled reliability table and the per-image
// scalar list (the scatter-plot data).
struct CalibrationReport {
    double dsc = 0.0, mcc = 0.0, ece = 0.0, brier = 0.0, nll = 0.0;
    ReliabilityTable reliability;
    std::vector<ImageMetrics> per_image;
};

inline constexpr int kDefaultBins = 10;

// Pixel -> 1 iff p >= threshold; the tie at the threshold goes to foreground.
Mask binarize(const ProbMap& p, double threshold = 0.5);

// Counts over two binary masks of equal extent; non-binary values are a
// contract error.
ConfusionCounts confusion(const Mask& pred, const Mask& gt);

// 2*tp / (2*tp + fp + fn); both-empty masks score 1.0.
double dice(const ConfusionCounts& c);
double dice(const Mask& pred, const Mask& gt);

// (tp*tn - fp*fn) / sqrt((tp+fp)(tp+fn)(tn+fp)(tn+fn)); a zero factor in the
// denominator scores 0.0.
double mcc(const ConfusionCounts& c);

// Expected calibration error with `bins` equal-width confidence bins, where
// confidence = max(p, 1-p) and correctness compares binarize(p, 0.5) to gt.
// Empty bins contribute nothing.
std::pair<double, ReliabilityTable> ece(const ProbMap& p, const Mask& gt,
                                        int bins = kDefaultBins);

// Mean over pixels of (p - y)^2.
double brier(const ProbMap& p, const Mask& gt);

// Mean over pixels of -ln(clamp(p_true)), p_true = p if y==1 else 1-p.
double nll(const ProbMap& p, const Mask& gt);

// Aggregate metrics over the pooled pixel population of all images, plus
// per-image scalars. Inputs must be non-empty and pairwise extent-matched.
CalibrationReport evaluate(const std::vector<ProbMap>& preds,
                           const std::vector<Mask>& gts, int bins = kDefaultBins);

} // namespace uqd

#endif
