#include "uqd/metrics.hpp"

#include <cmath>

#include "uqd/tensor.hpp"

namespace uqd {

namespace {

void check_probmap(const ProbMap& p, const char* op) {
    if (p.h <= 0 || p.w <= 0 || p.size() != static_cast<std::size_t>(p.h) * static_cast<std::size_t>(p.w))
        throw ContractError(std::string(op) + ": malformed probability map");
}

void check_binary(const Mask& m, const char* op) {
    for (std::uint8_t v : m.v)
        if (v > 1) throw ContractError(std::string(op) + ": mask is not binary");
}

struct PooledCalib {
    std::vector<double> conf_sum;
    std::vector<long long> correct;
    std::vector<long long> count;
    double brier_sum = 0.0;
    double nll_sum = 0.0;
    long long pixels = 0;

    explicit PooledCalib(int bins)
        : conf_sum(static_cast<std::size_t>(bins), 0.0),
          correct(static_cast<std::size_t>(bins), 0),
          count(static_cast<std::size_t>(bins), 0) {}
};

void accumulate(PooledCalib& acc, const ProbMap& p, const Mask& gt, int bins) {
    check_same_extent("calibration", p.h, p.w, gt.h, gt.w);
    check_binary(gt, "calibration");
    const int last = bins - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pr = p.probs[i];
        const int y = gt.v[i];

        const double conf = pr >= 0.5 ? pr : 1.0 - pr;
        const int pred = pr >= 0.5 ? 1 : 0;
        int b = static_cast<int>((conf - 0.5) * 2.0 * bins);
        if (b > last) b = last;
        if (b < 0) b = 0;
        acc.conf_sum[static_cast<std::size_t>(b)] += conf;
        acc.correct[static_cast<std::size_t>(b)] += (pred == y) ? 1 : 0;
        acc.count[static_cast<std::size_t>(b)] += 1;

        const double d = pr - static_cast<double>(y);
        acc.brier_sum += d * d;

        const double p_true = y == 1 ? pr : 1.0 - pr;
        acc.nll_sum += -std::log(p_true > kLogFloor ? p_true : kLogFloor);

        acc.pixels += 1;
    }
}

std::pair<double, ReliabilityTable> finish_ece(const PooledCalib& acc, int bins) {
    ReliabilityTable table;
    table.bins.resize(static_cast<std::size_t>(bins));
    const double width = 0.5 / static_cast<double>(bins);
    double e = 0.0;
    for (int b = 0; b < bins; ++b) {
        ReliabilityBin& rb = table.bins[static_cast<std::size_t>(b)];
        rb.lo = 0.5 + b * width;
        rb.hi = b == bins - 1 ? 1.0 : 0.5 + (b + 1) * width;
        rb.count = acc.count[static_cast<std::size_t>(b)];
        if (rb.count > 0) {
            rb.mean_conf = acc.conf_sum[static_cast<std::size_t>(b)] / static_cast<double>(rb.count);
            rb.accuracy = static_cast<double>(acc.correct[static_cast<std::size_t>(b)]) /
                          static_cast<double>(rb.count);
            e += (static_cast<double>(rb.count) / static_cast<double>(acc.pixels)) *
                 std::fabs(rb.accuracy - rb.mean_conf);
        }
    }
    return {e, std::move(table)};
}

} // namespace

Mask binarize(const ProbMap& p, double threshold) {
    check_probmap(p, "binarize");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ContractError("binarize: threshold must lie in (0,1)");
    Mask m;
    m.h = p.h;
    m.w = p.w;
    m.v.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        m.v[i] = p.probs[i] >= threshold ? 1 : 0;
    return m;
}

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
    check_same_extent("confusion", pred.h, pred.w, gt.h, gt.w);
    check_binary(pred, "confusion");
    check_binary(gt, "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred.v[i], y = gt.v[i];
        if (p == 1 && y == 1)
            ++c.tp;
        else if (p == 1 && y == 0)
            ++c.fp;
        else if (p == 0 && y == 0)
            ++c.tn;
        else
            ++c.fn;
    }
    return c;
}

double dice(const ConfusionCounts& c) {
    const long long denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0; // both masks empty: perfect agreement
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double dice(const Mask& pred, const Mask& gt) { return dice(confusion(pred, gt)); }

double mcc(const ConfusionCounts& c) {
    const double f1 = static_cast<double>(c.tp + c.fp);
    const double f2 = static_cast<double>(c.tp + c.fn);
    const double f3 = static_cast<double>(c.tn + c.fp);
    const double f4 = static_cast<double>(c.tn + c.fn);
    if (f1 == 0.0 || f2 == 0.0 || f3 == 0.0 || f4 == 0.0) return 0.0;
    const double num = static_cast<double>(c.tp) * static_cast<double>(c.tn) -
                       static_cast<double>(c.fp) * static_cast<double>(c.fn);
    return num / std::sqrt(f1 * f2 * f3 * f4);
}

std::pair<double, ReliabilityTable> ece(const ProbMap& p, const Mask& gt, int bins) {
    check_probmap(p, "ece");
    if (bins < 1) throw ContractError("ece: bin count must be >= 1");
    PooledCalib acc(bins);
    accumulate(acc, p, gt, bins);
    return finish_ece(acc, bins);
}

double brier(const ProbMap& p, const Mask& gt) {
    check_probmap(p, "brier");
    check_same_extent("brier", p.h, p.w, gt.h, gt.w);
    check_binary(gt, "brier");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.probs[i] - static_cast<double>(gt.v[i]);
        s += d * d;
    }
    return s / static_cast<double>(p.size());
}

double nll(const ProbMap& p, const Mask& gt) {
    check_probmap(p, "nll");
    check_same_extent("nll", p.h, p.w, gt.h, gt.w);
    check_binary(gt, "nll");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double p_true = gt.v[i] == 1 ? p.probs[i] : 1.0 - p.probs[i];
        s += -std::log(p_true > kLogFloor ? p_true : kLogFloor);
    }
    return s / static_cast<double>(p.size());
}

CalibrationReport evaluate(const std::vector<ProbMap>& preds,
                           const std::vector<Mask>& gts, int bins) {
    if (preds.empty()) throw ContractError("evaluate: empty prediction set");
    if (preds.size() != gts.size())
        throw ContractError("evaluate: prediction/ground-truth count mismatch");
    if (bins < 1) throw ContractError("evaluate: bin count must be >= 1");

    CalibrationReport report;
    ConfusionCounts pooled_counts;
    PooledCalib pooled(bins);
    long long pixels = 0;

    for (std::size_t i = 0; i < preds.size(); ++i) {
        check_probmap(preds[i], "evaluate");
        const Mask pred_mask = binarize(preds[i], 0.5);
        const ConfusionCounts c = confusion(pred_mask, gts[i]);
        pooled_counts += c;
        accumulate(pooled, preds[i], gts[i], bins);
        pixels += static_cast<long long>(preds[i].size());

        ImageMetrics im;
        im.dsc = dice(c);
        im.mcc = mcc(c);
        im.ece = ece(preds[i], gts[i], bins).first;
        im.brier = brier(preds[i], gts[i]);
        im.nll = nll(preds[i], gts[i]);
        report.per_image.push_back(im);
    }

    report.dsc = dice(pooled_counts);
    report.mcc = mcc(pooled_counts);
    auto [e, table] = finish_ece(pooled, bins);
    report.ece = e;
    report.reliability = std::move(table);
    report.brier = pooled.brier_sum / static_cast<double>(pixels);
    report.nll = pooled.nll_sum / static_cast<double>(pixels);
    return report;
}

} // namespace uqd
