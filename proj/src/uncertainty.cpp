#include "uqd/uncertainty.hpp"

#include <cmath>

namespace uqd {

namespace {

double binary_entropy(double p) {
    const double a = p > kLogFloor ? p : kLogFloor;
    const double q = 1.0 - p;
    const double b = q > kLogFloor ? q : kLogFloor;
    return -p * std::log(a) - q * std::log(b);
}

ProbMap average(std::vector<ProbMap> members, Provenance prov) {
    const std::size_t n = members.front().size();
    ProbMap mean;
    mean.h = members.front().h;
    mean.w = members.front().w;
    mean.provenance = prov;
    mean.sources = static_cast<int>(members.size());
    mean.probs.assign(n, 0.0);
    for (const ProbMap& m : members) {
        check_same_extent("ensemble mean", mean.h, mean.w, m.h, m.w);
        for (std::size_t i = 0; i < n; ++i) mean.probs[i] += m.probs[i];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t i = 0; i < n; ++i) mean.probs[i] *= inv;
    return mean;
}

} // namespace

EnsemblePrediction ensemble_predict(const EnsembleModel& ens, const Tensor& image) {
    if (ens.members.empty()) throw ContractError("ensemble_predict: no members");
    EnsemblePrediction out;
    out.members.reserve(ens.members.size());
    for (const SegNet& net : ens.members) {
        if (net.mode != Mode::eval) throw ContractError("ensemble_predict: members must be eval-mode");
        if (net.arch.base_channels != ens.members.front().arch.base_channels ||
            net.arch.in_channels != ens.members.front().arch.in_channels)
            throw ContractError("ensemble_predict: members must share one architecture");
        out.members.push_back(predict_prob(net, image));
    }
    out.mean = average(out.members, Provenance::ensemble_mean);
    return out;
}

EnsemblePrediction mcd_predict(const SegNet& net, const Tensor& image,
                               int t_passes, std::uint64_t seed) {
    if (net.dropout_rate <= 0.0)
        throw ContractError("mcd_predict: dropout_rate is 0, passes cannot differ");
    if (t_passes < 1) throw ContractError("mcd_predict: t_passes must be >= 1");
    if (net.mode != Mode::eval) throw ContractError("mcd_predict: network must be eval-mode");

    EnsemblePrediction out;
    out.members.reserve(static_cast<std::size_t>(t_passes));
    for (int k = 0; k < t_passes; ++k) {
        Rng pass_rng(seed + static_cast<std::uint64_t>(k));
        Tensor probs = sigmoid(forward(net, image, &pass_rng).logits);
        ProbMap p;
        p.h = image.dim(0);
        p.w = image.dim(1);
        p.probs = probs.data();
        out.members.push_back(std::move(p));
    }
    out.mean = average(out.members, Provenance::mcd_mean);
    return out;
}

UncertaintyMap predictive_entropy(const ProbMap& p) {
    UncertaintyMap u;
    u.h = p.h;
    u.w = p.w;
    u.measure = Measure::entropy;
    u.values.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) u.values[i] = binary_entropy(p.probs[i]);
    return u;
}

UncertaintyMap member_variance(const std::vector<ProbMap>& members) {
    if (members.empty()) throw ContractError("member_variance: no members");
    const std::size_t n = members.front().size();
    const double m = static_cast<double>(members.size());
    UncertaintyMap u;
    u.h = members.front().h;
    u.w = members.front().w;
    u.measure = Measure::variance;
    u.values.assign(n, 0.0);

    std::vector<double> mean(n, 0.0);
    for (const ProbMap& pm : members) {
        check_same_extent("member_variance", u.h, u.w, pm.h, pm.w);
        for (std::size_t i = 0; i < n; ++i) mean[i] += pm.probs[i];
    }
    for (std::size_t i = 0; i < n; ++i) mean[i] /= m;
    for (const ProbMap& pm : members)
        for (std::size_t i = 0; i < n; ++i) {
            const double d = pm.probs[i] - mean[i];
            u.values[i] += d * d;
        }
    for (std::size_t i = 0; i < n; ++i) u.values[i] /= m;
    return u;
}

UncertaintyMap mutual_information(const ProbMap& mean, const std::vector<ProbMap>& members) {
    if (members.empty()) throw ContractError("mutual_information: no members");
    const std::size_t n = mean.size();
    const double m = static_cast<double>(members.size());

    std::vector<double> check(n, 0.0);
    for (const ProbMap& pm : members) {
        check_same_extent("mutual_information", mean.h, mean.w, pm.h, pm.w);
        for (std::size_t i = 0; i < n; ++i) check[i] += pm.probs[i];
    }
    for (std::size_t i = 0; i < n; ++i)
        if (std::fabs(check[i] / m - mean.probs[i]) > 1e-9)
            throw ContractError("mutual_information: mean is not the member average");

    UncertaintyMap u;
    u.h = mean.h;
    u.w = mean.w;
    u.measure = Measure::mutual_information;
    u.values.assign(n, 0.0);
    // Averaging the per-member differences H(mean) - H(member) keeps the
    // result exactly zero when every member equals the mean.
    for (const ProbMap& pm : members)
        for (std::size_t i = 0; i < n; ++i)
            u.values[i] += binary_entropy(mean.probs[i]) - binary_entropy(pm.probs[i]);
    for (std::size_t i = 0; i < n; ++i) {
        u.values[i] /= m;
        if (u.values[i] < 0.0) u.values[i] = 0.0;
    }
    return u;
}

} // namespace uqd
