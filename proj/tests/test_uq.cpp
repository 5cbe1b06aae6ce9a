#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "uqd/uncertainty.hpp"

using namespace uqd;

namespace {

ProbMap pm(int h, int w, std::vector<double> probs) {
    ProbMap p;
    p.h = h;
    p.w = w;
    p.probs = std::move(probs);
    return p;
}

ProbMap constant_map(int h, int w, double v) {
    return pm(h, w, std::vector<double>(static_cast<std::size_t>(h) * w, v));
}

ProbMap random_map(int h, int w, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(h) * w);
    for (double& x : v) x = rng.u01();
    return pm(h, w, std::move(v));
}

// The documented aggregation: accumulate ascending, then scale once.
ProbMap reference_mean(const std::vector<ProbMap>& members) {
    ProbMap mean = members.front();
    for (std::size_t m = 1; m < members.size(); ++m)
        for (std::size_t i = 0; i < mean.probs.size(); ++i) mean.probs[i] += members[m].probs[i];
    for (double& v : mean.probs) v *= 1.0 / static_cast<double>(members.size());
    return mean;
}

Tensor random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::uniform({h, w}, rng, 0.0, 1.0);
}

constexpr double kLn2 = 0.69314718055994530941723212145818;

} // namespace

TEST_CASE("ensemble_predict averages members in document order") {
    EnsembleModel ens;
    for (int m = 0; m < 3; ++m) ens.members.push_back(make_segnet({1, 2}, 0.0, 100 + m));
    Tensor img = random_image(16, 16, 9);

    EnsemblePrediction pred = ensemble_predict(ens, img);
    REQUIRE(pred.members.size() == 3);
    for (int m = 0; m < 3; ++m)
        CHECK(pred.members[m].probs == predict_prob(ens.members[m], img).probs);

    const ProbMap want = reference_mean(pred.members);
    CHECK(pred.mean.probs == want.probs); // exact, same summation order
    CHECK(pred.mean.provenance == Provenance::ensemble_mean);
    CHECK(pred.mean.sources == 3);
}

TEST_CASE("ensemble_predict identities") {
    SUBCASE("single member is passed through") {
        EnsembleModel ens;
        ens.members.push_back(make_segnet({1, 2}, 0.0, 5));
        Tensor img = random_image(16, 16, 2);
        EnsemblePrediction pred = ensemble_predict(ens, img);
        CHECK(pred.mean.probs == pred.members[0].probs);
    }
    SUBCASE("two identical members reproduce the member map") {
        EnsembleModel ens;
        ens.members.push_back(make_segnet({1, 2}, 0.0, 5));
        ens.members.push_back(make_segnet({1, 2}, 0.0, 5));
        Tensor img = random_image(16, 16, 2);
        EnsemblePrediction pred = ensemble_predict(ens, img);
        CHECK(pred.mean.probs == pred.members[0].probs);
    }
    SUBCASE("pixelwise: 0.2 and 0.6 average to 0.4") {
        const ProbMap a = constant_map(2, 2, 0.2);
        const ProbMap b = constant_map(2, 2, 0.6);
        const ProbMap mean = reference_mean({a, b});
        for (double v : mean.probs) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
    }
}

TEST_CASE("ensemble_predict contract violations") {
    EnsembleModel empty;
    CHECK_THROWS_AS((void)ensemble_predict(empty, random_image(16, 16, 1)), ContractError);

    EnsembleModel train_mode;
    train_mode.members.push_back(make_segnet({1, 2}, 0.0, 1));
    train_mode.members.back().mode = Mode::train;
    CHECK_THROWS_AS((void)ensemble_predict(train_mode, random_image(16, 16, 1)), ContractError);

    EnsembleModel mixed;
    mixed.members.push_back(make_segnet({1, 2}, 0.0, 1));
    mixed.members.push_back(make_segnet({1, 4}, 0.0, 1));
    CHECK_THROWS_AS((void)ensemble_predict(mixed, random_image(16, 16, 1)), ContractError);
}

TEST_CASE("mcd_predict is seed-deterministic with derived per-pass seeds") {
    SegNet net = make_segnet({1, 2}, 0.3, 21);
    Tensor img = random_image(16, 16, 6);

    EnsemblePrediction a = mcd_predict(net, img, 10, 77);
    EnsemblePrediction b = mcd_predict(net, img, 10, 77);
    REQUIRE(a.members.size() == 10);
    CHECK(a.mean.probs == b.mean.probs);
    for (int k = 0; k < 10; ++k) CHECK(a.members[k].probs == b.members[k].probs);
    CHECK(a.mean.provenance == Provenance::mcd_mean);
    CHECK(a.mean.sources == 10);

    // Pass k must equal a single forward with rng seeded at seed + k.
    for (int k : {0, 3, 9}) {
        Rng pass_rng(77 + static_cast<std::uint64_t>(k));
        const std::vector<double> manual = sigmoid(forward(net, img, &pass_rng).logits).data();
        CHECK(a.members[static_cast<std::size_t>(k)].probs == manual);
    }

    EnsemblePrediction one = mcd_predict(net, img, 1, 33);
    CHECK(one.mean.probs == one.members[0].probs);

    EnsemblePrediction other = mcd_predict(net, img, 10, 78);
    CHECK(a.mean.probs != other.mean.probs);
}

TEST_CASE("mcd_predict contract violations") {
    Tensor img = random_image(16, 16, 6);
    SegNet det = make_segnet({1, 2}, 0.0, 1);
    CHECK_THROWS_AS((void)mcd_predict(det, img, 10, 1), ContractError);

    SegNet net = make_segnet({1, 2}, 0.3, 1);
    CHECK_THROWS_AS((void)mcd_predict(net, img, 0, 1), ContractError);
    net.mode = Mode::train;
    CHECK_THROWS_AS((void)mcd_predict(net, img, 10, 1), ContractError);
}

TEST_CASE("10-pass MCD mean sits within Monte-Carlo noise of a 10000-pass mean") {
    SegNet net = make_segnet({1, 2}, 0.4, 13);
    Tensor img = random_image(8, 8, 14);

    const EnsemblePrediction small = mcd_predict(net, img, 10, 500);
    const EnsemblePrediction big = mcd_predict(net, img, 10000, 500);

    const std::size_t n = big.mean.probs.size();
    std::vector<double> sq(n, 0.0);
    for (const ProbMap& pass : big.members)
        for (std::size_t i = 0; i < n; ++i) sq[i] += pass.probs[i] * pass.probs[i];
    for (std::size_t i = 0; i < n; ++i) {
        const double mu = big.mean.probs[i];
        const double var = sq[i] / static_cast<double>(big.members.size()) - mu * mu;
        const double sigma = std::sqrt(std::max(0.0, var));
        const double bound = 4.0 * sigma / std::sqrt(10.0) + 1e-12;
        CHECK(std::fabs(small.mean.probs[i] - mu) <= bound);
    }
}

TEST_CASE("predictive entropy values") {
    const ProbMap p = pm(1, 4, {0.5, 0.0, 1.0, 0.25});
    UncertaintyMap u = predictive_entropy(p);
    CHECK(u.measure == Measure::entropy);
    CHECK(u.values[0] == doctest::Approx(kLn2).epsilon(1e-15));
    CHECK(u.values[1] == 0.0);
    CHECK(u.values[2] == 0.0);
    CHECK(u.values[3] == doctest::Approx(0.5623351446188083).epsilon(1e-14));

    Rng rng(8);
    UncertaintyMap r = predictive_entropy(random_map(16, 16, rng));
    for (double v : r.values) {
        CHECK(v >= 0.0);
        CHECK(v <= kLn2 + 1e-15);
    }

    // Agreement with the standalone reference formula.
    for (int i = 0; i < 100; ++i) {
        const double x = rng.u01();
        CHECK(predictive_entropy(pm(1, 1, {x})).values[0] ==
              doctest::Approx(refimpl::entropy(x)).epsilon(1e-13));
    }
}

TEST_CASE("member variance is the population variance") {
    SUBCASE("identical members give exact zero when the mean is exact") {
        // With 4 members the 1/M scaling is a power of two, so mean == member.
        const ProbMap a = constant_map(2, 3, 0.37);
        UncertaintyMap u4 = member_variance({a, a, a, a});
        for (double v : u4.values) CHECK(v == 0.0);
        // Odd counts can leave one rounding step in the mean.
        UncertaintyMap u3 = member_variance({a, a, a});
        for (double v : u3.values) CHECK(v <= 1e-30);
    }
    SUBCASE("a {0,1} pixel pair gives 0.25") {
        UncertaintyMap u = member_variance({constant_map(1, 1, 0.0), constant_map(1, 1, 1.0)});
        CHECK(u.values[0] == 0.25);
    }
    SUBCASE("a single member has zero variance") {
        Rng rng(3);
        UncertaintyMap u = member_variance({random_map(4, 4, rng)});
        for (double v : u.values) CHECK(v == 0.0);
    }
    SUBCASE("bounded by 0.25 and matches a direct two-pass computation") {
        Rng rng(5);
        std::vector<ProbMap> members;
        for (int m = 0; m < 5; ++m) members.push_back(random_map(4, 4, rng));
        UncertaintyMap u = member_variance(members);
        CHECK(u.measure == Measure::variance);
        for (std::size_t i = 0; i < u.values.size(); ++i) {
            double mu = 0.0;
            for (const ProbMap& p : members) mu += p.probs[i];
            mu /= 5.0;
            double var = 0.0;
            for (const ProbMap& p : members) var += (p.probs[i] - mu) * (p.probs[i] - mu);
            var /= 5.0;
            CHECK(u.values[i] == doctest::Approx(var).epsilon(1e-14));
            CHECK(u.values[i] >= 0.0);
            CHECK(u.values[i] <= 0.25 + 1e-15);
        }
    }
    SUBCASE("contract violations") {
        CHECK_THROWS_AS((void)member_variance({}), ContractError);
        CHECK_THROWS_AS((void)member_variance({constant_map(2, 2, 0.5), constant_map(2, 3, 0.5)}),
                        DimensionError);
    }
}

TEST_CASE("mutual information isolates disagreement") {
    SUBCASE("identical members give exact zero") {
        const ProbMap a = constant_map(2, 2, 0.731);
        UncertaintyMap u = mutual_information(a, {a, a, a});
        for (double v : u.values) CHECK(v == 0.0);
    }
    SUBCASE("opposite deterministic members give ln 2") {
        const ProbMap zero = constant_map(1, 2, 0.0);
        const ProbMap one = constant_map(1, 2, 1.0);
        UncertaintyMap u = mutual_information(constant_map(1, 2, 0.5), {zero, one});
        for (double v : u.values) CHECK(std::fabs(v - kLn2) < 1e-15);
    }
    SUBCASE("agreeing maximum-entropy members give zero") {
        const ProbMap half = constant_map(2, 2, 0.5);
        UncertaintyMap u = mutual_information(half, {half, half});
        for (double v : u.values) CHECK(v == 0.0);
    }
    SUBCASE("mean/members inconsistency is rejected") {
        const ProbMap a = constant_map(1, 1, 0.4);
        const ProbMap b = constant_map(1, 1, 0.6);
        CHECK_THROWS_AS((void)mutual_information(constant_map(1, 1, 0.52), {a, b}), ContractError);
        CHECK_THROWS_AS((void)mutual_information({}, {}), ContractError);
    }
}

TEST_CASE("mutual information decomposition bounds hold on random ensembles") {
    Rng rng(991);
    for (int m_count : {2, 5, 10}) {
        std::vector<ProbMap> members;
        for (int m = 0; m < m_count; ++m) members.push_back(random_map(25, 40, rng)); // 1000 pixels
        const ProbMap mean = reference_mean(members);
        UncertaintyMap mi = mutual_information(mean, members);
        UncertaintyMap h = predictive_entropy(mean);
        for (std::size_t i = 0; i < mi.values.size(); ++i) {
            CHECK(mi.values[i] >= 0.0);
            CHECK(mi.values[i] <= h.values[i] + 1e-12);
            CHECK(mi.values[i] <= kLn2 + 1e-12);
        }
    }
}

TEST_CASE("mean and MI are member-permutation invariant within tolerance") {
    Rng rng(12);
    std::vector<ProbMap> members;
    for (int m = 0; m < 6; ++m) members.push_back(random_map(8, 8, rng));
    std::vector<ProbMap> shuffled = {members[4], members[1], members[5],
                                     members[0], members[3], members[2]};

    const ProbMap mean_a = reference_mean(members);
    const ProbMap mean_b = reference_mean(shuffled);
    for (std::size_t i = 0; i < mean_a.probs.size(); ++i)
        CHECK(std::fabs(mean_a.probs[i] - mean_b.probs[i]) < 1e-15);

    UncertaintyMap mi_a = mutual_information(mean_a, members);
    UncertaintyMap mi_b = mutual_information(mean_b, shuffled);
    for (std::size_t i = 0; i < mi_a.values.size(); ++i)
        CHECK(std::fabs(mi_a.values[i] - mi_b.values[i]) < 1e-15);
}

TEST_CASE("binary entropy is concave") {
    Rng rng(77);
    for (int it = 0; it < 1000; ++it) {
        const double p = rng.u01(), q = rng.u01();
        const double lhs = refimpl::entropy(0.5 * (p + q));
        const double rhs = 0.5 * (refimpl::entropy(p) + refimpl::entropy(q));
        CHECK(lhs >= rhs - 1e-12);
    }
}
