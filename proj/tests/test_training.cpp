#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "uqd/errors.hpp"
#include "uqd/metrics.hpp"
#include "uqd/rng.hpp"
#include "uqd/segnet.hpp"
#include "uqd/tensor.hpp"
#include "uqd/train.hpp"

using namespace uqd;

namespace {

Tensor random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    for (auto& x : v) x = rng.u01();
    return Tensor::from_data({h, w}, std::move(v));
}

Mask random_mask(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Mask m;
    m.h = h;
    m.w = w;
    m.v.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    for (auto& b : m.v) b = rng.bernoulli(0.5) ? 1 : 0;
    return m;
}

} // namespace

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    const double lr = 1e-3;
    CHECK(cosine_lr(0, 100, lr, 0.0) == lr);
    CHECK(cosine_lr(100, 100, lr, 0.0) == 0.0);
    CHECK(cosine_lr(50, 100, lr, 0.0) == doctest::Approx(lr / 2.0).epsilon(1e-12));

    const double eta = 2e-4;
    CHECK(cosine_lr(0, 64, lr, eta) == doctest::Approx(lr).epsilon(1e-15));
    CHECK(cosine_lr(64, 64, lr, eta) == doctest::Approx(eta).epsilon(1e-15));
    CHECK(cosine_lr(32, 64, lr, eta) == doctest::Approx((lr + eta) / 2.0).epsilon(1e-12));
}

TEST_CASE("cosine schedule is monotone non-increasing over the horizon") {
    double prev = cosine_lr(0, 200, 5e-3, 1e-5);
    for (long long t = 1; t <= 200; ++t) {
        const double cur = cosine_lr(t, 200, 5e-3, 1e-5);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
}

TEST_CASE("cosine schedule rejects steps outside the horizon") {
    CHECK_THROWS_AS((void)cosine_lr(101, 100, 1e-3, 0.0), ContractError);
    CHECK_THROWS_AS((void)cosine_lr(-1, 100, 1e-3, 0.0), ContractError);
    CHECK_THROWS_AS((void)cosine_lr(0, 0, 1e-3, 0.0), ContractError);
}

TEST_CASE("training config validation") {
    TrainConfig good;
    CHECK_NOTHROW(check_train_config(good));

    TrainConfig c = good;
    c.epochs = 0;
    CHECK_THROWS_AS(check_train_config(c), ContractError);

    c = good;
    c.batch_size = 0;
    CHECK_THROWS_AS(check_train_config(c), ContractError);

    c = good;
    c.lr_init = 0.0;
    CHECK_THROWS_AS(check_train_config(c), ContractError);

    c = good;
    c.lr_init = -1e-4;
    CHECK_THROWS_AS(check_train_config(c), ContractError);

    c = good;
    c.weight_decay = -1e-6;
    CHECK_THROWS_AS(check_train_config(c), ContractError);

    c = good;
    c.eta_min = c.lr_init * 2.0;
    CHECK_THROWS_AS(check_train_config(c), ContractError);
}

TEST_CASE("binary cross-entropy point values") {
    Tensor p1 = Tensor::from_data({2}, {1.0, 0.0});
    Tensor y1 = Tensor::from_data({2}, {1.0, 0.0});
    CHECK(bce_loss(p1, y1).item() == 0.0);

    Tensor ph = Tensor::from_data({4}, {0.5, 0.5, 0.5, 0.5});
    Tensor yh = Tensor::from_data({4}, {1.0, 0.0, 1.0, 0.0});
    CHECK(bce_loss(ph, yh).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));

    Tensor bad = Tensor::from_data({3}, {0.5, 0.5, 0.5});
    CHECK_THROWS_AS((void)bce_loss(bad, y1), DimensionError);
}

TEST_CASE("binary cross-entropy equals the negative log-likelihood metric") {
    // Same clamp floor, same per-pixel mean; only the module differs.
    Rng rng(404);
    for (int rep = 0; rep < 50; ++rep) {
        const int h = rng.uniform_int(3, 8);
        const int w = rng.uniform_int(3, 8);
        const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
        std::vector<double> pv(n);
        Mask gt;
        gt.h = h;
        gt.w = w;
        gt.v.resize(n);
        std::vector<double> yv(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Include exactly-saturated probabilities so the clamp path is shared too.
            const double roll = rng.u01();
            pv[i] = roll < 0.05 ? 0.0 : (roll < 0.1 ? 1.0 : rng.u01());
            gt.v[i] = rng.bernoulli(0.5) ? 1 : 0;
            yv[i] = static_cast<double>(gt.v[i]);
        }
        ProbMap pm;
        pm.h = h;
        pm.w = w;
        pm.probs = pv;
        Tensor pt = Tensor::from_data({h, w}, std::move(pv));
        Tensor yt = Tensor::from_data({h, w}, std::move(yv));
        CHECK(bce_loss(pt, yt).item() == doctest::Approx(nll(pm, gt)).epsilon(1e-12));
    }
}

TEST_CASE("mask_to_tensor copies bytes as exact doubles") {
    Mask m;
    m.h = 2;
    m.w = 3;
    m.v = {0, 1, 1, 0, 0, 1};
    Tensor t = mask_to_tensor(m);
    REQUIRE(t.shape() == std::vector<int>{2, 3});
    for (std::size_t i = 0; i < m.v.size(); ++i)
        CHECK(t.data()[i] == static_cast<double>(m.v[i]));
}

TEST_CASE("optimizer leaves parameters alone when gradients and decay are zero") {
    SegNet net = make_segnet(ArchConfig{1, 2}, 0.0, 11);
    set_trainable(net, true);
    std::vector<std::vector<double>> before;
    for (const auto& [name, p] : net.params) before.push_back(p.data());

    AdamState opt;
    opt.init(net);
    adam_step(net, opt, 1e-2, 0.0);

    for (std::size_t k = 0; k < net.params.size(); ++k)
        CHECK(net.params[k].second.data() == before[k]);
    CHECK(opt.t == 1);
}

TEST_CASE("first optimizer step moves each weight by -lr times the gradient sign") {
    // After bias correction the first update is lr * g / (|g| + eps).
    SegNet net = make_segnet(ArchConfig{1, 2}, 0.0, 12);
    set_trainable(net, true);
    std::vector<std::vector<double>> before;
    for (const auto& [name, p] : net.params) before.push_back(p.data());

    std::vector<double> slope(net.params.size());
    {
        GradTape tape;
        TapeScope scope(tape);
        Tensor total = Tensor::scalar(0.0);
        for (std::size_t k = 0; k < net.params.size(); ++k) {
            slope[k] = (k % 2 == 0 ? 1.0 : -1.0) * (0.5 + static_cast<double>(k));
            total = add(total, affine(sum(net.params[k].second), slope[k], 0.0));
        }
        tape.backward(total);
    }

    AdamState opt;
    opt.init(net);
    const double lr = 1e-3;
    adam_step(net, opt, lr, 0.0);

    for (std::size_t k = 0; k < net.params.size(); ++k) {
        const double expected = -lr * (slope[k] > 0.0 ? 1.0 : -1.0);
        const std::vector<double>& after = net.params[k].second.data();
        for (std::size_t i = 0; i < after.size(); ++i)
            CHECK(after[i] - before[k][i] == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("weight decay alone pushes weights toward zero") {
    SegNet net = make_segnet(ArchConfig{1, 2}, 0.0, 13);
    set_trainable(net, true);
    std::vector<std::vector<double>> before;
    for (const auto& [name, p] : net.params) before.push_back(p.data());

    AdamState opt;
    opt.init(net);
    const double lr = 1e-3;
    adam_step(net, opt, lr, 1e-2);

    for (std::size_t k = 0; k < net.params.size(); ++k) {
        const std::vector<double>& after = net.params[k].second.data();
        for (std::size_t i = 0; i < after.size(); ++i) {
            if (std::abs(before[k][i]) < 1e-3) continue;
            const double delta = after[i] - before[k][i];
            // Decayed gradient is wd * theta, so the step opposes theta's sign.
            CHECK(delta * before[k][i] < 0.0);
            CHECK(std::abs(delta) <= lr * (1.0 + 1e-6));
        }
    }
}

TEST_CASE("optimizer rejects non-finite gradients and mismatched state") {
    SegNet net = make_segnet(ArchConfig{1, 2}, 0.0, 14);
    set_trainable(net, true);

    AdamState empty_state;
    CHECK_THROWS_AS(adam_step(net, empty_state, 1e-3, 0.0), ContractError);

    {
        GradTape tape;
        TapeScope scope(tape);
        Tensor total = Tensor::scalar(0.0);
        for (auto& [name, p] : net.params)
            total = add(total, affine(sum(p), std::numeric_limits<double>::infinity(), 0.0));
        tape.backward(total);
    }
    AdamState opt;
    opt.init(net);
    CHECK_THROWS_AS(adam_step(net, opt, 1e-3, 0.0), NumericError);
}

TEST_CASE("training is deterministic in the seed") {
    std::vector<Tensor> images;
    std::vector<Mask> masks;
    for (int i = 0; i < 4; ++i) {
        images.push_back(random_image(8, 8, 900 + static_cast<std::uint64_t>(i)));
        masks.push_back(random_mask(8, 8, 950 + static_cast<std::uint64_t>(i)));
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.lr_init = 1e-3;
    cfg.seed = 0;
    ArchConfig arch{1, 2};

    SegNet a = train_member(images, masks, cfg, 42, arch, 0.0);
    SegNet b = train_member(images, masks, cfg, 42, arch, 0.0);
    CHECK(param_checksum(a) == param_checksum(b));
    for (std::size_t k = 0; k < a.params.size(); ++k)
        CHECK(a.params[k].second.data() == b.params[k].second.data());

    SegNet c = train_member(images, masks, cfg, 43, arch, 0.0);
    CHECK(param_checksum(a) != param_checksum(c));

    // Dropout draws are seeded too, so a stochastic regulariser stays reproducible.
    SegNet d1 = train_member(images, masks, cfg, 42, arch, 0.3);
    SegNet d2 = train_member(images, masks, cfg, 42, arch, 0.3);
    CHECK(param_checksum(d1) == param_checksum(d2));
    CHECK(param_checksum(d1) != param_checksum(a));
}

TEST_CASE("training returns an eval-mode frozen network") {
    std::vector<Tensor> images{random_image(8, 8, 77)};
    std::vector<Mask> masks{random_mask(8, 8, 78)};
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    cfg.lr_init = 1e-3;

    SegNet net = train_member(images, masks, cfg, 5, ArchConfig{1, 2}, 0.0);
    CHECK(net.mode == Mode::eval);
    for (const auto& [name, p] : net.params) CHECK_FALSE(p.requires_grad());
    CHECK_NOTHROW((void)predict_prob(net, images[0]));
}

TEST_CASE("loss on one memorised image falls by at least 5x over 200 steps") {
    // A bright square on a dark background: learnable structure, as in real data.
    Rng rng(322);
    Mask square;
    square.h = 16;
    square.w = 16;
    square.v.resize(256);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            square.v[static_cast<std::size_t>(y) * 16 + x] =
                (x >= 4 && x < 12 && y >= 4 && y < 12) ? 1 : 0;
    std::vector<double> vals(256);
    for (std::size_t i = 0; i < 256; ++i) {
        const double v = 0.2 + 0.6 * square.v[i] + 0.05 * rng.normal();
        vals[i] = std::min(1.0, std::max(0.0, v));
    }
    std::vector<Tensor> images{Tensor::from_data({16, 16}, std::move(vals))};
    std::vector<Mask> masks{square};

    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 1;
    cfg.lr_init = 3e-3;

    std::vector<TrainLogRow> log;
    SegNet net = train_member(images, masks, cfg, 9, ArchConfig{1, 4}, 0.0, &log);
    REQUIRE(log.size() == 200);
    CHECK(log.front().loss > 0.0);
    CHECK(log.back().loss < log.front().loss / 5.0);

    ProbMap q = predict_prob(net, images[0]);
    CHECK(nll(q, masks[0]) == doctest::Approx(log.back().loss).epsilon(0.5));
}

TEST_CASE("training log covers every step with the scheduled learning rate") {
    std::vector<Tensor> images;
    std::vector<Mask> masks;
    for (int i = 0; i < 5; ++i) {
        images.push_back(random_image(8, 8, 100 + static_cast<std::uint64_t>(i)));
        masks.push_back(random_mask(8, 8, 200 + static_cast<std::uint64_t>(i)));
    }
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.lr_init = 2e-3;
    cfg.eta_min = 1e-4;

    std::vector<TrainLogRow> log;
    (void)train_member(images, masks, cfg, 1, ArchConfig{1, 2}, 0.0, &log);

    // 5 images, batches of 2: 3 steps per epoch, 4 epochs.
    const long long total = 12;
    REQUIRE(log.size() == static_cast<std::size_t>(total));
    for (long long t = 0; t < total; ++t) {
        const TrainLogRow& row = log[static_cast<std::size_t>(t)];
        CHECK(row.step == t);
        CHECK(row.epoch == static_cast<int>(t / 3));
        CHECK(row.lr == cosine_lr(t, total, cfg.lr_init, cfg.eta_min));
        CHECK(std::isfinite(row.loss));
        CHECK(row.loss >= 0.0);
    }
}

TEST_CASE("training rejects malformed datasets") {
    std::vector<Tensor> images{random_image(8, 8, 1)};
    std::vector<Mask> masks{random_mask(8, 8, 2), random_mask(8, 8, 3)};
    TrainConfig cfg;
    cfg.epochs = 1;

    CHECK_THROWS_AS((void)train_member({}, {}, cfg, 0, ArchConfig{1, 2}, 0.0), ContractError);
    CHECK_THROWS_AS((void)train_member(images, masks, cfg, 0, ArchConfig{1, 2}, 0.0),
                    ContractError);

    TrainConfig bad = cfg;
    bad.epochs = 0;
    std::vector<Mask> one{masks[0]};
    CHECK_THROWS_AS((void)train_member(images, one, bad, 0, ArchConfig{1, 2}, 0.0),
                    ContractError);
}
