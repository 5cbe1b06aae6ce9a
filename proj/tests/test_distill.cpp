#include "doctest.h"

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "uqd/distill.hpp"
#include "uqd/train.hpp"

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

Representation rep(std::vector<double> v) {
    Representation r;
    const int n = static_cast<int>(v.size());
    r.vec = Tensor::from_data({n}, std::move(v));
    return r;
}

Tensor random_image(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::uniform({h, w}, rng, 0.0, 1.0);
}

Mask random_mask(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Mask m;
    m.h = h;
    m.w = w;
    m.v.resize(static_cast<std::size_t>(h) * std::size_t(w));
    for (auto& b : m.v) b = rng.bernoulli(0.4) ? 1 : 0;
    return m;
}

constexpr double kLn2 = 0.69314718055994530941723212145818;

} // namespace

TEST_CASE("kl_divergence point values") {
    CHECK(kl_divergence(constant_map(1, 1, 1.0), constant_map(1, 1, 0.5)) ==
          doctest::Approx(kLn2).epsilon(1e-12));

    // Asymmetry, both directions pinned to independently computed values.
    const double forward_dir = kl_divergence(constant_map(1, 1, 0.9), constant_map(1, 1, 0.5));
    const double reverse_dir = kl_divergence(constant_map(1, 1, 0.5), constant_map(1, 1, 0.9));
    CHECK(forward_dir == doctest::Approx(0.3680642071684971).epsilon(1e-13));
    CHECK(reverse_dir == doctest::Approx(0.5108256237659906).epsilon(1e-13));
    CHECK(forward_dir != reverse_dir);
    CHECK(forward_dir == doctest::Approx(refimpl::kl(0.9, 0.5)).epsilon(1e-14));
    CHECK(reverse_dir == doctest::Approx(refimpl::kl(0.5, 0.9)).epsilon(1e-14));
}

TEST_CASE("kl_divergence of a map with itself is exactly zero") {
    Rng rng(4);
    std::vector<double> v(64);
    for (double& x : v) x = rng.u01();
    const ProbMap p = pm(8, 8, v);
    CHECK(kl_divergence(p, p) == 0.0);

    Tensor pt = Tensor::from_data({8, 8}, v);
    CHECK(kl_divergence(pt, pt).item() == 0.0);
}

TEST_CASE("kl_divergence is nonnegative and detects any real gap") {
    Rng rng(6);
    for (int it = 0; it < 1000; ++it) {
        const double p = rng.u01(), q = rng.u01();
        const double kl = kl_divergence(constant_map(1, 1, p), constant_map(1, 1, q));
        CHECK(kl >= 0.0);
        if (std::fabs(p - q) > 1e-3) CHECK(kl > 0.0);
        CHECK(kl == doctest::Approx(refimpl::kl(p, q)).epsilon(1e-12));
    }
}

TEST_CASE("kl_divergence overloads agree and check shapes") {
    Rng rng(14);
    std::vector<double> a(24), b(24);
    for (double& x : a) x = rng.u01();
    for (double& x : b) x = rng.u01();

    const double via_maps = kl_divergence(pm(4, 6, a), pm(4, 6, b));
    const double via_tensors =
        kl_divergence(Tensor::from_data({4, 6}, a), Tensor::from_data({4, 6}, b)).item();
    CHECK(std::fabs(via_maps - via_tensors) < 1e-14);

    CHECK_THROWS_AS((void)kl_divergence(pm(2, 2, {0.5, 0.5, 0.5, 0.5}), pm(1, 4, {0.5, 0.5, 0.5, 0.5})),
                    DimensionError);
    CHECK_THROWS_AS((void)kl_divergence(Tensor::zeros({2, 2}), Tensor::zeros({4})), DimensionError);
}

TEST_CASE("kl gradient vanishes exactly at p == q") {
    Rng rng(8);
    std::vector<double> v(16);
    for (double& x : v) x = rng.uniform(0.05, 0.95);
    Tensor p = Tensor::from_data({4, 4}, v);
    Tensor q = Tensor::from_data({4, 4}, v);
    q.set_requires_grad(true);

    GradTape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = kl_divergence(p, q);
    }
    tape.backward(loss);
    for (double g : q.grad()) CHECK(g == 0.0);
}

TEST_CASE("kl gradient passes the finite-difference check") {
    Rng rng(9);
    std::vector<double> pv(16);
    for (double& x : pv) x = rng.uniform(0.1, 0.9);
    Tensor p = Tensor::from_data({4, 4}, pv);

    auto f = [&](const Tensor& logits) { return kl_divergence(p, sigmoid(logits)); };
    CHECK(fd_gradcheck(f, Tensor::uniform({4, 4}, rng, -2.0, 2.0), 1e-5) < 1e-4);
}

TEST_CASE("crd_loss closed-form cases") {
    SUBCASE("a single pair is always zero") {
        CHECK(std::fabs(crd_loss({rep({1, 2, 3})}, {rep({-4, 0, 1})}, 0.07).item()) < 1e-15);
    }
    SUBCASE("identical teachers give ln N") {
        for (int n : {2, 4, 8}) {
            std::vector<Representation> student, teacher;
            Rng rng(50 + n);
            for (int i = 0; i < n; ++i) {
                std::vector<double> sv(6), tv = {1, 2, 3, 4, 5, 6};
                for (double& x : sv) x = rng.uniform(-1.0, 1.0);
                student.push_back(rep(sv));
                teacher.push_back(rep(tv));
            }
            const double loss = crd_loss(student, teacher, 0.07).item();
            CHECK(std::fabs(loss - std::log(static_cast<double>(n))) < 1e-10);
        }
    }
    SUBCASE("orthonormal pair at T=1") {
        const std::vector<Representation> student = {rep({1, 0, 0}), rep({0, 1, 0})};
        const std::vector<Representation> teacher = {rep({1, 0, 0}), rep({0, 1, 0})};
        const double loss = crd_loss(student, teacher, 1.0).item();
        CHECK(loss == doctest::Approx(0.3132616875182228).epsilon(1e-13));
    }
}

TEST_CASE("crd_loss matches the reference implementation on random batches") {
    Rng rng(31);
    for (double t : {0.07, 0.5, 2.0}) {
        std::vector<Representation> student, teacher;
        std::vector<std::vector<double>> sref, tref;
        for (int i = 0; i < 5; ++i) {
            std::vector<double> sv(8), tv(8);
            for (double& x : sv) x = rng.uniform(-2.0, 2.0);
            for (double& x : tv) x = rng.uniform(-2.0, 2.0);
            student.push_back(rep(sv));
            teacher.push_back(rep(tv));
            sref.push_back(sv);
            tref.push_back(tv);
        }
        CHECK(crd_loss(student, teacher, t).item() ==
              doctest::Approx(refimpl::crd(sref, tref, t)).epsilon(1e-12));
    }
}

TEST_CASE("crd_loss is invariant to positive rescaling of representations") {
    Rng rng(77);
    std::vector<Representation> student, teacher;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> sv(8), tv(8);
        for (double& x : sv) x = rng.uniform(-2.0, 2.0);
        for (double& x : tv) x = rng.uniform(-2.0, 2.0);
        student.push_back(rep(sv));
        teacher.push_back(rep(tv));
    }
    const double base = crd_loss(student, teacher, 0.07).item();

    for (double c : {0.1, 10.0}) {
        std::vector<Representation> scaled_s, scaled_t;
        for (int i = 0; i < 4; ++i) {
            scaled_s.push_back({affine(student[static_cast<std::size_t>(i)].vec, c, 0.0), -1});
            scaled_t.push_back({affine(teacher[static_cast<std::size_t>(i)].vec, c, 0.0), 0});
        }
        CHECK(std::fabs(crd_loss(scaled_s, teacher, 0.07).item() - base) < 1e-10);
        CHECK(std::fabs(crd_loss(student, scaled_t, 0.07).item() - base) < 1e-10);
    }
}

TEST_CASE("crd_loss decreases when the positive similarity rises, negatives fixed") {
    auto student_at = [](double theta) {
        return std::vector<Representation>{rep({std::cos(theta), 0.0, std::sin(theta)}),
                                           rep({0.0, 1.0, 0.0})};
    };
    const std::vector<Representation> teacher = {rep({1, 0, 0}), rep({0, 1, 0})};
    // Item 0's positive similarity is cos(theta); its negative similarity stays 0.
    const double further = crd_loss(student_at(0.6), teacher, 0.5).item();
    const double closer = crd_loss(student_at(0.3), teacher, 0.5).item();
    CHECK(closer < further);
}

TEST_CASE("crd_loss rejects degenerate inputs") {
    CHECK_THROWS_AS((void)crd_loss({rep({0, 0, 0}), rep({1, 0, 0})},
                                    {rep({1, 0, 0}), rep({0, 1, 0})}, 0.07),
                    NumericError);
    CHECK_THROWS_AS((void)crd_loss({rep({1, 0, 0}), rep({0, 1, 0})},
                                    {rep({1, 0, 0}), rep({0, 0, 0})}, 0.07),
                    NumericError);
    CHECK_THROWS_AS((void)crd_loss({rep({1, 0}), rep({0, 1})}, {rep({1, 0})}, 0.07), ContractError);
    CHECK_THROWS_AS((void)crd_loss({}, {}, 0.07), ContractError);
    CHECK_THROWS_AS((void)crd_loss({rep({1, 0})}, {rep({1, 0})}, 0.0), ContractError);
}

TEST_CASE("crd gradients pass the finite-difference check") {
    Rng rng(91);
    std::vector<Representation> teacher;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> tv(6);
        for (double& x : tv) x = rng.uniform(-2.0, 2.0);
        teacher.push_back(rep(tv));
    }
    std::vector<Representation> student;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> sv(6);
        for (double& x : sv) x = rng.uniform(-2.0, 2.0);
        student.push_back(rep(sv));
    }

    for (std::size_t k = 0; k < student.size(); ++k) {
        auto f = [&, k](const Tensor& t) {
            std::vector<Representation> probe = student;
            probe[k].vec = t;
            return crd_loss(probe, teacher, 0.5);
        };
        CHECK(fd_gradcheck(f, student[k].vec, 1e-5) < 1e-4);
    }
}

TEST_CASE("crd_total_loss sums per-teacher losses") {
    Rng rng(15);
    std::vector<Representation> student;
    std::vector<std::vector<Representation>> teachers(3);
    for (int i = 0; i < 4; ++i) {
        std::vector<double> sv(8);
        for (double& x : sv) x = rng.uniform(-2.0, 2.0);
        student.push_back(rep(sv));
        for (auto& t : teachers) {
            std::vector<double> tv(8);
            for (double& x : tv) x = rng.uniform(-2.0, 2.0);
            t.push_back(rep(tv));
        }
    }

    SUBCASE("single teacher is the identity") {
        CHECK(crd_total_loss(student, {teachers[0]}, 0.07).item() ==
              crd_loss(student, teachers[0], 0.07).item());
    }
    SUBCASE("identical teachers scale the single loss") {
        const double single = crd_loss(student, teachers[0], 0.07).item();
        const double tripled =
            crd_total_loss(student, {teachers[0], teachers[0], teachers[0]}, 0.07).item();
        CHECK(tripled == doctest::Approx(3.0 * single).epsilon(1e-12));
    }
    SUBCASE("mixed teachers add up") {
        double want = 0.0;
        for (const auto& t : teachers) want += crd_loss(student, t, 0.07).item();
        CHECK(crd_total_loss(student, teachers, 0.07).item() ==
              doctest::Approx(want).epsilon(1e-12));
    }
    SUBCASE("no teachers rejected") {
        CHECK_THROWS_AS((void)crd_total_loss(student, {}, 0.07), ContractError);
    }
}

TEST_CASE("distill_step at the kl fixed point") {
    // One teacher, student initialized to the very same parameters.
    EnsembleModel teachers;
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 123));
    SegNet student = make_segnet({1, 2}, 0.0, 123);
    student.mode = Mode::train;
    set_trainable(student, true);

    std::vector<Tensor> images = {random_image(8, 8, 1)};
    std::vector<Mask> masks = {random_mask(8, 8, 2)};
    DistillConfig cfg;
    cfg.mode = DistillMode::kl;
    cfg.task_loss_weight = 0.0;

    TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);
    LossBreakdown lb = distill_step(student, images, masks, {0}, targets, cfg);

    CHECK(lb.has_kl);
    CHECK_FALSE(lb.has_crd);
    CHECK_FALSE(lb.has_task);
    CHECK(lb.kl_term == 0.0);
    CHECK(lb.total == 0.0);
    double grad_sq = 0.0;
    for (const auto& [name, t] : student.params)
        for (double g : t.grad()) grad_sq += g * g;
    CHECK(std::sqrt(grad_sq) == 0.0);
}

TEST_CASE("distill_step composes the documented loss terms") {
    EnsembleModel teachers;
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 7));
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 8));
    const std::uint64_t before0 = param_checksum(teachers.members[0]);
    const std::uint64_t before1 = param_checksum(teachers.members[1]);

    std::vector<Tensor> images = {random_image(8, 8, 1), random_image(8, 8, 2)};
    std::vector<Mask> masks = {random_mask(8, 8, 3), random_mask(8, 8, 4)};

    SegNet student = make_segnet({1, 2}, 0.0, 99);
    student.mode = Mode::train;
    set_trainable(student, true);

    SUBCASE("kl mode with zero task weight equals the bare divergence") {
        DistillConfig cfg;
        cfg.mode = DistillMode::kl;
        cfg.task_loss_weight = 0.0;
        TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);
        LossBreakdown lb = distill_step(student, images, masks, {0, 1}, targets, cfg);

        // Reference: mean over the batch of KL(teacher mean, student probs).
        student.mode = Mode::eval;
        double want = 0.0;
        for (std::size_t i = 0; i < images.size(); ++i) {
            ProbMap mean_map;
            mean_map.h = 8;
            mean_map.w = 8;
            mean_map.probs = targets.mean_probs[i].data();
            want += kl_divergence(mean_map, predict_prob(student, images[i]));
        }
        want /= static_cast<double>(images.size());
        student.mode = Mode::train;

        CHECK(lb.kl_term == doctest::Approx(want).epsilon(1e-13));
        CHECK(lb.total == lb.kl_term);
        CHECK_FALSE(lb.has_task);
        CHECK(lb.kl_term > 0.0);
    }
    SUBCASE("task term joins when weighted") {
        DistillConfig cfg;
        cfg.mode = DistillMode::kl;
        cfg.task_loss_weight = 0.7;
        TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);
        LossBreakdown lb = distill_step(student, images, masks, {0, 1}, targets, cfg);
        CHECK(lb.has_kl);
        CHECK(lb.has_task);
        CHECK(lb.total == doctest::Approx(lb.kl_term + 0.7 * lb.task_term).epsilon(1e-14));
    }
    SUBCASE("crd mode populates the contrastive term only") {
        DistillConfig cfg;
        cfg.mode = DistillMode::crd;
        cfg.task_loss_weight = 0.0;
        TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);
        LossBreakdown lb = distill_step(student, images, masks, {0, 1}, targets, cfg);
        CHECK(lb.has_crd);
        CHECK_FALSE(lb.has_kl);
        CHECK(lb.crd_term > 0.0);
        CHECK(lb.total == lb.crd_term);
    }
    SUBCASE("combined mode carries all three terms") {
        DistillConfig cfg;
        cfg.mode = DistillMode::kl_crd;
        cfg.task_loss_weight = 1.0;
        TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);
        LossBreakdown lb = distill_step(student, images, masks, {0, 1}, targets, cfg);
        CHECK(lb.has_kl);
        CHECK(lb.has_crd);
        CHECK(lb.has_task);
        CHECK(lb.total ==
              doctest::Approx(lb.kl_term + lb.crd_term + lb.task_term).epsilon(1e-14));
    }

    CHECK(param_checksum(teachers.members[0]) == before0);
    CHECK(param_checksum(teachers.members[1]) == before1);
}

TEST_CASE("teacher targets carry sources and the ensemble mean") {
    EnsembleModel teachers;
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 11));
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 12));
    std::vector<Tensor> images = {random_image(8, 8, 5), random_image(8, 8, 6)};

    DistillConfig cfg;
    cfg.mode = DistillMode::kl_crd;
    TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);

    REQUIRE(targets.mean_probs.size() == 2);
    REQUIRE(targets.reps.size() == 2);
    for (std::size_t i = 0; i < images.size(); ++i) {
        EnsemblePrediction pred = ensemble_predict(teachers, images[i]);
        CHECK(targets.mean_probs[i].data() == pred.mean.probs);
        CHECK_FALSE(targets.mean_probs[i].requires_grad());
    }
    for (int t = 0; t < 2; ++t)
        for (std::size_t i = 0; i < images.size(); ++i) {
            CHECK(targets.reps[static_cast<std::size_t>(t)][i].source == t);
            CHECK(targets.reps[static_cast<std::size_t>(t)][i].vec.size() == 8);
        }
}

TEST_CASE("distill_step surfaces numeric failures") {
    EnsembleModel teachers;
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 7));
    std::vector<Tensor> images = {random_image(8, 8, 1)};
    std::vector<Mask> masks = {random_mask(8, 8, 2)};

    SegNet student = make_segnet({1, 2}, 0.0, 3);
    for (auto& [name, t] : student.params) t = Tensor::zeros(t.shape());
    student.mode = Mode::train;
    set_trainable(student, true);

    DistillConfig cfg;
    cfg.mode = DistillMode::crd; // zero weights make a zero-norm representation
    TeacherTargets targets = precompute_teacher_targets(teachers, images, cfg);
    CHECK_THROWS_AS((void)distill_step(student, images, masks, {0}, targets, cfg), NumericError);
}

TEST_CASE("fifty distillation steps halve the kl term on one image") {
    EnsembleModel teachers;
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 41));
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 42));

    std::vector<Tensor> images = {random_image(16, 16, 9)};
    std::vector<Mask> masks = {random_mask(16, 16, 10)};

    DistillConfig dcfg;
    dcfg.mode = DistillMode::kl;
    dcfg.task_loss_weight = 0.0;
    TrainConfig tcfg;
    tcfg.epochs = 50;
    tcfg.batch_size = 1;
    tcfg.lr_init = 3e-3;
    tcfg.seed = 5;

    std::vector<DistillLogRow> log;
    SegNet student = distill_train(images, masks, teachers, dcfg, tcfg, {1, 2}, 0.0, &log);

    REQUIRE(log.size() == 50);
    CHECK(log.front().loss.has_kl);
    CHECK(log.back().loss.kl_term < log.front().loss.kl_term / 2.0);
    CHECK(student.mode == Mode::eval);
    for (const auto& [name, t] : student.params) CHECK_FALSE(t.requires_grad());
}

TEST_CASE("distill_train is deterministic and n-teacher tolerant") {
    EnsembleModel teachers;
    teachers.members.push_back(make_segnet({1, 2}, 0.0, 61));

    std::vector<Tensor> images = {random_image(8, 8, 1), random_image(8, 8, 2)};
    std::vector<Mask> masks = {random_mask(8, 8, 3), random_mask(8, 8, 4)};

    DistillConfig dcfg;
    dcfg.mode = DistillMode::kl;
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 2;
    tcfg.lr_init = 1e-3;
    tcfg.seed = 17;

    SegNet a = distill_train(images, masks, teachers, dcfg, tcfg, {1, 2}, 0.0);
    SegNet b = distill_train(images, masks, teachers, dcfg, tcfg, {1, 2}, 0.0);
    CHECK(param_checksum(a) == param_checksum(b));

    tcfg.seed = 18;
    SegNet c = distill_train(images, masks, teachers, dcfg, tcfg, {1, 2}, 0.0);
    CHECK(param_checksum(a) != param_checksum(c));

    EnsembleModel none;
    CHECK_THROWS_AS((void)distill_train(images, masks, none, dcfg, tcfg, {1, 2}, 0.0), ContractError);
    CHECK_THROWS_AS((void)distill_train({}, {}, teachers, dcfg, tcfg, {1, 2}, 0.0), ContractError);
}
