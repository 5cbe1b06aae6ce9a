#include "uqd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uqd/train.hpp"

namespace uqd {

namespace {

Tensor one_minus(const Tensor& x) { return affine(x, -1.0, 1.0); }

// Cosine similarity of two representation vectors as a scalar graph node.
Tensor cosine_sim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("crd_loss: representation length mismatch");
    Tensor na = sqrt_elem(sum(mul(a, a)));
    Tensor nb = sqrt_elem(sum(mul(b, b)));
    if (na.item() == 0.0 || nb.item() == 0.0)
        throw NumericError("crd_loss: zero-norm representation, cosine undefined");
    return div(sum(mul(a, b)), mul(na, nb));
}

} // namespace

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
    if (!p.defined() || !q.defined()) throw ContractError("kl_divergence: undefined input");
    if (p.shape() != q.shape()) throw DimensionError("kl_divergence: shape mismatch");
    Tensor fg = mul(p, sub(log_clamped(p), log_clamped(q)));
    Tensor bg = mul(one_minus(p), sub(log_clamped(one_minus(p)), log_clamped(one_minus(q))));
    return mean(add(fg, bg));
}

double kl_divergence(const ProbMap& p, const ProbMap& q) {
    check_same_extent("kl_divergence", p.h, p.w, q.h, q.w);
    auto logc = [](double v) { return std::log(v > kLogFloor ? v : kLogFloor); };
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p.probs[i], qi = q.probs[i];
        s += pi * (logc(pi) - logc(qi)) + (1.0 - pi) * (logc(1.0 - pi) - logc(1.0 - qi));
    }
    return s / static_cast<double>(p.size());
}

Tensor crd_loss(const std::vector<Representation>& student,
                const std::vector<Representation>& teacher, double temperature) {
    if (temperature <= 0.0) throw ContractError("crd_loss: temperature must be positive");
    const std::size_t n = student.size();
    if (n == 0) throw ContractError("crd_loss: empty batch");
    if (teacher.size() != n)
        throw ContractError("crd_loss: student/teacher batch size mismatch");

    const double inv_t = 1.0 / temperature;
    std::vector<Tensor> item_losses;
    item_losses.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Tensor> row;
        row.reserve(n);
        Tensor positive;
        for (std::size_t j = 0; j < n; ++j) {
            Tensor s = affine(cosine_sim(student[i].vec, teacher[j].vec), inv_t, 0.0);
            if (j == i) positive = s;
            row.push_back(std::move(s));
        }
        item_losses.push_back(sub(logsumexp(concat1d(row)), positive));
    }
    return mean(concat1d(item_losses));
}

Tensor crd_total_loss(const std::vector<Representation>& student,
                      const std::vector<std::vector<Representation>>& per_teacher,
                      double temperature) {
    if (per_teacher.empty()) throw ContractError("crd_total_loss: no teachers");
    Tensor total = crd_loss(student, per_teacher[0], temperature);
    for (std::size_t m = 1; m < per_teacher.size(); ++m)
        total = add(total, crd_loss(student, per_teacher[m], temperature));
    return total;
}

TeacherTargets precompute_teacher_targets(const EnsembleModel& teachers,
                                          const std::vector<Tensor>& images,
                                          const DistillConfig& cfg) {
    if (teachers.members.empty()) throw ContractError("precompute_teacher_targets: no teachers");
    const bool want_mean = cfg.mode == DistillMode::kl || cfg.mode == DistillMode::kl_crd;
    const bool want_reps = cfg.mode == DistillMode::crd || cfg.mode == DistillMode::kl_crd;

    TeacherTargets t;
    if (want_mean) {
        t.mean_probs.reserve(images.size());
        for (const Tensor& img : images) {
            ProbMap mean = ensemble_predict(teachers, img).mean;
            t.mean_probs.push_back(
                Tensor::from_data({mean.h, mean.w}, std::move(mean.probs)));
        }
    }
    if (want_reps) {
        t.reps.resize(teachers.members.size());
        for (std::size_t m = 0; m < teachers.members.size(); ++m) {
            t.reps[m].reserve(images.size());
            for (const Tensor& img : images) {
                Representation rep = forward(teachers.members[m], img).rep;
                rep.source = static_cast<int>(m);
                t.reps[m].push_back(std::move(rep));
            }
        }
    }
    return t;
}

LossBreakdown distill_step(SegNet& student,
                           const std::vector<Tensor>& images,
                           const std::vector<Mask>& masks,
                           const std::vector<int>& batch_indices,
                           const TeacherTargets& targets,
                           const DistillConfig& cfg,
                           Rng* dropout_rng) {
    if (student.mode != Mode::train) throw ContractError("distill_step: student must be train-mode");
    if (batch_indices.empty()) throw ContractError("distill_step: empty batch");
    if (cfg.task_loss_weight < 0.0)
        throw ContractError("distill_step: task_loss_weight must be >= 0");
    const bool use_kl = cfg.mode == DistillMode::kl || cfg.mode == DistillMode::kl_crd;
    const bool use_crd = cfg.mode == DistillMode::crd || cfg.mode == DistillMode::kl_crd;
    const bool use_task = cfg.task_loss_weight > 0.0;

    GradTape tape;
    TapeScope scope(tape);

    std::vector<Tensor> kl_parts, task_parts;
    std::vector<Representation> student_reps;
    for (int idx : batch_indices) {
        const Tensor& img = images.at(static_cast<std::size_t>(idx));
        ForwardResult fwd = forward(student, img, dropout_rng);
        Tensor q = sigmoid(fwd.logits);
        if (use_kl)
            kl_parts.push_back(
                kl_divergence(targets.mean_probs.at(static_cast<std::size_t>(idx)), q));
        if (use_crd) student_reps.push_back(std::move(fwd.rep));
        if (use_task)
            task_parts.push_back(
                bce_loss(q, mask_to_tensor(masks.at(static_cast<std::size_t>(idx)))));
    }

    LossBreakdown out;
    Tensor total;
    auto add_term = [&total](const Tensor& term) {
        total = total.defined() ? add(total, term) : term;
    };

    if (use_kl) {
        Tensor kl = mean(concat1d(kl_parts));
        out.kl_term = kl.item();
        out.has_kl = true;
        add_term(kl);
    }
    if (use_crd) {
        std::vector<std::vector<Representation>> teacher_batch(targets.reps.size());
        for (std::size_t m = 0; m < targets.reps.size(); ++m)
            for (int idx : batch_indices)
                teacher_batch[m].push_back(targets.reps[m].at(static_cast<std::size_t>(idx)));
        Tensor crd = crd_total_loss(student_reps, teacher_batch, cfg.temperature);
        out.crd_term = crd.item();
        out.has_crd = true;
        add_term(crd);
    }
    if (use_task) {
        Tensor task = mean(concat1d(task_parts));
        out.task_term = task.item();
        out.has_task = true;
        add_term(affine(task, cfg.task_loss_weight, 0.0));
    }

    out.total = total.item();
    if (!std::isfinite(out.total) || (out.has_kl && !std::isfinite(out.kl_term)) ||
        (out.has_crd && !std::isfinite(out.crd_term)) ||
        (out.has_task && !std::isfinite(out.task_term)))
        throw NumericError("distill_step: non-finite loss term");

    tape.backward(total);
    return out;
}

SegNet distill_train(const std::vector<Tensor>& images,
                     const std::vector<Mask>& masks,
                     const EnsembleModel& teachers,
                     const DistillConfig& dcfg, const TrainConfig& tcfg,
                     const ArchConfig& arch, double dropout_rate,
                     std::vector<DistillLogRow>* log) {
    check_train_config(tcfg);
    if (images.empty()) throw ContractError("distill_train: empty training set");
    if (images.size() != masks.size())
        throw ContractError("distill_train: image/mask count mismatch");
    if (teachers.size() < 1) throw ContractError("distill_train: no teachers");

    TeacherTargets targets = precompute_teacher_targets(teachers, images, dcfg);

    SegNet student = make_segnet(arch, dropout_rate, mix64(tcfg.seed, 0));
    student.mode = Mode::train;
    set_trainable(student, true);
    Rng drop_rng(mix64(tcfg.seed, 1));

    AdamState opt;
    opt.init(student);

    const int n = static_cast<int>(images.size());
    const long long steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
    const long long total_steps = steps_per_epoch * tcfg.epochs;

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    long long t = 0;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng shuffle_rng(mix64(tcfg.seed, 2 + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (int start = 0; start < n; start += tcfg.batch_size) {
            const int stop = std::min(n, start + tcfg.batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + stop);

            Rng* rng = student.dropout_rate > 0.0 ? &drop_rng : nullptr;
            LossBreakdown lb = distill_step(student, images, masks, batch, targets, dcfg, rng);

            const double lr_t = cosine_lr(t, total_steps, tcfg.lr_init, tcfg.eta_min);
            adam_step(student, opt, lr_t, tcfg.weight_decay);
            if (log) log->push_back({epoch, t, lr_t, lb});
            ++t;
        }
    }

    student.mode = Mode::eval;
    set_trainable(student, false);
    return student;
}

} // namespace uqd
