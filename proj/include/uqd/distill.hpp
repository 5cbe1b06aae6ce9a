#ifndef UQD_DISTILL_HPP
#define UQD_DISTILL_HPP

#include <string>
#include <vector>

#include "uqd/segnet.hpp"
#include "uqd/tensor.hpp"
#include "uqd/train.hpp"
#include "uqd/uncertainty.hpp"

namespace uqd {

// Distillation objective selection. kl matches the student's probabilities
// to the ensemble mean; crd pulls the student's representation toward each
// teacher's against in-batch negatives; kl_crd combines both terms.
enum class DistillMode { kl, crd, kl_crd };

struct DistillConfig {
    DistillMode mode = DistillMode::kl;
    double temperature = 0.07;     // contrastive temperature, crd modes only
    double task_loss_weight = 1.0; // weight of the supervised BCE term
    std::vector<std::string> teacher_checkpoints;
};

// Mean over pixels of p*ln(p/q) + (1-p)*ln((1-p)/(1-q)) with logs clamped at
// kLogFloor. Nonnegative; differentiable w.r.t. whatever produced q.
Tensor kl_divergence(const Tensor& p, const Tensor& q);

// Convenience overload for already-materialized maps.
double kl_divergence(const ProbMap& p, const ProbMap& q);

// InfoNCE over cosine similarities: mean over batch items i of
//   -log( exp(sim(s_i, t_i)/T) / sum_j exp(sim(s_i, t_j)/T) ),
// log-sum-exp stabilized. The other batch items are the negatives. A
// zero-norm representation has no cosine and is a numeric error.
Tensor crd_loss(const std::vector<Representation>& student,
                const std::vector<Representation>& teacher, double temperature);

// Sum over teachers of crd_loss against each teacher's representations.
Tensor crd_total_loss(const std::vector<Representation>& student,
                      const std::vector<std::vector<Representation>>& per_teacher,
                      double temperature);

// One optimization step's loss surface. Inactive terms are marked absent
// and logged as empty CSV fields.
struct LossBreakdown {
    double kl_term = 0.0;
    double crd_term = 0.0;
    double task_term = 0.0;
    double total = 0.0;
    bool has_kl = false;
    bool has_crd = false;
    bool has_task = false;
};

// Precomputed per-image teacher outputs. Teachers are frozen, so their mean
// probability map and representations are constants of the whole run.
struct TeacherTargets {
    std::vector<Tensor> mean_probs;                 // per image, [H,W], constant
    std::vector<std::vector<Representation>> reps;  // [teacher][image]
};

TeacherTargets precompute_teacher_targets(const EnsembleModel& teachers,
                                          const std::vector<Tensor>& images,
                                          const DistillConfig& cfg);

// Builds the batch loss (distill term + task_loss_weight * BCE), runs
// backward onto the student's parameter grads, and reports each term.
// batch_indices select images/masks/targets; the student must be train-mode.
// Any non-finite term aborts with a numeric error. Teacher targets are
// read-only throughout.
LossBreakdown distill_step(SegNet& student,
                           const std::vector<Tensor>& images,
                           const std::vector<Mask>& masks,
                           const std::vector<int>& batch_indices,
                           const TeacherTargets& targets,
                           const DistillConfig& cfg,
                           Rng* dropout_rng = nullptr);

struct DistillLogRow {
    int epoch = 0;
    long long step = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

// Full student training run against a frozen teacher ensemble: same seeding,
// shuffling, batching, Adam and cosine schedule as train_member, but with
// distill_step building the loss. The negatives of the contrastive term are
// the other items of each batch. Deterministic given all arguments.
SegNet distill_train(const std::vector<Tensor>& images,
                     const std::vector<Mask>& masks,
                     const EnsembleModel& teachers,
                     const DistillConfig& dcfg, const TrainConfig& tcfg,
                     const ArchConfig& arch, double dropout_rate,
                     std::vector<DistillLogRow>* log = nullptr);

} // namespace uqd

#endif
