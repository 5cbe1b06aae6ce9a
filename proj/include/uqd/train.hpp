#ifndef UQD_TRAIN_HPP
#define UQD_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uqd/prob_map.hpp"
#include "uqd/segnet.hpp"
#include "uqd/tensor.hpp"

namespace uqd {

struct TrainConfig {
    int epochs = 70;
    int batch_size = 4;
    double lr_init = 1e-4;
    double weight_decay = 1e-5;
    double eta_min = 0.0;
    std::uint64_t seed = 0;
};

// epochs/batch_size >= 1, lr_init > 0, weight_decay >= 0,
// eta_min in [0, lr_init]; anything else is a contract error.
void check_train_config(const TrainConfig& cfg);

// Classic Adam with L2 regularization folded into the gradient before the
// moment updates (beta1 0.9, beta2 0.999, eps 1e-8).
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long long t = 0;

    void init(const SegNet& net);
};

// Mean over pixels of -[y ln p + (1-y) ln(1-p)] with clamped logs. Equals
// the NLL metric by definition; kept as a tensor graph so it trains.
Tensor bce_loss(const Tensor& p, const Tensor& y);

// Mask lifted to a 0/1 float tensor for loss graphs.
Tensor mask_to_tensor(const Mask& m);

// eta_min + 0.5*(lr_init - eta_min)*(1 + cos(pi * t / total_steps)).
double cosine_lr(long long t, long long total_steps, double lr_init, double eta_min);

// One optimizer step over every parameter; weight decay adds wd*theta to the
// gradient first. Non-finite gradients abort with a numeric error.
void adam_step(SegNet& net, AdamState& state, double lr, double weight_decay);

// One "epoch,step,lr,loss" record per optimization step.
struct TrainLogRow {
    int epoch = 0;
    long long step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

// Trains a fresh SegNet on the dataset: seeded fan-in init, per-epoch
// shuffling with derived seeds, per-step cosine schedule, BCE task loss.
// Deterministic given (data, cfg, member_seed, arch, dropout_rate). A
// non-finite loss aborts with a numeric error naming the last finite epoch.
SegNet train_member(const std::vector<Tensor>& images,
                    const std::vector<Mask>& masks,
                    const TrainConfig& cfg, std::uint64_t member_seed,
                    const ArchConfig& arch, double dropout_rate,
                    std::vector<TrainLogRow>* log = nullptr);

} // namespace uqd

#endif
