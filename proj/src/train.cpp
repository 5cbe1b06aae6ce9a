#include "uqd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uqd {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

} // namespace

void check_train_config(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ContractError("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ContractError("train: batch_size must be >= 1");
    if (cfg.lr_init <= 0.0) throw ContractError("train: lr_init must be positive");
    if (cfg.weight_decay < 0.0) throw ContractError("train: weight_decay must be >= 0");
    if (cfg.eta_min < 0.0 || cfg.eta_min > cfg.lr_init)
        throw ContractError("train: eta_min must lie in [0, lr_init]");
}

void AdamState::init(const SegNet& net) {
    m.clear();
    v.clear();
    t = 0;
    for (const auto& [name, p] : net.params) {
        m.emplace_back(p.data().size(), 0.0);
        v.emplace_back(p.data().size(), 0.0);
    }
}

Tensor mask_to_tensor(const Mask& mask) {
    std::vector<double> vals(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) vals[i] = static_cast<double>(mask.v[i]);
    return Tensor::from_data({mask.h, mask.w}, std::move(vals));
}

Tensor bce_loss(const Tensor& p, const Tensor& y) {
    if (!p.defined() || !y.defined()) throw ContractError("bce_loss: undefined input");
    if (p.shape() != y.shape()) throw DimensionError("bce_loss: shape mismatch");
    Tensor fg = mul(y, log_clamped(p));
    Tensor bg = mul(affine(y, -1.0, 1.0), log_clamped(affine(p, -1.0, 1.0)));
    return affine(mean(add(fg, bg)), -1.0, 0.0);
}

double cosine_lr(long long t, long long total_steps, double lr_init, double eta_min) {
    if (total_steps < 1) throw ContractError("cosine_lr: total_steps must be >= 1");
    if (t < 0 || t > total_steps) throw ContractError("cosine_lr: step outside [0, total_steps]");
    const double phase = static_cast<double>(t) / static_cast<double>(total_steps);
    return eta_min + 0.5 * (lr_init - eta_min) * (1.0 + std::cos(3.141592653589793238462643383279 * phase));
}

void adam_step(SegNet& net, AdamState& state, double lr, double weight_decay) {
    if (state.m.size() != net.params.size())
        throw ContractError("adam_step: state does not match the network");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));

    for (std::size_t k = 0; k < net.params.size(); ++k) {
        Tensor& theta = net.params[k].second;
        const std::vector<double>& g = theta.grad();
        const std::vector<double>& x = theta.data();
        std::vector<double>& mk = state.m[k];
        std::vector<double>& vk = state.v[k];
        std::vector<double> next(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(g[i]))
                throw NumericError("adam_step: non-finite gradient in " + net.params[k].first);
            const double gi = g[i] + weight_decay * x[i];
            mk[i] = kBeta1 * mk[i] + (1.0 - kBeta1) * gi;
            vk[i] = kBeta2 * vk[i] + (1.0 - kBeta2) * gi * gi;
            const double mhat = mk[i] / bc1;
            const double vhat = vk[i] / bc2;
            next[i] = x[i] - lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
        const bool trainable = theta.requires_grad();
        Tensor updated = Tensor::from_data(theta.shape(), std::move(next));
        updated.set_requires_grad(trainable);
        net.params[k].second = std::move(updated);
    }
}

SegNet train_member(const std::vector<Tensor>& images,
                    const std::vector<Mask>& masks,
                    const TrainConfig& cfg, std::uint64_t member_seed,
                    const ArchConfig& arch, double dropout_rate,
                    std::vector<TrainLogRow>* log) {
    check_train_config(cfg);
    if (images.empty()) throw ContractError("train_member: empty training set");
    if (images.size() != masks.size())
        throw ContractError("train_member: image/mask count mismatch");

    SegNet net = make_segnet(arch, dropout_rate, mix64(member_seed, 0));
    net.mode = Mode::train;
    set_trainable(net, true);
    Rng drop_rng(mix64(member_seed, 1));

    AdamState opt;
    opt.init(net);

    const int n = static_cast<int>(images.size());
    const long long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const long long total_steps = steps_per_epoch * cfg.epochs;

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    long long t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix64(member_seed, 2 + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int stop = std::min(n, start + cfg.batch_size);

            GradTape tape;
            TapeScope scope(tape);
            std::vector<Tensor> parts;
            parts.reserve(static_cast<std::size_t>(stop - start));
            for (int b = start; b < stop; ++b) {
                const int idx = order[static_cast<std::size_t>(b)];
                Rng* rng = net.dropout_rate > 0.0 ? &drop_rng : nullptr;
                Tensor q = sigmoid(forward(net, images[static_cast<std::size_t>(idx)], rng).logits);
                parts.push_back(bce_loss(q, mask_to_tensor(masks[static_cast<std::size_t>(idx)])));
            }
            Tensor loss = mean(concat1d(parts));
            const double loss_val = loss.item();
            if (!std::isfinite(loss_val))
                throw NumericError("train_member: non-finite loss at epoch " + std::to_string(epoch) +
                                   "; last finite epoch was " + std::to_string(epoch - 1));
            tape.backward(loss);

            const double lr_t = cosine_lr(t, total_steps, cfg.lr_init, cfg.eta_min);
            adam_step(net, opt, lr_t, cfg.weight_decay);
            if (log) log->push_back({epoch, t, lr_t, loss_val});
            ++t;
        }
    }

    net.mode = Mode::eval;
    set_trainable(net, false);
    return net;
}

} // namespace uqd
