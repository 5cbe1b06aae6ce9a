#include "uqd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace uqd {

namespace detail {

struct Access {
    static const std::shared_ptr<TensorImpl>& impl(const Tensor& t) { return t.impl_; }
    static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }
    static void push_node(GradTape& tape,
                          std::vector<std::shared_ptr<TensorImpl>> inputs,
                          std::shared_ptr<TensorImpl> output,
                          std::function<void()> pull) {
        tape.nodes_.push_back({std::move(inputs), std::move(output), std::move(pull)});
    }
};

} // namespace detail

using detail::Access;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local GradTape* g_active_tape = nullptr;

long long numel_checked(const Shape& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor: dimension sizes must be positive");
        n *= d;
        if (n > (1LL << 31)) throw DimensionError("tensor: shape too large");
    }
    return n;
}

ImplPtr make_impl(const Shape& shape) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(static_cast<std::size_t>(numel_checked(shape)), 0.0);
    return impl;
}

const ImplPtr& require(const Tensor& t, const char* op) {
    const ImplPtr& impl = Access::impl(t);
    if (!impl) throw ContractError(std::string(op) + ": undefined tensor");
    return impl;
}

void check_same_shape(const char* op, const TensorImpl& a, const TensorImpl& b) {
    if (a.shape != b.shape) throw DimensionError(std::string(op) + ": shape mismatch");
}

// Whether backward must write into this tensor's grad buffer. Constant inputs
// are skipped entirely, which also keeps read-only tensors shared across
// threads free of grad writes.
bool needs_grad(const TensorImpl* impl) {
    return impl->requires_grad || impl->tape_output;
}

void ensure_grad(TensorImpl* impl) {
    if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), 0.0);
}

// Records a node on the active tape, if recording applies to these inputs.
void record_op(std::initializer_list<Tensor> inputs, Tensor& out, std::function<void()> pull) {
    GradTape* tape = GradTape::active();
    if (!tape) return;
    bool tracked = false;
    for (const Tensor& t : inputs) {
        const ImplPtr& impl = Access::impl(t);
        if (impl && needs_grad(impl.get())) {
            tracked = true;
            break;
        }
    }
    if (!tracked) return;
    const ImplPtr& out_impl = Access::impl(out);
    out_impl->tape_output = true;
    std::vector<ImplPtr> impls;
    impls.reserve(inputs.size());
    for (const Tensor& t : inputs) impls.push_back(Access::impl(t));
    Access::push_node(*tape, std::move(impls), out_impl, std::move(pull));
}

double stable_sigmoid(double v) {
    if (v >= 0.0) {
        double e = std::exp(-v);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(v);
    return e / (1.0 + e);
}

} // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) { return Access::wrap(make_impl(shape)); }

Tensor Tensor::full(const Shape& shape, double value) {
    auto impl = make_impl(shape);
    std::fill(impl->data.begin(), impl->data.end(), value);
    return Access::wrap(std::move(impl));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
    long long n = numel_checked(shape);
    if (static_cast<std::size_t>(n) != data.size())
        throw DimensionError("tensor: data length does not match shape");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    return Access::wrap(std::move(impl));
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    auto impl = make_impl(shape);
    for (double& v : impl->data) v = rng.uniform(lo, hi);
    return Access::wrap(std::move(impl));
}

const Shape& Tensor::shape() const { return require(*this, "shape")->shape; }

int Tensor::size() const { return static_cast<int>(require(*this, "size")->data.size()); }

int Tensor::dim(int i) const {
    const auto& s = shape();
    if (i < 0 || i >= static_cast<int>(s.size())) throw DimensionError("dim: index out of range");
    return s[static_cast<std::size_t>(i)];
}

const std::vector<double>& Tensor::data() const { return require(*this, "data")->data; }

double Tensor::item() const {
    const auto& impl = require(*this, "item");
    if (impl->data.size() != 1) throw ContractError("item: tensor is not scalar");
    return impl->data[0];
}

bool Tensor::requires_grad() const { return require(*this, "requires_grad")->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    require(*this, "set_requires_grad")->requires_grad = value;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    const auto& impl = require(*this, "grad");
    ensure_grad(impl.get());
    return impl->grad;
}

void Tensor::zero_grad() {
    const auto& impl = require(*this, "zero_grad");
    impl->grad.assign(impl->data.size(), 0.0);
}

Tensor Tensor::detach() const {
    const auto& impl = require(*this, "detach");
    auto copy = std::make_shared<TensorImpl>();
    copy->shape = impl->shape;
    copy->data = impl->data;
    return Access::wrap(std::move(copy));
}

Tensor Tensor::clone() const { return detach(); }

bool Tensor::all_finite() const {
    for (double v : data())
        if (!std::isfinite(v)) return false;
    return true;
}

// ---- GradTape --------------------------------------------------------------

GradTape* GradTape::active() { return g_active_tape; }

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

void GradTape::backward(const Tensor& loss, bool accumulate) {
    const ImplPtr& loss_impl = require(loss, "backward");
    if (loss_impl->data.size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");

    std::unordered_set<TensorImpl*> outputs;
    outputs.reserve(nodes_.size() * 2);
    for (const Node& n : nodes_) outputs.insert(n.output.get());

    for (const Node& n : nodes_) {
        ensure_grad(n.output.get());
        std::fill(n.output->grad.begin(), n.output->grad.end(), 0.0);
        for (const ImplPtr& in : n.inputs) {
            if (!needs_grad(in.get())) continue;
            ensure_grad(in.get());
            if (!accumulate && outputs.find(in.get()) == outputs.end())
                std::fill(in->grad.begin(), in->grad.end(), 0.0);
        }
    }

    ensure_grad(loss_impl.get());
    loss_impl->grad[0] = 1.0;

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

// ---- elementwise ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const ImplPtr& ai = require(a, "add");
    const ImplPtr& bi = require(b, "add");
    check_same_shape("add", *ai, *bi);
    auto oi = make_impl(ai->shape);
    const std::size_t n = ai->data.size();
    for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] + bi->data[i];
    Tensor out = Access::wrap(oi);
    record_op({a, b}, out, [ai, bi, oi, n] {
        if (needs_grad(ai.get()))
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        if (needs_grad(bi.get()))
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const ImplPtr& ai = require(a, "sub");
    const ImplPtr& bi = require(b, "sub");
    check_same_shape("sub", *ai, *bi);
    auto oi = make_impl(ai->shape);
    const std::size_t n = ai->data.size();
    for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] - bi->data[i];
    Tensor out = Access::wrap(oi);
    record_op({a, b}, out, [ai, bi, oi, n] {
        if (needs_grad(ai.get()))
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
        if (needs_grad(bi.get()))
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const ImplPtr& ai = require(a, "mul");
    const ImplPtr& bi = require(b, "mul");
    check_same_shape("mul", *ai, *bi);
    auto oi = make_impl(ai->shape);
    const std::size_t n = ai->data.size();
    for (std::size_t i = 0; i < n; ++i) oi->data[i] = ai->data[i] * bi->data[i];
    Tensor out = Access::wrap(oi);
    record_op({a, b}, out, [ai, bi, oi, n] {
        if (needs_grad(ai.get()))
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
        if (needs_grad(bi.get()))
            for (std::size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
    });
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    const ImplPtr& ai = require(a, "div");
    const ImplPtr& bi = require(b, "div");
    check_same_shape("div", *ai, *bi);
    auto oi = make_impl(ai->shape);
    const std::size_t n = ai->data.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (bi->data[i] == 0.0) throw NumericError("div: zero denominator");
        oi->data[i] = ai->data[i] / bi->data[i];
    }
    Tensor out = Access::wrap(oi);
    record_op({a, b}, out, [ai, bi, oi, n] {
        if (needs_grad(ai.get()))
            for (std::size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] / bi->data[i];
        if (needs_grad(bi.get()))
            for (std::size_t i = 0; i < n; ++i)
                bi->grad[i] -= oi->grad[i] * ai->data[i] / (bi->data[i] * bi->data[i]);
    });
    return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
    const ImplPtr& xi = require(x, "affine");
    auto oi = make_impl(xi->shape);
    const std::size_t n = xi->data.size();
    for (std::size_t i = 0; i < n; ++i) oi->data[i] = scale * xi->data[i] + shift;
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, scale, n] {
        if (needs_grad(xi.get()))
            for (std::size_t i = 0; i < n; ++i) xi->grad[i] += scale * oi->grad[i];
    });
    return out;
}

Tensor sum(const Tensor& x) {
    const ImplPtr& xi = require(x, "sum");
    double acc = 0.0;
    for (double v : xi->data) acc += v;
    Tensor out = Tensor::scalar(acc);
    const ImplPtr& oi = Access::impl(out);
    const std::size_t n = xi->data.size();
    record_op({x}, out, [xi, oi, n] {
        if (!needs_grad(xi.get())) return;
        const double g = oi->grad[0];
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
    return out;
}

Tensor mean(const Tensor& x) {
    const ImplPtr& xi = require(x, "mean");
    const std::size_t n = xi->data.size();
    double acc = 0.0;
    for (double v : xi->data) acc += v;
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));
    const ImplPtr& oi = Access::impl(out);
    record_op({x}, out, [xi, oi, n] {
        if (!needs_grad(xi.get())) return;
        const double g = oi->grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    const ImplPtr& xi = require(x, "sigmoid");
    auto oi = make_impl(xi->shape);
    const std::size_t n = xi->data.size();
    for (std::size_t i = 0; i < n; ++i) oi->data[i] = stable_sigmoid(xi->data[i]);
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, n] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t i = 0; i < n; ++i) {
            const double y = oi->data[i];
            xi->grad[i] += oi->grad[i] * y * (1.0 - y);
        }
    });
    return out;
}

Tensor silu(const Tensor& x) {
    const ImplPtr& xi = require(x, "silu");
    auto oi = make_impl(xi->shape);
    const std::size_t n = xi->data.size();
    std::vector<double> sig(n);
    for (std::size_t i = 0; i < n; ++i) {
        sig[i] = stable_sigmoid(xi->data[i]);
        oi->data[i] = xi->data[i] * sig[i];
    }
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, sig = std::move(sig), n] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = sig[i];
            xi->grad[i] += oi->grad[i] * (s + xi->data[i] * s * (1.0 - s));
        }
    });
    return out;
}

Tensor log_clamped(const Tensor& x) {
    const ImplPtr& xi = require(x, "log_clamped");
    auto oi = make_impl(xi->shape);
    const std::size_t n = xi->data.size();
    for (std::size_t i = 0; i < n; ++i)
        oi->data[i] = std::log(xi->data[i] > kLogFloor ? xi->data[i] : kLogFloor);
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, n] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t i = 0; i < n; ++i)
            if (xi->data[i] > kLogFloor) xi->grad[i] += oi->grad[i] / xi->data[i];
    });
    return out;
}

Tensor sqrt_elem(const Tensor& x) {
    const ImplPtr& xi = require(x, "sqrt");
    auto oi = make_impl(xi->shape);
    const std::size_t n = xi->data.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (xi->data[i] < 0.0) throw NumericError("sqrt: negative input");
        oi->data[i] = std::sqrt(xi->data[i]);
    }
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, n] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t i = 0; i < n; ++i)
            if (oi->data[i] > 0.0) xi->grad[i] += oi->grad[i] * 0.5 / oi->data[i];
    });
    return out;
}

Tensor softmax(const Tensor& logits, int axis) {
    const ImplPtr& xi = require(logits, "softmax");
    const int rank = static_cast<int>(xi->shape.size());
    if (axis < 0 || axis >= rank) throw DimensionError("softmax: invalid axis");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(xi->shape[static_cast<std::size_t>(i)]);
    for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(xi->shape[static_cast<std::size_t>(i)]);
    const std::size_t n = static_cast<std::size_t>(xi->shape[static_cast<std::size_t>(axis)]);

    auto oi = make_impl(xi->shape);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            double hi = xi->data[base];
            for (std::size_t a = 1; a < n; ++a) hi = std::max(hi, xi->data[base + a * inner]);
            double denom = 0.0;
            for (std::size_t a = 0; a < n; ++a) {
                const double e = std::exp(xi->data[base + a * inner] - hi);
                oi->data[base + a * inner] = e;
                denom += e;
            }
            for (std::size_t a = 0; a < n; ++a) oi->data[base + a * inner] /= denom;
        }
    }
    Tensor out = Access::wrap(oi);
    record_op({logits}, out, [xi, oi, outer, inner, n] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                double dot = 0.0;
                for (std::size_t a = 0; a < n; ++a) {
                    const std::size_t k = base + a * inner;
                    dot += oi->grad[k] * oi->data[k];
                }
                for (std::size_t a = 0; a < n; ++a) {
                    const std::size_t k = base + a * inner;
                    xi->grad[k] += oi->data[k] * (oi->grad[k] - dot);
                }
            }
        }
    });
    return out;
}

Tensor logsumexp(const Tensor& x) {
    const ImplPtr& xi = require(x, "logsumexp");
    const std::size_t n = xi->data.size();
    double hi = xi->data[0];
    for (double v : xi->data) hi = std::max(hi, v);
    std::vector<double> soft(n);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        soft[i] = std::exp(xi->data[i] - hi);
        denom += soft[i];
    }
    for (std::size_t i = 0; i < n; ++i) soft[i] /= denom;
    Tensor out = Tensor::scalar(hi + std::log(denom));
    const ImplPtr& oi = Access::impl(out);
    record_op({x}, out, [xi, oi, soft = std::move(soft), n] {
        if (!needs_grad(xi.get())) return;
        const double g = oi->grad[0];
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g * soft[i];
    });
    return out;
}

Tensor concat1d(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat1d: no parts");
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        const ImplPtr& pi = require(p, "concat1d");
        if (pi->shape.size() > 1) throw DimensionError("concat1d: parts must be scalars or 1-D");
        total += pi->data.size();
    }
    auto oi = make_impl({static_cast<int>(total)});
    std::size_t off = 0;
    std::vector<ImplPtr> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) {
        const ImplPtr& pi = Access::impl(p);
        std::copy(pi->data.begin(), pi->data.end(), oi->data.begin() + static_cast<long>(off));
        off += pi->data.size();
        impls.push_back(pi);
    }
    Tensor out = Access::wrap(oi);

    GradTape* tape = GradTape::active();
    if (tape) {
        bool tracked = false;
        for (const ImplPtr& pi : impls)
            if (needs_grad(pi.get())) tracked = true;
        if (tracked) {
            oi->tape_output = true;
            auto pull = [impls, oi] {
                std::size_t pos = 0;
                for (const ImplPtr& pi : impls) {
                    if (needs_grad(pi.get()))
                        for (std::size_t i = 0; i < pi->data.size(); ++i)
                            pi->grad[i] += oi->grad[pos + i];
                    pos += pi->data.size();
                }
            };
            Access::push_node(*tape, impls, oi, std::move(pull));
        }
    }
    return out;
}

// ---- spatial ops -----------------------------------------------------------

namespace {

void check_chw(const char* op, const TensorImpl& t) {
    if (t.shape.size() != 3) throw DimensionError(std::string(op) + ": expected a [C,H,W] tensor");
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const ImplPtr& xi = require(input, "conv2d");
    const ImplPtr& wi = require(weight, "conv2d");
    const ImplPtr& bi = require(bias, "conv2d");
    check_chw("conv2d", *xi);
    if (wi->shape.size() != 4) throw DimensionError("conv2d: weight must be [O,C,k,k]");
    const int C = xi->shape[0], H = xi->shape[1], W = xi->shape[2];
    const int O = wi->shape[0], K = wi->shape[2];
    if (wi->shape[1] != C) throw DimensionError("conv2d: weight input channels do not match input");
    if (wi->shape[3] != K || K % 2 == 0) throw DimensionError("conv2d: kernel must be square with odd size");
    if (bi->shape.size() != 1 || bi->shape[0] != O) throw DimensionError("conv2d: bias must be [O]");
    const int P = K / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * static_cast<std::size_t>(W);

    auto oi = make_impl({O, H, W});
    for (int oc = 0; oc < O; ++oc)
        std::fill_n(oi->data.begin() + static_cast<long>(oc * plane), plane, bi->data[static_cast<std::size_t>(oc)]);

    const double* x = xi->data.data();
    const double* w = wi->data.data();
    double* y = oi->data.data();
    for (int oc = 0; oc < O; ++oc) {
        for (int ic = 0; ic < C; ++ic) {
            const double* wbase = w + (static_cast<std::size_t>(oc) * C + ic) * K * K;
            const double* inbase = x + static_cast<std::size_t>(ic) * plane;
            double* outbase = y + static_cast<std::size_t>(oc) * plane;
            for (int kh = 0; kh < K; ++kh) {
                const int dy = kh - P;
                const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                for (int kw = 0; kw < K; ++kw) {
                    const int dx = kw - P;
                    const double wv = wbase[kh * K + kw];
                    const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    for (int yy = y0; yy < y1; ++yy) {
                        double* orow = outbase + static_cast<std::size_t>(yy) * W;
                        const double* irow = inbase + static_cast<std::size_t>(yy + dy) * W + dx;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                    }
                }
            }
        }
    }

    Tensor out = Access::wrap(oi);
    record_op({input, weight, bias}, out, [xi, wi, bi, oi, C, H, W, O, K, P, plane] {
        const double* og = oi->grad.data();
        // bias
        if (needs_grad(bi.get())) {
            for (int oc = 0; oc < O; ++oc) {
                double acc = 0.0;
                const double* grow = og + static_cast<std::size_t>(oc) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += grow[i];
                bi->grad[static_cast<std::size_t>(oc)] += acc;
            }
        }
        // input
        if (needs_grad(xi.get())) {
            double* dx_ = xi->grad.data();
            const double* w = wi->data.data();
            for (int oc = 0; oc < O; ++oc) {
                for (int ic = 0; ic < C; ++ic) {
                    const double* wbase = w + (static_cast<std::size_t>(oc) * C + ic) * K * K;
                    double* dinbase = dx_ + static_cast<std::size_t>(ic) * plane;
                    const double* gbase = og + static_cast<std::size_t>(oc) * plane;
                    for (int kh = 0; kh < K; ++kh) {
                        const int dy = kh - P;
                        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        for (int kw = 0; kw < K; ++kw) {
                            const int dx = kw - P;
                            const double wv = wbase[kh * K + kw];
                            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                            for (int yy = y0; yy < y1; ++yy) {
                                const double* grow = gbase + static_cast<std::size_t>(yy) * W;
                                double* drow = dinbase + static_cast<std::size_t>(yy + dy) * W + dx;
                                for (int xx = x0; xx < x1; ++xx) drow[xx] += wv * grow[xx];
                            }
                        }
                    }
                }
            }
        }
        // weight
        if (needs_grad(wi.get())) {
            const double* x = xi->data.data();
            for (int oc = 0; oc < O; ++oc) {
                for (int ic = 0; ic < C; ++ic) {
                    double* dwbase = wi->grad.data() + (static_cast<std::size_t>(oc) * C + ic) * K * K;
                    const double* inbase = x + static_cast<std::size_t>(ic) * plane;
                    const double* gbase = og + static_cast<std::size_t>(oc) * plane;
                    for (int kh = 0; kh < K; ++kh) {
                        const int dy = kh - P;
                        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        for (int kw = 0; kw < K; ++kw) {
                            const int dx = kw - P;
                            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                            double acc = 0.0;
                            for (int yy = y0; yy < y1; ++yy) {
                                const double* grow = gbase + static_cast<std::size_t>(yy) * W;
                                const double* irow = inbase + static_cast<std::size_t>(yy + dy) * W + dx;
                                for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
                            }
                            dwbase[kh * K + kw] += acc;
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor avg_pool2(const Tensor& x) {
    const ImplPtr& xi = require(x, "avg_pool2");
    check_chw("avg_pool2", *xi);
    const int C = xi->shape[0], H = xi->shape[1], W = xi->shape[2];
    if (H % 2 != 0 || W % 2 != 0) throw DimensionError("avg_pool2: H and W must be even");
    const int Ho = H / 2, Wo = W / 2;
    auto oi = make_impl({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const double* in = xi->data.data() + static_cast<std::size_t>(c) * H * W;
        double* out = oi->data.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx) {
                const double* r0 = in + static_cast<std::size_t>(2 * y) * W + 2 * xx;
                const double* r1 = r0 + W;
                out[y * Wo + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
    }
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, C, H, W, Ho, Wo] {
        if (!needs_grad(xi.get())) return;
        for (int c = 0; c < C; ++c) {
            double* din = xi->grad.data() + static_cast<std::size_t>(c) * H * W;
            const double* g = oi->grad.data() + static_cast<std::size_t>(c) * Ho * Wo;
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx) {
                    const double gv = 0.25 * g[y * Wo + xx];
                    double* r0 = din + static_cast<std::size_t>(2 * y) * W + 2 * xx;
                    double* r1 = r0 + W;
                    r0[0] += gv;
                    r0[1] += gv;
                    r1[0] += gv;
                    r1[1] += gv;
                }
        }
    });
    return out;
}

Tensor upsample2(const Tensor& x) {
    const ImplPtr& xi = require(x, "upsample2");
    check_chw("upsample2", *xi);
    const int C = xi->shape[0], H = xi->shape[1], W = xi->shape[2];
    const int Ho = 2 * H, Wo = 2 * W;
    auto oi = make_impl({C, Ho, Wo});
    for (int c = 0; c < C; ++c) {
        const double* in = xi->data.data() + static_cast<std::size_t>(c) * H * W;
        double* out = oi->data.data() + static_cast<std::size_t>(c) * Ho * Wo;
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const double v = in[y * W + xx];
                double* r0 = out + static_cast<std::size_t>(2 * y) * Wo + 2 * xx;
                double* r1 = r0 + Wo;
                r0[0] = v;
                r0[1] = v;
                r1[0] = v;
                r1[1] = v;
            }
    }
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, C, H, W, Wo] {
        if (!needs_grad(xi.get())) return;
        for (int c = 0; c < C; ++c) {
            double* din = xi->grad.data() + static_cast<std::size_t>(c) * H * W;
            const double* g = oi->grad.data() + static_cast<std::size_t>(c) * 2 * H * Wo;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    const double* r0 = g + static_cast<std::size_t>(2 * y) * Wo + 2 * xx;
                    const double* r1 = r0 + Wo;
                    din[y * W + xx] += r0[0] + r0[1] + r1[0] + r1[1];
                }
        }
    });
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const ImplPtr& ai = require(a, "concat_channels");
    const ImplPtr& bi = require(b, "concat_channels");
    check_chw("concat_channels", *ai);
    check_chw("concat_channels", *bi);
    if (ai->shape[1] != bi->shape[1] || ai->shape[2] != bi->shape[2])
        throw DimensionError("concat_channels: spatial shape mismatch");
    const int C1 = ai->shape[0], C2 = bi->shape[0], H = ai->shape[1], W = ai->shape[2];
    auto oi = make_impl({C1 + C2, H, W});
    std::copy(ai->data.begin(), ai->data.end(), oi->data.begin());
    std::copy(bi->data.begin(), bi->data.end(), oi->data.begin() + static_cast<long>(ai->data.size()));
    Tensor out = Access::wrap(oi);
    record_op({a, b}, out, [ai, bi, oi] {
        const std::size_t na = ai->data.size();
        if (needs_grad(ai.get()))
            for (std::size_t i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
        if (needs_grad(bi.get()))
            for (std::size_t i = 0; i < bi->data.size(); ++i) bi->grad[i] += oi->grad[na + i];
    });
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    const ImplPtr& xi = require(x, "global_avg_pool");
    check_chw("global_avg_pool", *xi);
    const int C = xi->shape[0];
    const std::size_t plane = static_cast<std::size_t>(xi->shape[1]) * static_cast<std::size_t>(xi->shape[2]);
    auto oi = make_impl({C});
    for (int c = 0; c < C; ++c) {
        const double* in = xi->data.data() + static_cast<std::size_t>(c) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += in[i];
        oi->data[static_cast<std::size_t>(c)] = acc / static_cast<double>(plane);
    }
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, C, plane] {
        if (!needs_grad(xi.get())) return;
        for (int c = 0; c < C; ++c) {
            const double g = oi->grad[static_cast<std::size_t>(c)] / static_cast<double>(plane);
            double* din = xi->grad.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) din[i] += g;
        }
    });
    return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
    if (rate == 0.0) return x;
    const ImplPtr& xi = require(x, "dropout");
    auto oi = make_impl(xi->shape);
    const std::size_t n = xi->data.size();
    const double scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(n);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = rng.bernoulli(1.0 - rate) ? scale : 0.0;
        oi->data[i] = xi->data[i] * mask[i];
    }
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi, mask = std::move(mask), n] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * mask[i];
    });
    return out;
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    const ImplPtr& xi = require(x, "reshape");
    if (numel_checked(shape) != static_cast<long long>(xi->data.size()))
        throw DimensionError("reshape: element count mismatch");
    auto oi = make_impl(shape);
    oi->data = xi->data;
    Tensor out = Access::wrap(oi);
    record_op({x}, out, [xi, oi] {
        if (!needs_grad(xi.get())) return;
        for (std::size_t i = 0; i < xi->data.size(); ++i) xi->grad[i] += oi->grad[i];
    });
    return out;
}

// ---- gradient checking -----------------------------------------------------

double fd_gradcheck(const std::function<Tensor(const Tensor&)>& f,
                    const Tensor& x, double eps) {
    if (!(eps >= 1e-8 && eps <= 1e-3))
        throw ContractError("fd_gradcheck: eps must lie in [1e-8, 1e-3]");

    Tensor probe = x.clone();
    probe.set_requires_grad(true);
    GradTape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = f(probe);
    }
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("fd_gradcheck: f must return a scalar tensor");
    tape.backward(loss);
    const std::vector<double> ad = probe.grad();

    const std::vector<double>& base = x.data();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += eps;
        minus[i] -= eps;
        const double fp = f(Tensor::from_data(x.shape(), std::move(plus))).item();
        const double fm = f(Tensor::from_data(x.shape(), std::move(minus))).item();
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("fd_gradcheck: f is non-finite at a probe point");
        const double fd = (fp - fm) / (2.0 * eps);
        const double denom = std::max({1.0, std::fabs(ad[i]), std::fabs(fd)});
        max_rel = std::max(max_rel, std::fabs(ad[i] - fd) / denom);
    }
    return max_rel;
}

} // namespace uqd
