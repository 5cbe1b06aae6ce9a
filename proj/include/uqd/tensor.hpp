#ifndef UQD_TENSOR_HPP
#define UQD_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uqd/errors.hpp"
#include "uqd/rng.hpp"

namespace uqd {

using Shape = std::vector<int>;

// Probabilities are clamped to at least this value before entering a log, so
// NLL/KL/BCE stay finite even for fully saturated predictions.
inline constexpr double kLogFloor = 1e-12;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // allocated lazily, same length as data
    bool requires_grad = false;
    bool tape_output = false; // produced by a recorded op of the active tape
};

struct Access; // internal accessor used by the op implementations

} // namespace detail

// Dense row-major tensor of 64-bit floats. Values are immutable once the
// tensor is built; only the grad buffer mutates. A tensor participates in
// reverse-mode autodiff when requires_grad is set and a GradTape is active.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(const Shape& shape, std::vector<double> data);
    // Elementwise U(lo, hi) drawn in row-major order from rng.
    static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int size() const;
    int dim(int i) const;
    const std::vector<double>& data() const;
    double item() const; // scalar tensors only

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);
    // Read access to the gradient; zeros if backward never reached this leaf.
    const std::vector<double>& grad() const;
    void zero_grad();

    // Copy of the values with grad tracking stripped. clone() is a synonym
    // kept for call sites where the intent is duplication, not detachment.
    Tensor detach() const;
    Tensor clone() const;

    bool all_finite() const;

private:
    std::shared_ptr<detail::TensorImpl> impl_;
    friend struct detail::Access;
};

// Reverse-mode tape: an ordered record of op nodes in construction order,
// which is a topological order by definition. backward() visits each node
// exactly once, in reverse.
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // Seeds d(loss)/d(loss) = 1 and propagates to every leaf. Grad buffers
    // are reset first by default; accumulate=true keeps leaf grads and adds
    // into them (intermediate grads are always reset, they are pass-local).
    void backward(const Tensor& loss, bool accumulate = false);

    std::size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // The tape ops record into, if any. Thread-local: a tape and its tensors
    // are confined to one thread.
    static GradTape* active();

private:
    struct Node {
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        std::function<void()> pull; // reads output grad, accumulates into inputs
    };
    std::vector<Node> nodes_;
    friend struct detail::Access;
    friend class TapeScope;
};

// RAII guard that makes a tape the active recording target on this thread.
class TapeScope {
public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape* previous_;
};

// ---- elementwise and reduction ops ----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Elementwise a/b. Any zero in b is a NumericError.
Tensor div(const Tensor& a, const Tensor& b);
// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, double scale, double shift);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Numerically stable logistic; equals softmax([x, 0])[0] elementwise.
Tensor sigmoid(const Tensor& x);
// x * sigmoid(x). Smooth activation, so finite-difference checks stay clean.
Tensor silu(const Tensor& x);
// ln(max(x, kLogFloor)). Gradient is zero in the clamped region.
Tensor log_clamped(const Tensor& x);
// Elementwise square root; negative input is a NumericError.
Tensor sqrt_elem(const Tensor& x);

// Max-subtraction stabilized softmax along `axis`.
Tensor softmax(const Tensor& logits, int axis);
// Stabilized log(sum(exp(x))) of a 1-D tensor, as a scalar.
Tensor logsumexp(const Tensor& x);
// Concatenate 1-D or scalar tensors into one 1-D tensor.
Tensor concat1d(const std::vector<Tensor>& parts);

// ---- spatial ops on [C,H,W] tensors ----------------------------------------

// Stride-1 cross-correlation with zero padding kernel/2 (shape-preserving for
// odd kernels). input [C,H,W], weight [O,C,k,k], bias [O] -> [O,H,W].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);
// 2x2 average pooling; H and W must be even.
Tensor avg_pool2(const Tensor& x);
// Nearest-neighbor 2x upsampling.
Tensor upsample2(const Tensor& x);
// Channel concatenation of two [*,H,W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Spatial mean per channel: [C,H,W] -> [C].
Tensor global_avg_pool(const Tensor& x);
// Inverted dropout: each element kept with probability 1-rate and scaled by
// 1/(1-rate), so the eval-mode forward needs no rescaling. rate==0 is the
// identity and draws nothing from rng.
Tensor dropout(const Tensor& x, double rate, Rng& rng);
// Copying reshape (same element count).
Tensor reshape(const Tensor& x, const Shape& shape);

// ---- validation ------------------------------------------------------------

// Max over coordinates of the relative error between the autodiff gradient of
// f at x and a central finite difference with step eps. The error at each
// coordinate is |ad - fd| / max(1, |ad|, |fd|). f must be deterministic and
// return a scalar tensor; eps must lie in [1e-8, 1e-3].
double fd_gradcheck(const std::function<Tensor(const Tensor&)>& f,
                    const Tensor& x, double eps);

} // namespace uqd

#endif
