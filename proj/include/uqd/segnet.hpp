#ifndef UQD_SEGNET_HPP
#define UQD_SEGNET_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uqd/prob_map.hpp"
#include "uqd/tensor.hpp"

namespace uqd {

// Channel plan of the mini encoder-decoder. Two downsampling stages with
// skip connections and 3x3 convolutions; widths are base, 2*base and a
// 4*base bottleneck, whose pooled activation is the representation vector.
struct ArchConfig {
    int in_channels = 1;
    int base_channels = 4;

    int rep_dim() const { return 4 * base_channels; }
};

enum class Mode { train, eval };

// Dropout-equipped binary segmentation network. Parameters are named and
// kept in a fixed order, which the checkpoint format and the optimizer
// both rely on.
struct SegNet {
    std::vector<std::pair<std::string, Tensor>> params;
    ArchConfig arch;
    double dropout_rate = 0.0;
    Mode mode = Mode::eval;
};

// Pooled bottleneck activation. source: -1 for the student, else the
// producing teacher's index.
struct Representation {
    Tensor vec;
    int source = -1;
};

struct ForwardResult {
    Tensor logits; // [H, W]
    Representation rep;
};

// Fresh network with fan-in-scaled uniform weights (bound 1/sqrt(fan_in))
// and zero biases, drawn in parameter order from Rng(seed).
SegNet make_segnet(const ArchConfig& arch, double dropout_rate, std::uint64_t seed);

// Enables or disables grad tracking on every parameter.
void set_trainable(SegNet& net, bool trainable);

// Runs the network on an [H,W] image with values in [0,1]. H and W must be
// multiples of 4 (two pooling stages). Dropout fires in train mode, and in
// eval mode when an rng is passed (the MC-Dropout request); a train-mode
// net with dropout_rate > 0 must be given an rng.
ForwardResult forward(const SegNet& net, const Tensor& image, Rng* rng = nullptr);

// sigmoid(logits) of a deterministic eval-mode forward. mode must be eval.
ProbMap predict_prob(const SegNet& net, const Tensor& image);

// Deterministic summary of the parameter bytes; distinguishes checkpoints
// and proves teachers untouched across a distillation step.
std::uint64_t param_checksum(const SegNet& net);

// Checkpoint file: magic "UQD1", a canonical key=value config block, then
// each parameter as (name, rank, dims, little-endian 64-bit floats).
// Round-trips are bitwise exact.
void save_checkpoint(const SegNet& net, const std::string& path);
SegNet load_checkpoint(const std::string& path);

} // namespace uqd

#endif
