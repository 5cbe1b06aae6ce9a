#include "uqd/segnet.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace uqd {

namespace {

struct ParamSpec {
    const char* name;
    bool is_weight; // weights get fan-in init, biases start at zero
};

// Fixed parameter order; checkpoints and optimizer state index into it.
constexpr std::array<ParamSpec, 12> kParamOrder = {{
    {"enc1.w", true}, {"enc1.b", false},
    {"enc2.w", true}, {"enc2.b", false},
    {"bott.w", true}, {"bott.b", false},
    {"dec2.w", true}, {"dec2.b", false},
    {"dec1.w", true}, {"dec1.b", false},
    {"head.w", true}, {"head.b", false},
}};

Shape param_shape(const ArchConfig& a, const std::string& name) {
    const int c = a.base_channels;
    if (name == "enc1.w") return {c, a.in_channels, 3, 3};
    if (name == "enc1.b") return {c};
    if (name == "enc2.w") return {2 * c, c, 3, 3};
    if (name == "enc2.b") return {2 * c};
    if (name == "bott.w") return {4 * c, 2 * c, 3, 3};
    if (name == "bott.b") return {4 * c};
    if (name == "dec2.w") return {2 * c, 6 * c, 3, 3};
    if (name == "dec2.b") return {2 * c};
    if (name == "dec1.w") return {c, 3 * c, 3, 3};
    if (name == "dec1.b") return {c};
    if (name == "head.w") return {1, c, 3, 3};
    if (name == "head.b") return {1};
    throw ContractError("param_shape: unknown parameter " + name);
}

const Tensor& param(const SegNet& net, std::size_t idx) { return net.params[idx].second; }

void check_arch(const ArchConfig& a) {
    if (a.in_channels != 1) throw ContractError("segnet: only single-channel input is supported");
    if (a.base_channels < 1) throw ContractError("segnet: base_channels must be positive");
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated at byte " + std::to_string(pos));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

SegNet make_segnet(const ArchConfig& arch, double dropout_rate, std::uint64_t seed) {
    check_arch(arch);
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ContractError("make_segnet: dropout_rate must be in [0,1)");
    SegNet net;
    net.arch = arch;
    net.dropout_rate = dropout_rate;
    net.mode = Mode::eval;
    Rng rng(seed);
    for (const ParamSpec& spec : kParamOrder) {
        Shape shape = param_shape(arch, spec.name);
        if (spec.is_weight) {
            const int fan_in = shape[1] * shape[2] * shape[3];
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            net.params.emplace_back(spec.name, Tensor::uniform(shape, rng, -bound, bound));
        } else {
            net.params.emplace_back(spec.name, Tensor::zeros(shape));
        }
    }
    return net;
}

void set_trainable(SegNet& net, bool trainable) {
    for (auto& [name, t] : net.params) t.set_requires_grad(trainable);
}

ForwardResult forward(const SegNet& net, const Tensor& image, Rng* rng) {
    if (!image.defined() || image.shape().size() != 2)
        throw DimensionError("forward: image must be a [H,W] tensor");
    const int h = image.dim(0), w = image.dim(1);
    if (h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0)
        throw DimensionError("forward: H and W must be positive multiples of 4");
    if (net.params.size() != kParamOrder.size())
        throw ContractError("forward: network has an unexpected parameter set");
    const bool drop = net.dropout_rate > 0.0 && (net.mode == Mode::train || rng != nullptr);
    if (net.mode == Mode::train && net.dropout_rate > 0.0 && rng == nullptr)
        throw ContractError("forward: train-mode dropout requires an rng");

    Tensor x = reshape(image, {1, h, w});

    Tensor e1 = silu(conv2d(x, param(net, 0), param(net, 1)));
    if (drop) e1 = dropout(e1, net.dropout_rate, *rng);
    Tensor p1 = avg_pool2(e1);

    Tensor e2 = silu(conv2d(p1, param(net, 2), param(net, 3)));
    if (drop) e2 = dropout(e2, net.dropout_rate, *rng);
    Tensor p2 = avg_pool2(e2);

    Tensor b = silu(conv2d(p2, param(net, 4), param(net, 5)));
    Tensor rep_vec = global_avg_pool(b);

    Tensor d2 = silu(conv2d(concat_channels(upsample2(b), e2), param(net, 6), param(net, 7)));
    Tensor d1 = silu(conv2d(concat_channels(upsample2(d2), e1), param(net, 8), param(net, 9)));
    Tensor logits = reshape(conv2d(d1, param(net, 10), param(net, 11)), {h, w});

    ForwardResult out;
    out.logits = logits;
    out.rep.vec = rep_vec;
    out.rep.source = -1;
    return out;
}

ProbMap predict_prob(const SegNet& net, const Tensor& image) {
    if (net.mode != Mode::eval) throw ContractError("predict_prob: network must be eval-mode");
    Tensor probs = sigmoid(forward(net, image).logits);
    ProbMap out;
    out.h = image.dim(0);
    out.w = image.dim(1);
    out.probs = probs.data();
    out.provenance = Provenance::single;
    out.sources = 1;
    return out;
}

std::uint64_t param_checksum(const SegNet& net) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto fold = [&h](const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : net.params) {
        fold(name.data(), name.size());
        fold(t.data().data(), t.data().size() * sizeof(double));
    }
    return h;
}

void save_checkpoint(const SegNet& net, const std::string& path) {
    std::string out = "UQD1";

    std::string cfg;
    cfg += "base_channels=" + std::to_string(net.arch.base_channels) + "\n";
    cfg += "dropout_rate=" + format_double(net.dropout_rate) + "\n";
    cfg += "in_channels=" + std::to_string(net.arch.in_channels) + "\n";
    append_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;

    append_u32(out, static_cast<std::uint32_t>(net.params.size()));
    for (const auto& [name, t] : net.params) {
        append_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        const Shape& s = t.shape();
        append_u32(out, static_cast<std::uint32_t>(s.size()));
        for (int d : s) append_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.data()) append_f64(out, v);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

SegNet load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    ByteReader r{buf, 0, path};

    if (r.bytes(4) != "UQD1") throw FormatError(path + ": bad magic, expected UQD1");

    const std::string cfg = r.bytes(r.u32());
    std::map<std::string, std::string> kv;
    std::size_t line_start = 0;
    while (line_start < cfg.size()) {
        std::size_t nl = cfg.find('\n', line_start);
        if (nl == std::string::npos) throw FormatError(path + ": config block missing newline");
        const std::string line = cfg.substr(line_start, nl - line_start);
        line_start = nl + 1;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path + ": config line without '='");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key : {"base_channels", "dropout_rate", "in_channels"})
        if (!kv.count(key)) throw FormatError(path + ": config block missing " + std::string(key));

    SegNet net;
    net.arch.base_channels = std::stoi(kv["base_channels"]);
    net.arch.in_channels = std::stoi(kv["in_channels"]);
    net.dropout_rate = std::stod(kv["dropout_rate"]);
    net.mode = Mode::eval;
    check_arch(net.arch);

    const std::uint32_t n_params = r.u32();
    if (n_params != kParamOrder.size())
        throw FormatError(path + ": expected " + std::to_string(kParamOrder.size()) +
                          " parameters, found " + std::to_string(n_params));
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.bytes(r.u32());
        if (name != kParamOrder[i].name)
            throw FormatError(path + ": parameter " + std::to_string(i) + " is '" + name +
                              "', expected '" + kParamOrder[i].name + "'");
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
        if (shape != param_shape(net.arch, name))
            throw FormatError(path + ": parameter " + name + " has a shape inconsistent with the config");
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        std::vector<double> data(n);
        for (std::size_t k = 0; k < n; ++k) data[k] = r.f64();
        net.params.emplace_back(name, Tensor::from_data(shape, std::move(data)));
    }
    if (r.pos != buf.size()) throw FormatError(path + ": trailing bytes after last parameter");
    return net;
}

} // namespace uqd
