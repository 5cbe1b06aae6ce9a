#include "uqd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace uqd {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path);
}

// Parses the "P5 w h maxval" / "Pf w h scale" style header: tokens separated
// by whitespace, '#' starting a comment that runs to end of line. Returns
// the offset of the first payload byte (one whitespace after the last token).
struct HeaderParser {
    const std::string& buf;
    const std::string& path;
    std::size_t pos = 0;

    std::string token() {
        while (pos < buf.size()) {
            const char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (start == pos) throw FormatError(path + ": truncated header at byte " + std::to_string(pos));
        return buf.substr(start, pos - start);
    }

    int int_token(const char* what) {
        const std::string t = token();
        try {
            std::size_t used = 0;
            const int v = std::stoi(t, &used);
            if (used != t.size() || v <= 0) throw std::invalid_argument(t);
            return v;
        } catch (const std::exception&) {
            throw FormatError(path + ": bad " + what + " field '" + t + "'");
        }
    }

    // The single whitespace byte that separates header from payload.
    void consume_payload_separator() {
        if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
            throw FormatError(path + ": missing separator before payload");
        ++pos;
    }
};

std::string pgm_payload(const std::string& path, const std::string& buf, int& w, int& h) {
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
        throw FormatError(path + ": bad magic, expected P5");
    HeaderParser hp{buf, path, 2};
    w = hp.int_token("width");
    h = hp.int_token("height");
    const int maxval = hp.int_token("maxval");
    if (maxval != 255) throw FormatError(path + ": maxval must be 255, found " + std::to_string(maxval));
    hp.consume_payload_separator();
    const std::size_t expected = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    const std::size_t actual = buf.size() - hp.pos;
    if (actual != expected)
        throw FormatError(path + ": expected " + std::to_string(expected) + " payload bytes, found " +
                          std::to_string(actual));
    return buf.substr(hp.pos);
}

std::string pgm_header(int w, int h) {
    return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

void append_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float read_f32(const std::string& buf, std::size_t pos) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// Stamps a filled disc into the mask.
void stamp_disc(Mask& mask, double cx, double cy, double r) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(mask.w - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(mask.h - 1, static_cast<int>(std::ceil(cy + r)));
    const double r2 = r * r;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r2)
                mask.v[static_cast<std::size_t>(y) * mask.w + x] = 1;
        }
}

struct Curve {
    double x0, y0, x1, y1, x2, y2; // quadratic control points
    double radius;
    double depth; // darkening applied to the image under this curve
};

Mask raster_curves(const std::vector<Curve>& curves, int h, int w) {
    Mask mask;
    mask.h = h;
    mask.w = w;
    mask.v.assign(static_cast<std::size_t>(h) * w, 0);
    const int steps = 4 * (h + w);
    for (const Curve& c : curves)
        for (int s = 0; s <= steps; ++s) {
            const double t = static_cast<double>(s) / steps;
            const double u = 1.0 - t;
            const double bx = u * u * c.x0 + 2.0 * u * t * c.x1 + t * t * c.x2;
            const double by = u * u * c.y0 + 2.0 * u * t * c.y1 + t * t * c.y2;
            stamp_disc(mask, bx, by, c.radius);
        }
    return mask;
}

void check_synth_config(const SynthConfig& cfg) {
    if (cfg.n_images < 1) throw ConfigError("gen-data: n_images must be >= 1");
    if (cfg.h < 4 || cfg.w < 4) throw ConfigError("gen-data: image extent must be >= 4");
    if (cfg.curves_min < 0 || cfg.curves_max < cfg.curves_min)
        throw ConfigError("gen-data: curve count range is invalid");
    if (cfg.thickness_min <= 0.0 || cfg.thickness_max < cfg.thickness_min)
        throw ConfigError("gen-data: thickness range is invalid");
    if (cfg.noise_sigma < 0.0) throw ConfigError("gen-data: noise_sigma must be >= 0");
}

} // namespace

Tensor read_pgm(const std::string& path) {
    const std::string buf = read_file(path);
    int w = 0, h = 0;
    const std::string payload = pgm_payload(path, buf, w, h);
    std::vector<double> vals(payload.size());
    for (std::size_t i = 0; i < payload.size(); ++i)
        vals[i] = static_cast<double>(static_cast<unsigned char>(payload[i])) / 255.0;
    return Tensor::from_data({h, w}, std::move(vals));
}

void write_pgm(const std::string& path, const Tensor& image) {
    if (!image.defined() || image.shape().size() != 2)
        throw ContractError("write_pgm: image must be a [H,W] tensor");
    std::string out = pgm_header(image.dim(1), image.dim(0));
    for (double v : image.data()) {
        if (!(v >= 0.0 && v <= 1.0))
            throw ContractError("write_pgm: image value outside [0,1]");
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    write_file(path, out);
}

Mask read_pgm_mask(const std::string& path) {
    const std::string buf = read_file(path);
    int w = 0, h = 0;
    const std::string payload = pgm_payload(path, buf, w, h);
    Mask m;
    m.h = h;
    m.w = w;
    m.v.resize(payload.size());
    for (std::size_t i = 0; i < payload.size(); ++i) {
        const unsigned char b = static_cast<unsigned char>(payload[i]);
        if (b != 0 && b != 255)
            throw FormatError(path + ": mask byte " + std::to_string(b) + " at index " +
                              std::to_string(i) + " is neither 0 nor 255");
        m.v[i] = b == 255 ? 1 : 0;
    }
    return m;
}

void write_pgm(const std::string& path, const Mask& mask) {
    std::string out = pgm_header(mask.w, mask.h);
    for (std::uint8_t v : mask.v) {
        if (v > 1) throw ContractError("write_pgm: mask is not binary");
        out.push_back(static_cast<char>(v ? 255 : 0));
    }
    write_file(path, out);
}

ProbMap read_pfm(const std::string& path, int* clamp_warnings) {
    const std::string buf = read_file(path);
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != 'f') {
        if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == 'F')
            throw FormatError(path + ": color PFM is unsupported, expected grayscale Pf");
        throw FormatError(path + ": bad magic, expected Pf");
    }
    HeaderParser hp{buf, path, 2};
    const int w = hp.int_token("width");
    const int h = hp.int_token("height");
    const std::string scale_tok = hp.token();
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        throw FormatError(path + ": bad scale field '" + scale_tok + "'");
    }
    if (scale >= 0.0)
        throw FormatError(path + ": big-endian PFM (nonnegative scale) is unsupported");
    hp.consume_payload_separator();

    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (buf.size() - hp.pos != 4 * n)
        throw FormatError(path + ": expected " + std::to_string(4 * n) + " payload bytes, found " +
                          std::to_string(buf.size() - hp.pos));

    ProbMap p;
    p.h = h;
    p.w = w;
    p.probs.resize(n);
    // PFM rows run bottom-up on disk.
    for (int row = 0; row < h; ++row) {
        const std::size_t disk_row = static_cast<std::size_t>(h - 1 - row);
        for (int col = 0; col < w; ++col) {
            double v = static_cast<double>(
                read_f32(buf, hp.pos + 4 * (disk_row * static_cast<std::size_t>(w) + col)));
            if (!(v >= 0.0)) { // negative or NaN
                v = 0.0;
                if (clamp_warnings) ++*clamp_warnings;
            } else if (v > 1.0) {
                v = 1.0;
                if (clamp_warnings) ++*clamp_warnings;
            }
            p.probs[static_cast<std::size_t>(row) * w + col] = v;
        }
    }
    return p;
}

void write_pfm(const std::string& path, const ProbMap& p) {
    if (p.h <= 0 || p.w <= 0 || p.size() != static_cast<std::size_t>(p.h) * static_cast<std::size_t>(p.w))
        throw ContractError("write_pfm: malformed probability map");
    std::string out = "Pf\n" + std::to_string(p.w) + " " + std::to_string(p.h) + "\n-1.0\n";
    for (int row = p.h - 1; row >= 0; --row)
        for (int col = 0; col < p.w; ++col)
            append_f32(out, static_cast<float>(p.probs[static_cast<std::size_t>(row) * p.w + col]));
    write_file(path, out);
}

void write_manifest(const Dataset& ds) {
    std::string out;
    for (const DatasetItem& item : ds.items) out += item.image + "\t" + item.mask + "\n";
    write_file((fs::path(ds.dir) / "manifest.txt").string(), out);
}

Dataset load_manifest(const std::string& manifest_path) {
    const std::string buf = read_file(manifest_path);
    Dataset ds;
    ds.dir = fs::path(manifest_path).parent_path().string();
    if (ds.dir.empty()) ds.dir = ".";

    std::set<std::string> seen;
    std::size_t line_no = 0, start = 0;
    while (start < buf.size()) {
        std::size_t end = buf.find('\n', start);
        if (end == std::string::npos) end = buf.size();
        const std::string line = buf.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
            throw FormatError(manifest_path + ":" + std::to_string(line_no) +
                              ": expected exactly one tab separator");
        DatasetItem item{line.substr(0, tab), line.substr(tab + 1)};
        if (item.image.empty() || item.mask.empty())
            throw FormatError(manifest_path + ":" + std::to_string(line_no) + ": empty path");
        for (const std::string& rel : {item.image, item.mask}) {
            if (!seen.insert(rel).second)
                throw FormatError(manifest_path + ":" + std::to_string(line_no) +
                                  ": duplicate entry " + rel);
            if (!fs::exists(fs::path(ds.dir) / rel))
                throw IoError(manifest_path + ":" + std::to_string(line_no) +
                              ": missing file " + (fs::path(ds.dir) / rel).string());
        }
        ds.items.push_back(std::move(item));
    }
    return ds;
}

LoadedDataset load_dataset(const Dataset& ds) {
    LoadedDataset out;
    for (const DatasetItem& item : ds.items) {
        Tensor img = read_pgm((fs::path(ds.dir) / item.image).string());
        Mask mask = read_pgm_mask((fs::path(ds.dir) / item.mask).string());
        if (img.dim(0) != mask.h || img.dim(1) != mask.w)
            throw DimensionError("dataset: image/mask extent mismatch for " + item.image);
        out.images.push_back(std::move(img));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

Dataset generate_synthetic(const SynthConfig& cfg, const std::string& dir) {
    check_synth_config(cfg);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("gen-data: cannot create directory " + dir + ": " + ec.message());

    Dataset ds;
    ds.dir = dir;
    Rng rng(cfg.seed);
    const std::size_t n_px = static_cast<std::size_t>(cfg.h) * static_cast<std::size_t>(cfg.w);

    for (int i = 0; i < cfg.n_images; ++i) {
        Mask mask;
        std::vector<Curve> curves;
        bool accepted = false;
        for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
            curves.clear();
            const int n_curves = rng.uniform_int(cfg.curves_min, cfg.curves_max);
            for (int c = 0; c < n_curves; ++c) {
                Curve cv;
                cv.x0 = rng.uniform(0.0, cfg.w - 1.0);
                cv.y0 = rng.uniform(0.0, cfg.h - 1.0);
                cv.x1 = rng.uniform(0.0, cfg.w - 1.0);
                cv.y1 = rng.uniform(0.0, cfg.h - 1.0);
                cv.x2 = rng.uniform(0.0, cfg.w - 1.0);
                cv.y2 = rng.uniform(0.0, cfg.h - 1.0);
                cv.radius = 0.5 * rng.uniform(cfg.thickness_min, cfg.thickness_max);
                cv.depth = rng.uniform(0.25, 0.45);
                curves.push_back(cv);
            }
            mask = raster_curves(curves, cfg.h, cfg.w);
            if (n_curves == 0) {
                // Zero curves is a legal degenerate config: blank mask, no sparsity bound.
                accepted = true;
                break;
            }
            const double fg = static_cast<double>(
                                  std::count(mask.v.begin(), mask.v.end(), std::uint8_t{1})) /
                              static_cast<double>(n_px);
            accepted = fg >= 0.02 && fg <= 0.4;
        }
        if (!accepted)
            throw ConfigError("gen-data: image " + std::to_string(i) +
                              ": foreground fraction stayed outside [0.02, 0.4] after 100 redraws");

        // Smooth background, dark curves, Gaussian noise, clamp to [0,1].
        const double fx = rng.uniform(0.5, 1.5), px = rng.u01();
        const double fy = rng.uniform(0.5, 1.5), py = rng.u01();
        std::vector<double> img(n_px);
        std::vector<double> dark(n_px, 0.0);
        for (const Curve& c : curves) {
            Mask one = raster_curves({c}, cfg.h, cfg.w);
            for (std::size_t k = 0; k < n_px; ++k)
                if (one.v[k]) dark[k] = std::max(dark[k], c.depth);
        }
        constexpr double tau = 6.283185307179586476925286766559;
        for (int y = 0; y < cfg.h; ++y)
            for (int x = 0; x < cfg.w; ++x) {
                const std::size_t k = static_cast<std::size_t>(y) * cfg.w + x;
                const double bg = 0.65 +
                                  0.2 * std::cos(tau * (fx * x / cfg.w + px)) *
                                      std::cos(tau * (fy * y / cfg.h + py));
                double v = bg - dark[k] + cfg.noise_sigma * rng.normal();
                img[k] = std::min(1.0, std::max(0.0, v));
            }

        char img_name[32], mask_name[32];
        std::snprintf(img_name, sizeof(img_name), "img_%03d.pgm", i);
        std::snprintf(mask_name, sizeof(mask_name), "mask_%03d.pgm", i);
        write_pgm((fs::path(dir) / img_name).string(), Tensor::from_data({cfg.h, cfg.w}, std::move(img)));
        write_pgm((fs::path(dir) / mask_name).string(), mask);
        ds.items.push_back({img_name, mask_name});
    }

    write_manifest(ds);
    return ds;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const DatasetItem& item : ds.items)
        for (const std::string& rel : {item.image, item.mask}) {
            h = fnv1a64(rel.data(), rel.size(), h);
            const std::string bytes = read_file((fs::path(ds.dir) / rel).string());
            h = fnv1a64(bytes.data(), bytes.size(), h);
        }
    return h;
}

} // namespace uqd
