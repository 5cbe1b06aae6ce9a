#ifndef UQD_DATA_HPP
#define UQD_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "uqd/prob_map.hpp"
#include "uqd/tensor.hpp"

namespace uqd {

// Synthetic vessel-like data: smooth bright background, dark random
// quadratic curves, Gaussian noise. The mask is the exact curve raster and
// its foreground fraction is forced into [0.02, 0.4] by redrawing.
struct SynthConfig {
    int n_images = 30;
    int h = 64;
    int w = 64;
    int curves_min = 2;
    int curves_max = 5;
    double thickness_min = 1.0;
    double thickness_max = 2.5;
    double noise_sigma = 0.05;
    std::uint64_t seed = 7;
};

struct DatasetItem {
    std::string image; // paths relative to the manifest directory
    std::string mask;
};

struct Dataset {
    std::string dir; // directory holding manifest.txt and the files
    std::vector<DatasetItem> items;
};

// In-memory dataset: images as [H,W] tensors in [0,1], masks binary.
struct LoadedDataset {
    std::vector<Tensor> images;
    std::vector<Mask> masks;
};

// Writes n_images image/mask PGM pairs plus manifest.txt into dir (created
// if missing). Deterministic given cfg. Unsatisfiable sparsity after 100
// redraws per image is a config error.
Dataset generate_synthetic(const SynthConfig& cfg, const std::string& dir);

// Manifest: UTF-8 text, one "image<TAB>mask" pair per line, paths relative
// to the manifest's directory. Duplicates or unresolvable paths are errors.
void write_manifest(const Dataset& ds);
Dataset load_manifest(const std::string& manifest_path);

LoadedDataset load_dataset(const Dataset& ds);

// Binary PGM ("P5", maxval 255). Image bytes map to [0,1] by /255; the
// writer rounds to nearest byte, so write-then-read of byte-grid data is
// value-exact. Masks are strict {0,255} files.
Tensor read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& image);
Mask read_pgm_mask(const std::string& path);
void write_pgm(const std::string& path, const Mask& mask);

// Grayscale PFM ("Pf", negative scale = little-endian, bottom-up rows),
// 32-bit storage. Out-of-range values are clamped to [0,1] on read; each
// clamp increments *clamp_warnings when given.
ProbMap read_pfm(const std::string& path, int* clamp_warnings = nullptr);
void write_pfm(const std::string& path, const ProbMap& p);

// FNV-1a 64-bit over raw bytes; dataset_checksum folds item names and file
// bytes in manifest order.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t dataset_checksum(const Dataset& ds);

} // namespace uqd

#endif
