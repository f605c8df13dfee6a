#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phyg/tensor.hpp"

namespace phyg {

// Ordered (image, label) pairs. Images are HxWx1 tensors with pixels in
// [0, 1]; labels index into [0, class_count).
struct Dataset {
    std::vector<Tensor> images;
    std::vector<int> labels;
    int class_count = 0;
    std::string name;

    std::int64_t size() const { return static_cast<std::int64_t>(images.size()); }

    // Checks the pairing, label range and pixel bounds.
    void validate() const;

    std::vector<std::vector<std::int64_t>> indices_by_class() const;
};

// IDX binary ingestion (big-endian): images magic 0x00000803 with u32
// count/rows/cols then raw bytes; labels magic 0x00000801 with u32 count then
// raw bytes. Pixels are scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes the IDX pair; pixels are quantized to round(p * 255).
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Deterministic 16x16 grayscale generator: each class is a distinct blob
// prototype (center on a class-indexed ring, width cycling with the class,
// jittered once from geometry_seed) plus per-sample Gaussian pixel noise,
// clamped to [0, 1].
Dataset synth_generate(int classes, int per_class, std::uint64_t geometry_seed,
                       double noise_sigma = 0.05);

// Stratified: round(fraction * count_c) samples per class c via seeded
// shuffle. Errors if any class would come out empty.
Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed);

// Stratified partition into k pairwise-disjoint datasets whose union is ds.
std::vector<Dataset> split_disjoint(const Dataset& ds, int parts, std::uint64_t seed);

}  // namespace phyg
