#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dualvit/tensor.hpp"

namespace dualvit {

// Channel-last images in [0, 1] with integer labels.
struct Dataset {
    Tensor<float> images;  // [N, H, W, 3]
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t height() const { return images.dim(1); }
    std::size_t width() const { return images.dim(2); }

    // Throws InputError when shapes or labels are inconsistent.
    void validate() const;
    // Copies samples [indices] into a [B, H, W, 3] batch.
    Tensor<float> gather(std::span<const std::size_t> indices, std::vector<int>* labels_out) const;
};

// Class-conditional Gaussian blobs: each class gets its own blob centres and
// colours, then N(0, 0.1^2) pixel noise. Values are clamped to [0, 1] and
// rounded to multiples of 1/255 so the packed format stores them exactly.
// Labels cycle 0, 1, ..., C-1, 0, 1, ... If `means` is given it receives the
// noise-free image of each class (H*W*3 values, unquantized).
Dataset make_synthetic(std::size_t num_classes, std::size_t per_class, std::size_t resolution, std::uint64_t seed,
                       std::vector<std::vector<float>>* means = nullptr);

// Packed dataset "DVDS" v1, little-endian:
//   "DVDS" u32 version=1 u32 N u16 H u16 W u16 channels=3 u16 classes
//   N x (u16 label, H*W*3 bytes row-major, value = byte / 255)
std::vector<std::uint8_t> encode_packed_dataset(const Dataset& data);
Dataset decode_packed_dataset(std::span<const std::uint8_t> bytes);
void save_packed_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_packed_dataset(const std::filesystem::path& path);

// Whole-file helpers; InputError if the file cannot be opened.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dualvit
