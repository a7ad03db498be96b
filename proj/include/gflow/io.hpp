#pragma once

#include <filesystem>

#include "gflow/array.hpp"

namespace gflow {

// GFT1 tensor file: "GFT1", u8 rank, u32 dims[rank], little-endian f32
// payload in row-major, channel-last order.
void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

// 8-bit PNG. Gray, gray+alpha, RGB and RGBA inputs are accepted; alpha is
// dropped. Values map to [0, 1].
Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& img);
Mask load_mask_png(const std::filesystem::path& path);
void save_mask_png(const std::filesystem::path& path, const Mask& mask);
// Normalizes a scalar map to [0, 1] by its maximum and writes it as gray PNG.
void save_heatmap_png(const std::filesystem::path& path, const Image& map);

// Loads an image from either PNG or GFT1 (by extension).
Image load_image(const std::filesystem::path& path);

}  // namespace gflow
