#pragma once

#include "esn/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace esn {

// Grayscale PFM ("Pf"): header "Pf\n<w> <h>\n<scale>\n" followed by 32-bit
// float rows stored bottom-up; a negative scale marks little-endian payload.
// Rows are flipped to top-down on read. Color "PF" files are rejected.
Tensor<float> read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Tensor<float>& map);

// KITTI-style disparity: 16-bit single-channel PNG, stored value is
// disparity * 256, zero means "no ground truth".
std::pair<Tensor<float>, Tensor<float>> read_kitti_disparity(const std::string& path);
void write_kitti_disparity(const std::string& path, const Tensor<float>& disparity,
                           const Tensor<float>& valid);

// 8-bit images as (1, C, H, W) tensors scaled to [0, 1].
Tensor<float> read_image(const std::string& path);  // dispatches on extension (.png/.ppm)
void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                     index_t h, index_t w);
void write_png_rgb8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                    index_t h, index_t w);
void write_png_gray16(const std::string& path, const std::vector<std::uint16_t>& pixels,
                      index_t h, index_t w);

Tensor<float> read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor<float>& image);  // (1,3,H,W) in [0,1]

}  // namespace esn
