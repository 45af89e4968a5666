#pragma once

// 8-bit PNG read/write for images (3 x H x W float in [0, 1]) and
// single-channel maps.

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace wfm {

/// Decodes any PNG to RGB, returns 3 x H x W float32 with values v / 255.
torch::Tensor read_png_rgb(const std::string& path);

/// Writes a 3 x H x W tensor in [0, 1] (clamped, rounded to 8 bits).
void write_png_rgb(const std::string& path, const torch::Tensor& image);

struct GrayImage {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> data;
};

GrayImage read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const GrayImage& image);

/// Raw 8-bit RGB pixels, row-major, for palette decoding.
struct RgbImage {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> data;  ///< 3 bytes per pixel
};
RgbImage read_png_rgb8(const std::string& path);

}  // namespace wfm
