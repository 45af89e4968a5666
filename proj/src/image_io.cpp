#include "wfm/image_io.hpp"

#include "wfm/error.hpp"

#include <png.h>

namespace wfm {

namespace {

std::vector<uint8_t> decode(const std::string& path, png_uint_32 format, int64_t& height,
                            int64_t& width) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG '" + path + "': " + image.message);
    }
    image.format = format;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG '" + path + "': " + image.message);
    }
    height = image.height;
    width = image.width;
    return buf;
}

void encode(const std::string& path, png_uint_32 format, int64_t height, int64_t width,
            const uint8_t* pixels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.format = format;
    image.height = static_cast<png_uint_32>(height);
    image.width = static_cast<png_uint_32>(width);
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr)) {
        throw IoError("cannot write PNG '" + path + "': " + image.message);
    }
}

}  // namespace

RgbImage read_png_rgb8(const std::string& path) {
    RgbImage out;
    out.data = decode(path, PNG_FORMAT_RGB, out.height, out.width);
    return out;
}

torch::Tensor read_png_rgb(const std::string& path) {
    auto rgb = read_png_rgb8(path);
    auto t = torch::from_blob(rgb.data.data(), {rgb.height, rgb.width, 3}, torch::kUInt8);
    return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
}

void write_png_rgb(const std::string& path, const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) {
        throw PreconditionError("write_png_rgb: expected 3 x H x W, got " +
                                c10::str(image.sizes()));
    }
    auto bytes = image.detach()
                     .to(torch::kFloat32)
                     .clamp(0.0, 1.0)
                     .mul(255.0)
                     .round()
                     .to(torch::kUInt8)
                     .permute({1, 2, 0})
                     .contiguous();
    encode(path, PNG_FORMAT_RGB, image.size(1), image.size(2), bytes.data_ptr<uint8_t>());
}

GrayImage read_png_gray(const std::string& path) {
    GrayImage out;
    out.data = decode(path, PNG_FORMAT_GRAY, out.height, out.width);
    return out;
}

void write_png_gray(const std::string& path, const GrayImage& image) {
    if (static_cast<int64_t>(image.data.size()) != image.height * image.width) {
        throw PreconditionError("write_png_gray: buffer size does not match dims");
    }
    encode(path, PNG_FORMAT_GRAY, image.height, image.width, image.data.data());
}

}  // namespace wfm
