#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "camds/tensor.hpp"

namespace camds {

// Parse failure with file and byte-offset context.
class ParseError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels, row-major.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;

    size_t index(int y, int x, int c = 0) const {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
};

// Binary PGM (P5) / PPM (P6), maxval 255 only.
Image read_pnm(const std::string& path);
void write_pgm(const Image& img, const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// [3,H,W] tensor in [0,1]; grayscale input is replicated across channels.
Tensor image_to_tensor(const Image& img);
// Inverse of image_to_tensor via round(v*255), clamped to [0,255].
Image tensor_to_image(const Tensor& t);

// Bilinear resize to the given width, height scaled to preserve aspect ratio.
Image resize_width(const Image& img, int target_width);
// Crop to the centered largest square.
Image center_crop_square(const Image& img);

}  // namespace camds
