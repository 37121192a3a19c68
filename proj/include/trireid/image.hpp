#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace trireid {

/// 8-bit image, HWC row-major, 1 (gray) or 3 (rgb) channels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;

  Image() = default;
  Image(int h, int w, int c)
      : height(h),
        width(w),
        channels(c),
        pixels(static_cast<size_t>(h) * w * c, 0) {}

  uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

/// Decodes an 8-bit PNG. Palette and 16-bit inputs are normalized to
/// 8-bit, alpha is stripped; result has 1 or 3 channels.
Image read_png(const std::string& path);

void write_png(const std::string& path, const Image& img);

/// Half-pixel-centered bilinear resampling.
Image resize_bilinear(const Image& src, int new_h, int new_w);

/// Rec.601 luma; weights sum to 1.
inline double luma601(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

}  // namespace trireid
