#pragma once

#include <string>
#include <vector>

#include "lrm/common.hpp"

namespace lrm {

// Float image, CHW layout, values in [0,1].
struct ImageF {
  int channels = 0, height = 0, width = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int c, int h, int w, float fill = 0.f)
      : channels(c), height(h), width(w),
        data(static_cast<size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t size() const { return data.size(); }
};

// Reads a PNG into 3-channel RGB floats. Grayscale expands to RGB; alpha is
// composited over a white background (training data is white-backed).
ImageF load_png(const std::string& path);

// Writes 8-bit RGB (values clamped to [0,1] and rounded).
void save_png(const ImageF& img, const std::string& path);

// Writes a 1-channel image as 16-bit grayscale PNG (clamped to [0,1]).
void save_png16_gray(const ImageF& img, const std::string& path);

// ASCII PPM (P3), 8-bit, one pixel per line. Bit-exact across platforms, used
// where tests compare rendered output byte-for-byte.
void save_ppm(const ImageF& img, const std::string& path);

ImageF resize_bilinear(const ImageF& img, int new_h, int new_w);

// Square resize to res x res; exact box average when the input is square with
// an integer ratio, bilinear otherwise.
ImageF fit_resolution(const ImageF& img, int res);

// Integer-factor box average; height/width must be divisible by factor.
ImageF box_downsample(const ImageF& img, int factor);

ImageF crop(const ImageF& img, int y0, int x0, int h, int w);

}  // namespace lrm
