#include "lrm/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace lrm {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

ImageF load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  LRM_REQUIRE(fp, "cannot open PNG '", path, "' for reading");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  LRM_REQUIRE(png, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(format_msg("malformed PNG '", path, "'"));
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);          // palette/gray-depth/tRNS to full channels
  png_set_strip_16(png);        // 16-bit -> 8-bit
  png_set_gray_to_rgb(png);     // gray -> rgb
  png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);  // uniform RGBA path
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  LRM_REQUIRE(png_get_channels(png, info) == 4, "PNG decode did not normalize to RGBA");

  std::vector<png_byte> pixels(static_cast<size_t>(width) * height * 4);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * width * 4;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageF img(3, height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const png_byte* px = &pixels[(static_cast<size_t>(y) * width + x) * 4];
      const float a = px[3] / 255.f;
      for (int c = 0; c < 3; ++c) {
        // composite over white
        img.at(c, y, x) = (px[c] / 255.f) * a + (1.f - a);
      }
    }
  return img;
}

void save_png(const ImageF& img, const std::string& path) {
  LRM_REQUIRE(img.channels == 3, "save_png: expected 3-channel image, got ", img.channels);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  LRM_REQUIRE(fp, "cannot open PNG '", path, "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  LRM_REQUIRE(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(format_msg("PNG write failure for '", path, "'"));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void save_png16_gray(const ImageF& img, const std::string& path) {
  LRM_REQUIRE(img.channels == 1, "save_png16_gray: expected 1-channel image, got ", img.channels);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  LRM_REQUIRE(fp, "cannot open PNG '", path, "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  LRM_REQUIRE(png, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(format_msg("PNG write failure for '", path, "'"));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(img.width) * 2);  // network byte order
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float v = std::clamp(img.at(0, y, x), 0.f, 1.f);
      const auto q = static_cast<uint16_t>(std::lround(v * 65535.f));
      row[static_cast<size_t>(x) * 2 + 0] = static_cast<png_byte>(q >> 8);
      row[static_cast<size_t>(x) * 2 + 1] = static_cast<png_byte>(q & 0xFF);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void save_ppm(const ImageF& img, const std::string& path) {
  LRM_REQUIRE(img.channels == 3, "save_ppm: expected 3-channel image, got ", img.channels);
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  LRM_REQUIRE(fp, "cannot open PPM '", path, "' for writing");
  std::fprintf(fp.get(), "P3\n%d %d\n255\n", img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int q[3];
      for (int c = 0; c < 3; ++c)
        q[c] = static_cast<int>(std::lround(std::clamp(img.at(c, y, x), 0.f, 1.f) * 255.f));
      std::fprintf(fp.get(), "%d %d %d\n", q[0], q[1], q[2]);
    }
}

ImageF resize_bilinear(const ImageF& img, int new_h, int new_w) {
  LRM_REQUIRE(new_h >= 1 && new_w >= 1, "resize_bilinear: target must be at least 1x1");
  ImageF out(img.channels, new_h, new_w);
  // align-corners-false (pixel-center) mapping, the usual image-resize choice
  const float sy = static_cast<float>(img.height) / new_h;
  const float sx = static_cast<float>(img.width) / new_w;
  for (int y = 0; y < new_h; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.f, static_cast<float>(img.height - 1));
    const int y0 = std::min(static_cast<int>(fy), img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const float ty = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.f, static_cast<float>(img.width - 1));
      const int x0 = std::min(static_cast<int>(fx), img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const float tx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const float v = (1 - ty) * ((1 - tx) * img.at(c, y0, x0) + tx * img.at(c, y0, x1)) +
                        ty * ((1 - tx) * img.at(c, y1, x0) + tx * img.at(c, y1, x1));
        out.at(c, y, x) = v;
      }
    }
  }
  return out;
}

ImageF fit_resolution(const ImageF& img, int res) {
  if (img.width == res && img.height == res) return img;
  if (img.width % res == 0 && img.height == img.width) return box_downsample(img, img.width / res);
  return resize_bilinear(img, res, res);
}

ImageF box_downsample(const ImageF& img, int factor) {
  LRM_REQUIRE(factor >= 1 && img.height % factor == 0 && img.width % factor == 0,
              "box_downsample: ", img.height, "x", img.width, " not divisible by ", factor);
  ImageF out(img.channels, img.height / factor, img.width / factor);
  const float inv = 1.f / (static_cast<float>(factor) * factor);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        float acc = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += img.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

ImageF crop(const ImageF& img, int y0, int x0, int h, int w) {
  LRM_REQUIRE(y0 >= 0 && x0 >= 0 && y0 + h <= img.height && x0 + w <= img.width,
              "crop window [", y0, ",", x0, ",", h, ",", w, "] exceeds image ", img.height, "x",
              img.width);
  ImageF out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

}  // namespace lrm
