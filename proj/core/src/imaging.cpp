/*
 * Copyright 2026 The regioncap Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "regioncap/imaging.hpp"

#include <png.h>
// jpeglib.h needs size_t and FILE declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <iterator>

namespace regioncap {

Image::Image(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 1 || height < 1) {
    throw ImageError(ImageError::Kind::BadDimensions, "image dimensions must be >= 1");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

Image::Image(int width, int height, std::vector<Rgb> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 1 || height < 1) {
    throw ImageError(ImageError::Kind::BadDimensions, "image dimensions must be >= 1");
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    throw ImageError(ImageError::Kind::BadDimensions, "pixel count does not match width*height");
  }
}

LabImage::LabImage(int width, int height)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height) {}

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ImageError(ImageError::Kind::Io, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  static constexpr std::array<std::uint8_t, 8> kSig = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= kSig.size() && std::equal(kSig.begin(), kSig.end(), bytes.begin());
}

bool is_jpeg(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit;

  // Nothing with a destructor may live across the setjmp boundary.
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> raw;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError(ImageError::Kind::Corrupt, std::string("corrupt JPEG: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  raw.resize(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  std::vector<Rgb> px(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = {raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]};
  }
  return Image(width, height, std::move(px));
}

Image from_packed_rgb(int width, int height, const std::vector<std::uint8_t>& raw) {
  std::vector<Rgb> px(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = {raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]};
  }
  return Image(width, height, std::move(px));
}

std::vector<std::uint8_t> to_packed_rgb(const Image& img) {
  std::vector<std::uint8_t> raw(img.pixels().size() * 3);
  for (std::size_t i = 0; i < img.pixels().size(); ++i) {
    raw[3 * i] = img.pixels()[i].r;
    raw[3 * i + 1] = img.pixels()[i].g;
    raw[3 * i + 2] = img.pixels()[i].b;
  }
  return raw;
}

double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
  constexpr double kEpsilon = 216.0 / 24389.0;
  constexpr double kKappa = 24389.0 / 27.0;
  return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

}  // namespace

Image decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageError(ImageError::Kind::Corrupt, std::string("corrupt PNG: ") + image.message);
  }
  // Read as RGBA, then drop alpha.
  image.format = PNG_FORMAT_RGBA;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw ImageError(ImageError::Kind::Corrupt, "corrupt PNG: " + msg);
  }
  std::vector<std::uint8_t> rgb;
  rgb.reserve(raw.size() / 4 * 3);
  for (std::size_t i = 0; i < raw.size(); i += 4) rgb.insert(rgb.end(), raw.begin() + i, raw.begin() + i + 3);
  return from_packed_rgb(static_cast<int>(image.width), static_cast<int>(image.height), rgb);
}

Image load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw ImageError(ImageError::Kind::MissingFile, "no such image file: " + path.string());
  }
  auto bytes = read_all(path);
  if (is_png(bytes)) return decode_png(bytes);
  if (is_jpeg(bytes)) return decode_jpeg(bytes);
  throw ImageError(ImageError::Kind::UnsupportedFormat,
                   "not a PNG or JPEG file: " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  auto raw = to_packed_rgb(img);

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw ImageError(ImageError::Kind::Io, std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw ImageError(ImageError::Kind::Io, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw ImageError(ImageError::Kind::Io, "cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw ImageError(ImageError::Kind::Io, "short write to " + path.string());
  }
}

Lab srgb_to_lab(Rgb c) {
  const double r = srgb_to_linear(c.r / 255.0);
  const double g = srgb_to_linear(c.g / 255.0);
  const double b = srgb_to_linear(c.b / 255.0);

  // sRGB primaries; the reference white is the row sums of this matrix.
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  constexpr double kXn = 0.4124564 + 0.3575761 + 0.1804375;
  constexpr double kYn = 0.2126729 + 0.7151522 + 0.0721750;
  constexpr double kZn = 0.0193339 + 0.1191920 + 0.9503041;

  const double fx = lab_f(x / kXn);
  const double fy = lab_f(y / kYn);
  const double fz = lab_f(z / kZn);
  Lab out;
  out.l = std::clamp(116.0 * fy - 16.0, 0.0, 100.0);
  out.a = 500.0 * (fx - fy);
  out.b = 200.0 * (fy - fz);
  return out;
}

LabImage rgb_to_lab(const Image& img) {
  LabImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      out.at(x, y) = srgb_to_lab(img.at(x, y));
    }
  }
  return out;
}

Image crop(const Image& img, const BBox& box) {
  if (box.w < 1 || box.h < 1 || box.x < 0 || box.y < 0 || box.x + box.w > img.width() ||
      box.y + box.h > img.height()) {
    throw ImageError(ImageError::Kind::OutOfBounds, "crop box outside image bounds");
  }
  Image out(box.w, box.h);
  for (int j = 0; j < box.h; ++j) {
    for (int i = 0; i < box.w; ++i) {
      out.at(i, j) = img.at(box.x + i, box.y + j);
    }
  }
  return out;
}

Image resize(const Image& img, int width, int height) {
  if (width < 1 || height < 1) {
    throw ImageError(ImageError::Kind::BadDimensions, "resize target must be at least 1x1");
  }
  if (img.empty()) {
    throw ImageError(ImageError::Kind::BadDimensions, "cannot resize an empty image");
  }
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  Image out(width, height);
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      auto blend = [&](auto channel) {
        const double top = (1 - wx) * channel(img.at(x0, y0)) + wx * channel(img.at(x1, y0));
        const double bot = (1 - wx) * channel(img.at(x0, y1)) + wx * channel(img.at(x1, y1));
        return static_cast<std::uint8_t>(std::lround((1 - wy) * top + wy * bot));
      };
      out.at(x, y) = {blend([](const Rgb& p) { return double(p.r); }),
                      blend([](const Rgb& p) { return double(p.g); }),
                      blend([](const Rgb& p) { return double(p.b); })};
    }
  }
  return out;
}

}  // namespace regioncap
