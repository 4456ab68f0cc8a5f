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
#include <doctest.h>

#include "frozen_oracles.hpp"
#include "regioncap/imaging.hpp"
#include "regioncap/rng.hpp"
#include "test_support.hpp"
#include "tolerances.hpp"

using namespace regioncap;

namespace {

const std::filesystem::path kFixtures = REGIONCAP_FIXTURE_DIR;

ImageError::Kind load_error_kind(const std::filesystem::path& p) {
  try {
    load_image(p);
  } catch (const ImageError& e) {
    return e.kind();
  }
  FAIL("expected an ImageError for " << p);
  return ImageError::Kind::Io;
}

void check_lab(Rgb c, const std::vector<double>& expected, double tolerance) {
  const Lab lab = srgb_to_lab(c);
  CHECK(std::abs(lab.l - expected[0]) < tolerance);
  CHECK(std::abs(lab.a - expected[1]) < tolerance);
  CHECK(std::abs(lab.b - expected[2]) < tolerance);
}

}  // namespace

TEST_CASE("load_image decodes the reference-encoded fixtures") {
  const Image white = load_image(kFixtures / "white1x1.png");
  CHECK(white == Image(1, 1, Rgb{255, 255, 255}));

  const Image checker = load_image(kFixtures / "checker2x2.png");
  CHECK(checker == Image(2, 2, {Rgb{255, 0, 0}, Rgb{0, 255, 0}, Rgb{0, 0, 255}, Rgb{255, 255, 255}}));

  const Image rgba = load_image(kFixtures / "rgba2x1.png");
  CHECK(rgba == Image(2, 1, {Rgb{10, 20, 30}, Rgb{40, 50, 60}}));

  const Image jpeg = load_image(kFixtures / "orange8x8.jpg");
  CHECK(jpeg == Image(8, 8, Rgb{200, 100, 50}));
}

TEST_CASE("load_image reports distinct errors") {
  CHECK(load_error_kind(kFixtures / "does_not_exist.png") == ImageError::Kind::MissingFile);
  CHECK(load_error_kind(kFixtures / "not_an_image.png") == ImageError::Kind::UnsupportedFormat);
  CHECK(load_error_kind(kFixtures / "truncated.png") == ImageError::Kind::Corrupt);
}

TEST_CASE("PNG save/load round trip") {
  CounterRng rng(3);
  const Image img = support::random_image(7, 5, rng);
  const auto dir = support::temp_dir("imaging");
  save_png(img, dir / "x.png");
  CHECK(load_image(dir / "x.png") == img);
  CHECK(decode_png(encode_png(img)) == img);
}

TEST_CASE("sRGB to CIELAB") {
  const Lab white = srgb_to_lab({255, 255, 255});
  CHECK(std::abs(white.l - 100.0) < tol::kLabExact);
  CHECK(std::abs(white.a) < tol::kLabExact);
  CHECK(std::abs(white.b) < tol::kLabExact);
  const Lab black = srgb_to_lab({0, 0, 0});
  CHECK(std::abs(black.l) < tol::kLabExact);
  CHECK(std::abs(black.a) < tol::kLabExact);
  CHECK(std::abs(black.b) < tol::kLabExact);

  check_lab({255, 0, 0}, oracle::kLabRed, tol::kLabOracle);
  check_lab({0, 255, 0}, oracle::kLabGreen, tol::kLabOracle);
  check_lab({0, 0, 255}, oracle::kLabBlue, tol::kLabOracle);
  check_lab({128, 64, 32}, oracle::kLabBrown, tol::kLabOracle);
}

TEST_CASE("L stays in [0, 100] over random colours") {
  CounterRng rng(11);
  for (int i = 0; i < 20000; ++i) {
    const Rgb c{static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
                static_cast<std::uint8_t>(rng.below(256))};
    const Lab lab = srgb_to_lab(c);
    REQUIRE(lab.l >= -tol::kLabRange);
    REQUIRE(lab.l <= 100.0 + tol::kLabRange);
  }
  const Image img = support::random_image(9, 4, rng);
  const LabImage lab = rgb_to_lab(img);
  CHECK(lab.width() == 9);
  CHECK(lab.height() == 4);
  const Lab p = lab.at(3, 2);
  const Lab q = srgb_to_lab(img.at(3, 2));
  CHECK(p.l == q.l);
  CHECK(p.a == q.a);
  CHECK(p.b == q.b);
}

TEST_CASE("crop") {
  Image img(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) img.at(x, y) = {static_cast<std::uint8_t>(10 * y + x), 0, 0};
  }
  CHECK(crop(img, {0, 0, 4, 4}) == img);
  CHECK(crop(img, {0, 0, 1, 1}) == Image(1, 1, Rgb{0, 0, 0}));
  CHECK(crop(img, {1, 2, 2, 2}) == Image(2, 2, {Rgb{21, 0, 0}, Rgb{22, 0, 0}, Rgb{31, 0, 0}, Rgb{32, 0, 0}}));
  CHECK_THROWS_AS(crop(img, {3, 3, 2, 1}), ImageError);
  CHECK_THROWS_AS(crop(img, {0, 0, 0, 1}), ImageError);
  CHECK_THROWS_AS(crop(img, {-1, 0, 1, 1}), ImageError);
}

TEST_CASE("crop of a crop equals the composed crop") {
  CounterRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 1 + static_cast<int>(rng.below(12));
    const int h = 1 + static_cast<int>(rng.below(12));
    const Image img = support::random_image(w, h, rng);
    const int x = static_cast<int>(rng.below(w));
    const int y = static_cast<int>(rng.below(h));
    const int bw = 1 + static_cast<int>(rng.below(w - x));
    const int bh = 1 + static_cast<int>(rng.below(h - y));
    const int x2 = static_cast<int>(rng.below(bw));
    const int y2 = static_cast<int>(rng.below(bh));
    const int bw2 = 1 + static_cast<int>(rng.below(bw - x2));
    const int bh2 = 1 + static_cast<int>(rng.below(bh - y2));
    REQUIRE(crop(crop(img, {x, y, bw, bh}), {x2, y2, bw2, bh2}) == crop(img, {x + x2, y + y2, bw2, bh2}));
  }
}

TEST_CASE("bilinear resize") {
  CounterRng rng(9);
  const Image img = support::random_image(6, 5, rng);
  CHECK(resize(img, 6, 5) == img);

  for (int trial = 0; trial < 50; ++trial) {
    const Rgb c{static_cast<std::uint8_t>(rng.below(256)), static_cast<std::uint8_t>(rng.below(256)),
                static_cast<std::uint8_t>(rng.below(256))};
    const int w = 1 + static_cast<int>(rng.below(9));
    const int h = 1 + static_cast<int>(rng.below(9));
    const int tw = 1 + static_cast<int>(rng.below(40));
    const int th = 1 + static_cast<int>(rng.below(40));
    REQUIRE(resize(Image(w, h, c), tw, th) == Image(tw, th, c));
  }

  // Pixel centres of the 4-wide output map to source x = -0.25, 0.25, 0.75,
  // 1.25, clamped to [0, 1]; weights 0, 0.25, 0.75, 1.
  const Image grad(2, 1, {Rgb{0, 0, 0}, Rgb{200, 100, 40}});
  CHECK(resize(grad, 4, 1) ==
        Image(4, 1, {Rgb{0, 0, 0}, Rgb{50, 25, 10}, Rgb{150, 75, 30}, Rgb{200, 100, 40}}));

  CHECK_THROWS_AS(resize(img, 0, 3), ImageError);
  CHECK_THROWS_AS(resize(img, 3, 0), ImageError);
}
