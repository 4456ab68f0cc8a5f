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
#include "regioncap/toydata.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "regioncap/textdata.hpp"

namespace regioncap {

namespace {

struct Named {
  const char* name;
  Rgb rgb;
};

constexpr Named kColours[] = {
    {"red", {220, 30, 30}}, {"green", {30, 180, 60}}, {"blue", {40, 60, 220}}, {"yellow", {235, 215, 40}}};
constexpr Named kBackgrounds[] = {{"white", {245, 245, 245}}, {"black", {15, 15, 15}}};
constexpr const char* kShapes[] = {"square", "circle"};

}  // namespace

std::vector<ToyImage> toy_images(int count, int size) {
  if (count < 1 || count > 16) throw std::invalid_argument("toy_images: count must be in [1, 16]");
  if (size < 8) throw std::invalid_argument("toy_images: size must be >= 8");
  std::vector<ToyImage> out;
  for (int i = 0; i < count; ++i) {
    const Named& fg = kColours[i % 4];
    const Named& bg = kBackgrounds[(i / 4) % 2];
    const char* shape = kShapes[(i / 8 + i) % 2];
    Image img(size, size, bg.rgb);
    const double c = (size - 1) / 2.0;
    const double r = size / 4.0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x - c;
        const double dy = y - c;
        const bool inside = shape == kShapes[0] ? std::abs(dx) <= r && std::abs(dy) <= r
                                                : dx * dx + dy * dy <= r * r;
        if (inside) img.at(x, y) = fg.rgb;
      }
    }
    ToyImage t;
    t.id = std::to_string(i);
    t.filename = "toy_" + std::to_string(i) + ".png";
    t.image = std::move(img);
    t.caption = std::string("a ") + fg.name + " " + shape + " on a " + bg.name + " background";
    out.push_back(std::move(t));
  }
  return out;
}

std::filesystem::path write_toy_dataset(const std::filesystem::path& dir, int count, int size) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json images = nlohmann::ordered_json::array();
  for (const ToyImage& t : toy_images(count, size)) {
    save_png(t.image, dir / t.filename);
    nlohmann::ordered_json tokens = tokenize(t.caption);
    images.push_back({{"cocoid", std::stoi(t.id)},
                      {"filename", t.filename},
                      {"split", "train"},
                      {"sentences", {{{"raw", t.caption}, {"tokens", tokens}}}}});
  }
  const auto path = dir / "dataset.json";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::ordered_json{{"images", images}}.dump(2) << '\n';
  return path;
}

}  // namespace regioncap
