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
#include "regioncap/regionpipe.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "regioncap/rng.hpp"

namespace regioncap {

std::size_t MultiResFeatures::token_count() const {
  std::size_t n = 1;
  for (const auto& r : per_resolution) n += r.regions.size();
  return n;
}

// ---------------------------------------------------------------------------
// mock provider

namespace {
constexpr int kMockGrid = 4;
constexpr int kMockStats = kMockGrid * kMockGrid * 3 + 1;
}  // namespace

FeatureVector mock_embed(const Image& crop, int dim, int input_size, std::uint64_t seed) {
  if (crop.width() != input_size || crop.height() != input_size) {
    throw EmbedError(EmbedError::Kind::WrongInputSize,
                     "mock provider expects " + std::to_string(input_size) + "x" +
                         std::to_string(input_size) + " crops");
  }
  std::array<double, kMockStats> stats{};
  std::array<int, kMockGrid * kMockGrid> counts{};
  for (int y = 0; y < crop.height(); ++y) {
    const int cy = y * kMockGrid / crop.height();
    for (int x = 0; x < crop.width(); ++x) {
      const int cell = cy * kMockGrid + x * kMockGrid / crop.width();
      const Rgb& p = crop.at(x, y);
      stats[3 * cell] += p.r;
      stats[3 * cell + 1] += p.g;
      stats[3 * cell + 2] += p.b;
      ++counts[cell];
    }
  }
  for (int c = 0; c < kMockGrid * kMockGrid; ++c) {
    for (int ch = 0; ch < 3; ++ch) {
      double& s = stats[3 * c + ch];
      s = counts[c] ? s / (255.0 * counts[c]) - 0.5 : 0.0;
    }
  }
  stats[kMockStats - 1] = 1.0;

  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  const std::uint64_t key = mix64(seed);
  for (int j = 0; j < dim; ++j) {
    double acc = 0.0;
    for (int s = 0; s < kMockStats; ++s) {
      const std::uint64_t h = mix64(key ^ mix64(static_cast<std::uint64_t>(j) * kMockStats + s));
      const double weight = static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
      acc += weight * stats[s];
    }
    v[j] = acc;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  FeatureVector out;
  out.values.resize(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) {
    out.values[j] = static_cast<float>(norm > 0 ? v[j] / norm : 0.0);
  }
  return out;
}

MockProvider::MockProvider(int dim, int input_size, std::uint64_t seed)
    : dim_(dim), input_size_(input_size), seed_(seed) {
  if (dim < 1 || input_size < kMockGrid) {
    throw RegionError("mock provider needs dim >= 1 and input_size >= 4");
  }
}

FeatureVector MockProvider::embed(const Image& crop) const {
  return mock_embed(crop, dim_, input_size_, seed_);
}

// ---------------------------------------------------------------------------
// region extraction

std::vector<std::vector<Region>> extract_regions(const Image& img, std::span<const int> resolutions,
                                                 int input_size, const SlicConfig& slic_cfg) {
  if (resolutions.empty()) throw RegionError("at least one superpixel resolution is required");
  if (img.empty()) throw RegionError("cannot extract regions from an empty image");
  for (int k : resolutions) {
    if (k < 1) throw RegionError("superpixel resolutions must be >= 1");
  }
  const LabImage lab = rgb_to_lab(img);
  std::vector<std::vector<Region>> out;
  out.reserve(resolutions.size());
  for (std::size_t r = 0; r < resolutions.size(); ++r) {
    SlicConfig cfg = slic_cfg;
    cfg.k = resolutions[r];
    const LabelMap map = slic(lab, cfg);
    const std::vector<BBox> boxes = bounding_boxes(map);
    std::vector<Region> regions;
    regions.reserve(boxes.size());
    for (int label = 0; label < static_cast<int>(boxes.size()); ++label) {
      regions.push_back({static_cast<int>(r), label, boxes[label],
                         resize(crop(img, boxes[label]), input_size, input_size)});
    }
    out.push_back(std::move(regions));
  }
  return out;
}

MultiResFeatures encode_image(const Image& img, std::span<const int> resolutions,
                              const FeatureProvider& provider, const SlicConfig& slic_cfg) {
  const int size = provider.input_size();
  MultiResFeatures out;
  out.global = provider.embed(resize(img, size, size));
  out.global_box = {0, 0, img.width(), img.height()};
  auto check_dim = [&](const FeatureVector& v) {
    if (v.dim() != provider.dim()) {
      throw EmbedError(EmbedError::Kind::DimensionMismatch,
                       "provider '" + provider.name() + "' returned dimension " +
                           std::to_string(v.dim()) + ", expected " +
                           std::to_string(provider.dim()));
    }
  };
  check_dim(out.global);

  const auto regions = extract_regions(img, resolutions, size, slic_cfg);
  for (std::size_t r = 0; r < regions.size(); ++r) {
    ResolutionFeatures res;
    res.k = resolutions[r];
    res.regions.reserve(regions[r].size());
    for (const Region& region : regions[r]) {
      FeatureVector v = provider.embed(region.crop);
      check_dim(v);
      res.regions.push_back({region.label, region.box, std::move(v)});
    }
    out.per_resolution.push_back(std::move(res));
  }
  return out;
}

// ---------------------------------------------------------------------------
// feature file

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'S', 'C', 'F', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return pos_ + n <= bytes_.size(); }
  std::uint8_t u8() { return bytes_[pos_++]; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, std::uint8_t kind, std::uint32_t res_index, std::uint32_t label,
                  const BBox& box, const FeatureVector& v) {
  w.u8(kind);
  w.u32(res_index);
  w.u32(label);
  w.u32(static_cast<std::uint32_t>(box.x));
  w.u32(static_cast<std::uint32_t>(box.y));
  w.u32(static_cast<std::uint32_t>(box.w));
  w.u32(static_cast<std::uint32_t>(box.h));
  for (float f : v.values) w.f32(f);
}

}  // namespace

std::vector<std::uint8_t> serialize_features(const MultiResFeatures& features) {
  const int dim = features.dim();
  for (const auto& res : features.per_resolution) {
    for (const auto& reg : res.regions) {
      if (reg.vec.dim() != dim) throw RegionError("feature vectors must share one dimension");
    }
  }
  Writer w;
  for (auto b : kMagic) w.u8(b);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(features.per_resolution.size()));
  for (const auto& res : features.per_resolution) {
    w.u32(static_cast<std::uint32_t>(res.k));
    w.u32(static_cast<std::uint32_t>(res.regions.size()));
  }
  write_record(w, 0, 0, 0, features.global_box, features.global);
  for (std::size_t r = 0; r < features.per_resolution.size(); ++r) {
    for (const auto& reg : features.per_resolution[r].regions) {
      write_record(w, 1, static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(reg.label),
                   reg.box, reg.vec);
    }
  }
  return w.take();
}

MultiResFeatures deserialize_features(std::span<const std::uint8_t> bytes) {
  using Kind = FeatureFileError::Kind;
  Reader r(bytes);
  if (!r.has(4)) throw FeatureFileError(Kind::Truncated, "feature file header truncated");
  for (auto b : kMagic) {
    if (r.u8() != b) throw FeatureFileError(Kind::BadMagic, "not a feature file (bad magic)");
  }
  if (!r.has(12)) throw FeatureFileError(Kind::Truncated, "feature file header truncated");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FeatureFileError(Kind::VersionMismatch,
                           "unsupported feature file version " + std::to_string(version));
  }
  const std::uint32_t dim = r.u32();
  const std::uint32_t nres = r.u32();
  if (!r.has(static_cast<std::size_t>(nres) * 8)) {
    throw FeatureFileError(Kind::Truncated, "feature file header truncated");
  }
  MultiResFeatures out;
  std::vector<std::uint32_t> counts(nres);
  std::size_t total = 1;
  for (std::uint32_t i = 0; i < nres; ++i) {
    ResolutionFeatures res;
    res.k = static_cast<int>(r.u32());
    counts[i] = r.u32();
    total += counts[i];
    res.regions.reserve(counts[i]);
    out.per_resolution.push_back(std::move(res));
  }

  const std::size_t record_size = 1 + 4 * 6 + static_cast<std::size_t>(dim) * 4;
  for (std::size_t rec = 0; rec < total; ++rec) {
    if (!r.has(record_size)) {
      throw FeatureFileError(Kind::Truncated,
                             "feature file truncated in record " + std::to_string(rec),
                             static_cast<long>(rec));
    }
    const std::uint8_t kind = r.u8();
    const std::uint32_t res_index = r.u32();
    const std::uint32_t label = r.u32();
    BBox box;
    box.x = static_cast<int>(r.u32());
    box.y = static_cast<int>(r.u32());
    box.w = static_cast<int>(r.u32());
    box.h = static_cast<int>(r.u32());
    FeatureVector v;
    v.values.resize(dim);
    for (auto& f : v.values) f = r.f32();

    if (rec == 0) {
      if (kind != 0) throw FeatureFileError(Kind::Malformed, "first record must be the global feature");
      out.global = std::move(v);
      out.global_box = box;
      continue;
    }
    if (kind != 1 || res_index >= nres) {
      throw FeatureFileError(Kind::Malformed, "bad region record " + std::to_string(rec));
    }
    auto& res = out.per_resolution[res_index];
    if (res.regions.size() >= counts[res_index]) {
      throw FeatureFileError(Kind::Malformed, "too many records for resolution " +
                                                  std::to_string(res_index));
    }
    res.regions.push_back({static_cast<int>(label), box, std::move(v)});
  }
  if (!r.at_end()) throw FeatureFileError(Kind::Malformed, "trailing bytes after last record");
  return out;
}

void write_features(const MultiResFeatures& features, const std::filesystem::path& path) {
  const auto bytes = serialize_features(features);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FeatureFileError(FeatureFileError::Kind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FeatureFileError(FeatureFileError::Kind::Io, "short write to " + path.string());
}

MultiResFeatures read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureFileError(FeatureFileError::Kind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return deserialize_features(bytes);
}

// ---------------------------------------------------------------------------

Image render_overlay(const Image& img, const LabelMap& map, Rgb color) {
  if (img.width() != map.width() || img.height() != map.height()) {
    throw RegionError("overlay: image and label map dimensions differ");
  }
  Image out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const int l = map.at(x, y);
      const bool edge = (x > 0 && map.at(x - 1, y) != l) || (y > 0 && map.at(x, y - 1) != l);
      if (edge) out.at(x, y) = color;
    }
  }
  return out;
}

}  // namespace regioncap
