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
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "regioncap/imaging.hpp"
#include "regioncap/superpixel.hpp"

namespace regioncap {

struct FeatureVector {
  std::vector<float> values;

  int dim() const { return static_cast<int>(values.size()); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// One superpixel crop ready for embedding.
struct Region {
  int resolution_index = 0;
  int label = 0;
  BBox box;
  Image crop;
};

struct RegionFeature {
  int label = 0;
  BBox box;
  FeatureVector vec;

  friend bool operator==(const RegionFeature&, const RegionFeature&) = default;
};

struct ResolutionFeatures {
  int k = 0;
  std::vector<RegionFeature> regions;  // in label order

  friend bool operator==(const ResolutionFeatures&, const ResolutionFeatures&) = default;
};

/// Global feature plus one region-feature set per superpixel resolution.
struct MultiResFeatures {
  FeatureVector global;
  BBox global_box;
  std::vector<ResolutionFeatures> per_resolution;

  int dim() const { return global.dim(); }
  /// 1 + sum of region counts.
  std::size_t token_count() const;

  friend bool operator==(const MultiResFeatures&, const MultiResFeatures&) = default;
};

class RegionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmbedError : public std::runtime_error {
 public:
  enum class Kind { Network, HttpStatus, DimensionMismatch, MalformedBody, WrongInputSize };

  EmbedError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class FeatureFileError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Malformed };

  /// `record_index` is the 0-based record being read when a truncation was
  /// detected, or -1 when the header itself was short.
  FeatureFileError(Kind kind, const std::string& what, long record_index = -1)
      : std::runtime_error(what), kind_(kind), record_index_(record_index) {}

  Kind kind() const { return kind_; }
  long record_index() const { return record_index_; }

 private:
  Kind kind_;
  long record_index_;
};

/// Region feature extractor. Implementations must be safe for concurrent
/// embed() calls.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;

  virtual std::string name() const = 0;
  /// Side length of the square crops embed() accepts.
  virtual int input_size() const = 0;
  virtual int dim() const = 0;
  virtual FeatureVector embed(const Image& crop) const = 0;
};

/// Deterministic offline stand-in for a vision-language embedder: a seeded
/// random projection of 4x4-cell mean colours, L2-normalised.
FeatureVector mock_embed(const Image& crop, int dim, int input_size, std::uint64_t seed);

class MockProvider final : public FeatureProvider {
 public:
  explicit MockProvider(int dim = 512, int input_size = 32, std::uint64_t seed = 0x5eed);

  std::string name() const override { return "mock"; }
  int input_size() const override { return input_size_; }
  int dim() const override { return dim_; }
  FeatureVector embed(const Image& crop) const override;

 private:
  int dim_;
  int input_size_;
  std::uint64_t seed_;
};

/// Client for an embedding service: POST <base>/embed with a PNG body,
/// answered by {"embedding": [...]}. Opens one connection per call.
class HttpProvider final : public FeatureProvider {
 public:
  HttpProvider(std::string url, int dim, int input_size = 224, double timeout_seconds = 10.0);

  std::string name() const override { return "http"; }
  int input_size() const override { return input_size_; }
  int dim() const override { return dim_; }
  FeatureVector embed(const Image& crop) const override;

 private:
  std::string host_;  // scheme://host[:port]
  std::string path_;  // always ends in /embed
  int dim_;
  int input_size_;
  double timeout_seconds_;
};

FeatureVector http_embed(const Image& crop, const std::string& url, int expected_dim);

/// Segments the image once per entry of `resolutions` and returns, for each,
/// the bounding-box crops of every superpixel resized to `input_size`.
std::vector<std::vector<Region>> extract_regions(const Image& img, std::span<const int> resolutions,
                                                 int input_size, const SlicConfig& slic_cfg = {});

/// Global feature of the whole resized image plus per-resolution region
/// features in label order.
MultiResFeatures encode_image(const Image& img, std::span<const int> resolutions,
                              const FeatureProvider& provider, const SlicConfig& slic_cfg = {});

/// Little-endian "SCF1" container, version 1.
void write_features(const MultiResFeatures& features, const std::filesystem::path& path);
MultiResFeatures read_features(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_features(const MultiResFeatures& features);
MultiResFeatures deserialize_features(std::span<const std::uint8_t> bytes);

/// Copy of `img` with superpixel boundaries painted in `color`. A pixel is a
/// boundary pixel when its left or upper neighbour carries another label.
Image render_overlay(const Image& img, const LabelMap& map, Rgb color = {255, 0, 0});

}  // namespace regioncap
