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

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "regioncap/imaging.hpp"

namespace regioncap {

/// Per-pixel region assignment. Labels are contiguous in [0, region_count).
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int width, int height, std::vector<int> labels);

  int width() const { return width_; }
  int height() const { return height_; }
  int region_count() const { return region_count_; }

  int at(int x, int y) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<int>& labels() const { return labels_; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int region_count_ = 0;
  std::vector<int> labels_;
};

struct SlicConfig {
  int k = 10;
  double compactness = 10.0;
  int max_iters = 10;
  double convergence_eps = 0.25;
};

class SegmentationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Diagnostics from one SLIC run. `objective[t]` is the summed squared SLIC
/// distance right after assignment step t.
struct SlicTrace {
  std::vector<double> objective;
  std::vector<double> mean_displacement;
  /// Largest Chebyshev distance between a pixel and its assigned center,
  /// per assignment step.
  std::vector<double> max_chebyshev;
  double step = 0.0;  // grid interval S
  int iterations = 0;
  int center_count = 0;
};

/// Raw k-means labelling without connectivity enforcement. Labels index
/// the grid centers, so unused centers can leave gaps.
LabelMap slic_raw(const LabImage& img, const SlicConfig& cfg, SlicTrace* trace = nullptr);

/// Full segmentation: clustering followed by enforce_connectivity.
LabelMap slic(const LabImage& img, const SlicConfig& cfg, SlicTrace* trace = nullptr);

/// Splits every label into its 4-connected components, then merges each
/// component smaller than `min_size` pixels into the neighbour it shares
/// the longest boundary with (smallest first). If more than `max_regions`
/// remain, the smallest are merged the same way until the cap holds.
/// Output labels are contiguous, numbered in raster order of first pixel.
LabelMap enforce_connectivity(const LabelMap& raw, int min_size, int max_regions);

/// Convenience overload using min_size = (w*h/k)/4 and a cap of 2k regions.
LabelMap enforce_connectivity(const LabelMap& raw, int k);

/// Tightest axis-aligned box per label, indexed by label id.
std::vector<BBox> bounding_boxes(const LabelMap& map);

/// Plain-text dump: "width height region_count" header followed by one
/// label per pixel, one image row per line.
void write_label_map(const LabelMap& map, const std::filesystem::path& path);
LabelMap read_label_map(const std::filesystem::path& path);

}  // namespace regioncap
