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
#include "regioncap/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <utility>

namespace regioncap {

LabelMap::LabelMap(int width, int height, std::vector<int> labels)
    : width_(width), height_(height), labels_(std::move(labels)) {
  if (width < 1 || height < 1 || labels_.size() != static_cast<std::size_t>(width) * height) {
    throw SegmentationError("label map size does not match its dimensions");
  }
  int max_label = -1;
  for (int l : labels_) {
    if (l < 0) throw SegmentationError("label map contains a negative label");
    max_label = std::max(max_label, l);
  }
  region_count_ = max_label + 1;
}

namespace {

struct Center {
  double l, a, b;
  double x, y;
};

double lab_dist2(const Lab& p, const Center& c) {
  const double dl = p.l - c.l;
  const double da = p.a - c.a;
  const double db = p.b - c.b;
  return dl * dl + da * da + db * db;
}

double lab_diff2(const Lab& p, const Lab& q) {
  const double dl = p.l - q.l;
  const double da = p.a - q.a;
  const double db = p.b - q.b;
  return dl * dl + da * da + db * db;
}

double gradient_at(const LabImage& img, int x, int y) {
  const int w = img.width();
  const int h = img.height();
  const Lab& left = img.at(std::max(x - 1, 0), y);
  const Lab& right = img.at(std::min(x + 1, w - 1), y);
  const Lab& up = img.at(x, std::max(y - 1, 0));
  const Lab& down = img.at(x, std::min(y + 1, h - 1));
  return lab_diff2(right, left) + lab_diff2(down, up);
}

std::vector<Center> seed_centers(const LabImage& img, int k) {
  const int w = img.width();
  const int h = img.height();
  const int nx = std::clamp(static_cast<int>(std::ceil(std::sqrt(double(k) * w / h))), 1,
                            std::min(k, w));
  const int ny = std::clamp(static_cast<int>(std::lround(double(k) / nx)), 1, h);

  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      double cx = (i + 0.5) * w / nx - 0.5;
      double cy = (j + 0.5) * h / ny - 0.5;
      const int px = std::clamp(static_cast<int>(std::floor(cx + 0.5)), 0, w - 1);
      const int py = std::clamp(static_cast<int>(std::floor(cy + 0.5)), 0, h - 1);
      // Move to the lowest-gradient pixel of the 3x3 neighbourhood; the
      // seed only moves on a strict improvement.
      double best = gradient_at(img, px, py);
      int bx = px;
      int by = py;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int qx = px + dx;
          const int qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
          const double g = gradient_at(img, qx, qy);
          if (g < best) {
            best = g;
            bx = qx;
            by = qy;
          }
        }
      }
      if (bx != px || by != py) {
        cx = bx;
        cy = by;
      }
      const Lab& c = img.at(bx, by);
      centers.push_back({c.l, c.a, c.b, cx, cy});
    }
  }
  return centers;
}

void validate(const LabImage& img, const SlicConfig& cfg) {
  if (img.empty()) throw SegmentationError("cannot segment an empty image");
  if (cfg.k < 1) throw SegmentationError("superpixel count k must be >= 1");
  if (static_cast<long long>(cfg.k) > static_cast<long long>(img.width()) * img.height()) {
    throw SegmentationError("superpixel count k exceeds the pixel count");
  }
  if (!(cfg.compactness > 0)) throw SegmentationError("compactness must be positive");
  if (cfg.max_iters < 1) throw SegmentationError("max_iters must be >= 1");
}

}  // namespace

LabelMap slic_raw(const LabImage& img, const SlicConfig& cfg, SlicTrace* trace) {
  validate(img, cfg);
  const int w = img.width();
  const int h = img.height();
  const double step = std::sqrt(double(w) * h / cfg.k);
  const double spatial_weight = (cfg.compactness / step) * (cfg.compactness / step);

  std::vector<Center> centers = seed_centers(img, cfg.k);
  const int nc = static_cast<int>(centers.size());
  const std::size_t npx = static_cast<std::size_t>(w) * h;

  std::vector<int> labels(npx, -1);
  std::vector<double> dist(npx);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  auto distance2 = [&](int x, int y, const Center& c) {
    const double dx = x - c.x;
    const double dy = y - c.y;
    return lab_dist2(img.at(x, y), c) + (dx * dx + dy * dy) * spatial_weight;
  };
  auto chebyshev = [](int x, int y, const Center& c) {
    return std::max(std::abs(x - c.x), std::abs(y - c.y));
  };

  if (trace) *trace = SlicTrace{};
  if (trace) {
    trace->center_count = nc;
    trace->step = step;
  }

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    // Keep the current assignment as a candidate while its center is within 2S.
    for (std::size_t i = 0; i < npx; ++i) {
      const int x = static_cast<int>(i % w);
      const int y = static_cast<int>(i / w);
      const int cur = labels[i];
      if (cur >= 0 && chebyshev(x, y, centers[cur]) <= 2 * step) {
        dist[i] = distance2(x, y, centers[cur]);
      } else {
        labels[i] = -1;
        dist[i] = kInf;
      }
    }

    for (int c = 0; c < nc; ++c) {
      const Center& ctr = centers[c];
      const int x0 = std::max(0, static_cast<int>(std::ceil(ctr.x - step)));
      const int x1 = std::min(w - 1, static_cast<int>(std::floor(ctr.x + step)));
      const int y0 = std::max(0, static_cast<int>(std::ceil(ctr.y - step)));
      const int y1 = std::min(h - 1, static_cast<int>(std::floor(ctr.y + step)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          const double d = distance2(x, y, ctr);
          if (d < dist[i] || (d == dist[i] && c < labels[i])) {
            dist[i] = d;
            labels[i] = c;
          }
        }
      }
    }

    // Pixels left uncovered after the centers drifted.
    for (std::size_t i = 0; i < npx; ++i) {
      if (labels[i] >= 0) continue;
      const int x = static_cast<int>(i % w);
      const int y = static_cast<int>(i / w);
      int best = -1;
      double best_d = kInf;
      for (int pass = 0; pass < 2 && best < 0; ++pass) {
        for (int c = 0; c < nc; ++c) {
          if (pass == 0 && chebyshev(x, y, centers[c]) > 2 * step) continue;
          const double d = distance2(x, y, centers[c]);
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
      }
      labels[i] = best;
      dist[i] = best_d;
    }

    double objective = 0.0;
    double max_cheb = 0.0;
    for (std::size_t i = 0; i < npx; ++i) {
      objective += dist[i];
      max_cheb = std::max(max_cheb, chebyshev(static_cast<int>(i % w), static_cast<int>(i / w),
                                              centers[labels[i]]));
    }

    std::vector<Center> sums(nc, Center{0, 0, 0, 0, 0});
    std::vector<std::size_t> counts(nc, 0);
    for (std::size_t i = 0; i < npx; ++i) {
      const int c = labels[i];
      const Lab& p = img.pixels()[i];
      sums[c].l += p.l;
      sums[c].a += p.a;
      sums[c].b += p.b;
      sums[c].x += static_cast<double>(i % w);
      sums[c].y += static_cast<double>(i / w);
      ++counts[c];
    }
    double displacement = 0.0;
    for (int c = 0; c < nc; ++c) {
      if (counts[c] == 0) continue;
      const double n = static_cast<double>(counts[c]);
      Center next{sums[c].l / n, sums[c].a / n, sums[c].b / n, sums[c].x / n, sums[c].y / n};
      displacement += std::hypot(next.x - centers[c].x, next.y - centers[c].y);
      centers[c] = next;
    }
    displacement /= nc;

    if (trace) {
      trace->objective.push_back(objective);
      trace->mean_displacement.push_back(displacement);
      trace->max_chebyshev.push_back(max_cheb);
      trace->iterations = iter + 1;
    }
    if (displacement < cfg.convergence_eps) break;
  }
  return LabelMap(w, h, std::move(labels));
}

LabelMap slic(const LabImage& img, const SlicConfig& cfg, SlicTrace* trace) {
  return enforce_connectivity(slic_raw(img, cfg, trace), cfg.k);
}

LabelMap enforce_connectivity(const LabelMap& raw, int min_size, int max_regions) {
  const int w = raw.width();
  const int h = raw.height();
  const std::size_t npx = static_cast<std::size_t>(w) * h;
  max_regions = std::max(max_regions, 1);

  // 4-connected components, numbered in raster order of their first pixel.
  std::vector<int> comp(npx, -1);
  std::vector<int> size;
  std::vector<int> stack;
  for (std::size_t start = 0; start < npx; ++start) {
    if (comp[start] >= 0) continue;
    const int id = static_cast<int>(size.size());
    const int label = raw.labels()[start];
    int count = 0;
    comp[start] = id;
    stack.push_back(static_cast<int>(start));
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++count;
      const int x = p % w;
      const int y = p / w;
      const int nbrs[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
        const int q = n[1] * w + n[0];
        if (comp[q] < 0 && raw.labels()[q] == label) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
    size.push_back(count);
  }

  const int ncomp = static_cast<int>(size.size());
  std::vector<std::map<int, int>> boundary(ncomp);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int a = comp[static_cast<std::size_t>(y) * w + x];
      if (x + 1 < w) {
        const int b = comp[static_cast<std::size_t>(y) * w + x + 1];
        if (a != b) {
          ++boundary[a][b];
          ++boundary[b][a];
        }
      }
      if (y + 1 < h) {
        const int b = comp[static_cast<std::size_t>(y + 1) * w + x];
        if (a != b) {
          ++boundary[a][b];
          ++boundary[b][a];
        }
      }
    }
  }

  std::vector<int> parent(ncomp);
  for (int i = 0; i < ncomp; ++i) parent[i] = i;
  std::set<std::pair<int, int>> by_size;
  for (int i = 0; i < ncomp; ++i) by_size.insert({size[i], i});
  int active = ncomp;

  while (!by_size.empty()) {
    const auto [sz, a] = *by_size.begin();
    if (sz >= min_size && active <= max_regions) break;
    if (boundary[a].empty()) break;  // only one component left
    int target = -1;
    int longest = -1;
    for (const auto& [n, len] : boundary[a]) {
      if (len > longest) {
        longest = len;
        target = n;
      }
    }
    by_size.erase(by_size.begin());
    by_size.erase({size[target], target});
    size[target] += size[a];
    by_size.insert({size[target], target});
    for (const auto& [n, len] : boundary[a]) {
      boundary[n].erase(a);
      if (n == target) continue;
      boundary[target][n] += len;
      boundary[n][target] += len;
    }
    boundary[a].clear();
    parent[a] = target;
    --active;
  }

  auto root = [&](int c) {
    while (parent[c] != c) c = parent[c];
    return c;
  };
  std::vector<int> relabel(ncomp, -1);
  std::vector<int> out(npx);
  int next = 0;
  for (std::size_t i = 0; i < npx; ++i) {
    const int r = root(comp[i]);
    if (relabel[r] < 0) relabel[r] = next++;
    out[i] = relabel[r];
  }
  return LabelMap(w, h, std::move(out));
}

LabelMap enforce_connectivity(const LabelMap& raw, int k) {
  const long long area = static_cast<long long>(raw.width()) * raw.height();
  const int min_size = static_cast<int>((area / std::max(k, 1)) / 4);
  return enforce_connectivity(raw, min_size, 2 * std::max(k, 1));
}

std::vector<BBox> bounding_boxes(const LabelMap& map) {
  const int n = map.region_count();
  std::vector<int> x0(n, map.width()), y0(n, map.height()), x1(n, -1), y1(n, -1);
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const int l = map.at(x, y);
      x0[l] = std::min(x0[l], x);
      y0[l] = std::min(y0[l], y);
      x1[l] = std::max(x1[l], x);
      y1[l] = std::max(y1[l], y);
    }
  }
  std::vector<BBox> boxes(n);
  for (int l = 0; l < n; ++l) {
    if (x1[l] < 0) {
      throw SegmentationError("label " + std::to_string(l) + " has no pixels");
    }
    boxes[l] = {x0[l], y0[l], x1[l] - x0[l] + 1, y1[l] - y0[l] + 1};
  }
  return boxes;
}

void write_label_map(const LabelMap& map, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw SegmentationError("cannot write " + path.string());
  out << map.width() << ' ' << map.height() << ' ' << map.region_count() << '\n';
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      out << map.at(x, y) << (x + 1 < map.width() ? ' ' : '\n');
    }
  }
  if (!out) throw SegmentationError("short write to " + path.string());
}

LabelMap read_label_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SegmentationError("cannot open " + path.string());
  int w = 0, h = 0, count = 0;
  if (!(in >> w >> h >> count) || w < 1 || h < 1) {
    throw SegmentationError("bad label map header in " + path.string());
  }
  std::vector<int> labels(static_cast<std::size_t>(w) * h);
  for (int& l : labels) {
    if (!(in >> l)) throw SegmentationError("truncated label map " + path.string());
  }
  LabelMap map(w, h, std::move(labels));
  if (map.region_count() != count) {
    throw SegmentationError("label map header region_count disagrees with its labels");
  }
  return map;
}

}  // namespace regioncap
