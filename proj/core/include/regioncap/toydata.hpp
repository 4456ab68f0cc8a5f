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
#include <string>
#include <vector>

#include "regioncap/imaging.hpp"

namespace regioncap {

/// Synthetic captioned image: a coloured shape on a plain background.
struct ToyImage {
  std::string id;
  std::string filename;
  Image image;
  std::string caption;
};

/// Up to 16 distinct scenes (4 colours x 2 shapes x 2 backgrounds).
std::vector<ToyImage> toy_images(int count = 8, int size = 32);

/// Writes the PNGs plus a Karpathy-layout dataset.json (every entry in the
/// train split) into `dir`. Returns the JSON path.
std::filesystem::path write_toy_dataset(const std::filesystem::path& dir, int count = 8,
                                        int size = 32);

}  // namespace regioncap
