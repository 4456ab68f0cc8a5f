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
#include "regioncap/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

namespace regioncap {

namespace {

constexpr char kMagic[4] = {'S', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw CheckpointError("checkpoint truncated");
  }
};

}  // namespace

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("short write to " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f),
                                        std::istreambuf_iterator<char>()};
  Cursor c{bytes};
  c.need(4);
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw CheckpointError("not a checkpoint file: " + path.string());
  }
  c.pos = 4;
  if (const auto version = c.u32(); version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = c.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = c.u32();
    c.need(len);
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(c.pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(c.pos + len));
    c.pos += len;
    const std::uint32_t rank = c.u32();
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(c.u32());
      n *= static_cast<std::size_t>(d);
    }
    c.need(n * 4);
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<float>(c.u32());
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (c.pos != bytes.size()) throw CheckpointError("trailing bytes in checkpoint");
  return out;
}

}  // namespace regioncap
