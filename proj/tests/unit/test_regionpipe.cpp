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
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <future>
#include <json.hpp>
#include <thread>

#include "regioncap/regionpipe.hpp"
#include "regioncap/toydata.hpp"
#include "test_support.hpp"
#include "tolerances.hpp"

using namespace regioncap;

namespace {

/// Local embedding service for the HTTP client tests.
class FakeService {
 public:
  explicit FakeService(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/embed", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeService() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

void reply_json(httplib::Response& res, const nlohmann::json& body) {
  res.set_content(body.dump(), "application/json");
}

template <typename F>
EmbedError::Kind embed_error_kind(F&& f) {
  try {
    f();
  } catch (const EmbedError& e) {
    return e.kind();
  }
  FAIL("expected an EmbedError");
  return EmbedError::Kind::Network;
}

template <typename F>
FeatureFileError file_error(F&& f) {
  try {
    f();
  } catch (const FeatureFileError& e) {
    return e;
  }
  FAIL("expected a FeatureFileError");
  return FeatureFileError(FeatureFileError::Kind::Io, "");
}

}  // namespace

TEST_CASE("k = 1 on a uniform image yields the whole image as one region") {
  const Image img(20, 12, Rgb{40, 80, 120});
  const std::vector<int> ks = {1};
  const auto regions = extract_regions(img, ks, 16);
  REQUIRE(regions.size() == 1);
  REQUIRE(regions[0].size() == 1);
  CHECK(regions[0][0].box == BBox{0, 0, 20, 12});
  CHECK(regions[0][0].crop.width() == 16);
  CHECK(regions[0][0].crop.height() == 16);
  CHECK(regions[0][0].crop == Image(16, 16, Rgb{40, 80, 120}));
}

TEST_CASE("region counts stay within [k/2, 2k] on toy images") {
  const std::vector<int> ks = {10, 25};
  for (const auto& toy : toy_images(8, 32)) {
    const auto regions = extract_regions(toy.image, ks, 8);
    REQUIRE(regions.size() == 2);
    for (std::size_t r = 0; r < ks.size(); ++r) {
      const auto n = static_cast<int>(regions[r].size());
      CHECK(n >= 1);
      CHECK(n <= 2 * ks[r]);
      for (std::size_t i = 0; i < regions[r].size(); ++i) {
        CHECK(regions[r][i].label == static_cast<int>(i));
        CHECK(regions[r][i].resolution_index == static_cast<int>(r));
      }
    }
  }
}

TEST_CASE("extract_regions rejects bad arguments") {
  const Image img(8, 8);
  const std::vector<int> none;
  const std::vector<int> zero = {0};
  const std::vector<int> one = {1};
  CHECK_THROWS_AS(extract_regions(img, none, 8), RegionError);
  CHECK_THROWS_AS(extract_regions(img, zero, 8), RegionError);
  CHECK_THROWS_AS(extract_regions(Image(), one, 8), RegionError);
}

TEST_CASE("mock embedder is deterministic, unit-norm and input-sensitive") {
  CounterRng rng(3);
  const Image a = support::random_image(32, 32, rng);
  const FeatureVector v1 = mock_embed(a, 64, 32, 11);
  const FeatureVector v2 = mock_embed(a, 64, 32, 11);
  CHECK(v1 == v2);
  REQUIRE(v1.dim() == 64);
  double norm = 0.0;
  for (float f : v1.values) norm += static_cast<double>(f) * f;
  CHECK(std::abs(std::sqrt(norm) - 1.0) < tol::kUnitNorm);

  Image b = a;
  b.at(5, 7).r = static_cast<std::uint8_t>(b.at(5, 7).r ^ 0x80);
  CHECK(mock_embed(b, 64, 32, 11) != v1);
  CHECK(mock_embed(a, 64, 32, 12) != v1);

  CHECK(embed_error_kind([&] { mock_embed(Image(31, 32), 64, 32, 11); }) ==
        EmbedError::Kind::WrongInputSize);
  CHECK_THROWS_AS(MockProvider(0, 32), RegionError);
}

TEST_CASE("http provider returns the service's vector and sends a PNG") {
  std::atomic<bool> decoded{false};
  FakeService svc([&](const httplib::Request& req, httplib::Response& res) {
    const std::vector<std::uint8_t> bytes(req.body.begin(), req.body.end());
    const Image img = decode_png(bytes);
    decoded = img.width() == 4 && img.height() == 4 && img.at(0, 0) == Rgb{9, 8, 7};
    reply_json(res, {{"embedding", {0.25, -0.5, 1.0}}});
  });
  const HttpProvider provider(svc.url(), 3, 4, 5.0);
  const FeatureVector v = provider.embed(Image(4, 4, Rgb{9, 8, 7}));
  CHECK(v.values == std::vector<float>{0.25f, -0.5f, 1.0f});
  CHECK(decoded.load());
  CHECK(http_embed(Image(4, 4, Rgb{9, 8, 7}), svc.url() + "/embed", 3) == v);
}

TEST_CASE("http provider reports each failure kind") {
  using Kind = EmbedError::Kind;
  const Image crop(4, 4);
  SUBCASE("dimension mismatch") {
    FakeService svc([](const httplib::Request&, httplib::Response& res) {
      reply_json(res, {{"embedding", {1.0, 2.0}}});
    });
    CHECK(embed_error_kind([&] { HttpProvider(svc.url(), 3, 4).embed(crop); }) ==
          Kind::DimensionMismatch);
  }
  SUBCASE("HTTP status") {
    FakeService svc([](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    CHECK(embed_error_kind([&] { HttpProvider(svc.url(), 3, 4).embed(crop); }) == Kind::HttpStatus);
  }
  SUBCASE("malformed body") {
    FakeService svc([](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    CHECK(embed_error_kind([&] { HttpProvider(svc.url(), 3, 4).embed(crop); }) ==
          Kind::MalformedBody);
  }
  SUBCASE("missing array") {
    FakeService svc([](const httplib::Request&, httplib::Response& res) {
      reply_json(res, {{"vector", {1.0}}});
    });
    CHECK(embed_error_kind([&] { HttpProvider(svc.url(), 1, 4).embed(crop); }) ==
          Kind::MalformedBody);
  }
  SUBCASE("unreachable") {
    int port = 0;
    {
      httplib::Server probe;
      port = probe.bind_to_any_port("127.0.0.1");
    }
    const std::string url = "http://127.0.0.1:" + std::to_string(port);
    CHECK(embed_error_kind([&] { HttpProvider(url, 3, 4, 1.0).embed(crop); }) == Kind::Network);
  }
  SUBCASE("no scheme") {
    CHECK(embed_error_kind([&] { HttpProvider("localhost:1", 3, 4); }) == Kind::Network);
  }
  SUBCASE("wrong crop size") {
    CHECK(embed_error_kind([&] { HttpProvider("http://127.0.0.1:1", 3, 4).embed(Image(5, 4)); }) ==
          Kind::WrongInputSize);
  }
}

TEST_CASE("encode_image structure follows the segmentation and provider") {
  const Image uniform(24, 24, Rgb{200, 30, 30});
  const std::vector<int> one = {1};
  const MockProvider mock512(512, 32);
  const MultiResFeatures f = encode_image(uniform, one, mock512);
  CHECK(f.dim() == 512);
  REQUIRE(f.per_resolution.size() == 1);
  REQUIRE(f.per_resolution[0].regions.size() == 1);
  CHECK(f.per_resolution[0].regions[0].vec == f.global);
  CHECK(f.global_box == BBox{0, 0, 24, 24});
  CHECK(f.token_count() == 2);

  const auto toy = toy_images(1, 32)[0].image;
  const std::vector<int> ks = {10, 25};
  const MockProvider mock768(768, 32);
  const MultiResFeatures g = encode_image(toy, ks, mock768);
  const auto regions = extract_regions(toy, ks, 32);
  CHECK(g.dim() == 768);
  REQUIRE(g.per_resolution.size() == 2);
  std::size_t total = 1;
  for (std::size_t r = 0; r < ks.size(); ++r) {
    CHECK(g.per_resolution[r].k == ks[r]);
    CHECK(g.per_resolution[r].regions.size() == regions[r].size());
    for (const auto& reg : g.per_resolution[r].regions) CHECK(reg.vec.dim() == 768);
    total += regions[r].size();
  }
  CHECK(g.token_count() == total);
}

TEST_CASE("concurrent encoding matches sequential encoding") {
  const auto toys = toy_images(8, 32);
  const std::vector<int> ks = {4, 10};
  const MockProvider provider(32, 16);
  std::vector<MultiResFeatures> sequential;
  for (const auto& t : toys) sequential.push_back(encode_image(t.image, ks, provider));
  std::vector<std::future<MultiResFeatures>> jobs;
  for (const auto& t : toys) {
    jobs.push_back(std::async(std::launch::async,
                              [&, img = t.image] { return encode_image(img, ks, provider); }));
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) CHECK(jobs[i].get() == sequential[i]);
}

TEST_CASE("feature files round-trip byte for byte") {
  CounterRng rng(9);
  const MultiResFeatures f = support::random_features(6, {3, 5}, {2, 4}, rng);
  const auto bytes = serialize_features(f);
  CHECK(bytes.size() == 4 + 12 + 2 * 8 + 7 * (25 + 6 * 4));
  CHECK(deserialize_features(bytes) == f);
  CHECK(serialize_features(deserialize_features(bytes)) == bytes);

  const auto path = support::temp_dir("regionpipe_roundtrip") / "f.scf";
  write_features(f, path);
  CHECK(read_features(path) == f);
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> on_disk{std::istreambuf_iterator<char>(in),
                                          std::istreambuf_iterator<char>()};
  CHECK(on_disk == bytes);
}

TEST_CASE("feature file errors carry their kind") {
  using Kind = FeatureFileError::Kind;
  CounterRng rng(10);
  const MultiResFeatures f = support::random_features(4, {2}, {3}, rng);
  const auto bytes = serialize_features(f);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(file_error([&] { deserialize_features(bad_magic); }).kind() == Kind::BadMagic);

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK(file_error([&] { deserialize_features(bad_version); }).kind() == Kind::VersionMismatch);

  const std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 2);
  const auto short_header = file_error([&] { deserialize_features(header_only); });
  CHECK(short_header.kind() == Kind::Truncated);
  CHECK(short_header.record_index() == -1);

  const std::size_t header = 4 + 12 + 8;
  const std::size_t record = 25 + 4 * 4;
  const std::vector<std::uint8_t> cut(bytes.begin(),
                                      bytes.begin() + static_cast<long>(header + 2 * record + 3));
  const auto truncated = file_error([&] { deserialize_features(cut); });
  CHECK(truncated.kind() == Kind::Truncated);
  CHECK(truncated.record_index() == 2);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(file_error([&] { deserialize_features(trailing); }).kind() == Kind::Malformed);

  auto region_first = bytes;
  region_first[header] = 1;
  CHECK(file_error([&] { deserialize_features(region_first); }).kind() == Kind::Malformed);

  CHECK(file_error([] { read_features("/nonexistent/dir/x.scf"); }).kind() == Kind::Io);
}

TEST_CASE("overlay paints label boundaries only") {
  const Image img(8, 8, Rgb{10, 20, 30});
  const LabelMap single(8, 8, std::vector<int>(64, 0));
  CHECK(render_overlay(img, single) == img);

  std::vector<int> halves(64);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) halves[static_cast<std::size_t>(y * 8 + x)] = x < 4 ? 0 : 1;
  }
  const Image out = render_overlay(img, LabelMap(8, 8, halves), Rgb{255, 0, 0});
  int painted = 0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      if (out.at(x, y) != img.at(x, y)) {
        ++painted;
        CHECK(x == 4);
        CHECK(out.at(x, y) == Rgb{255, 0, 0});
      }
    }
  }
  CHECK(painted == 8);
  CHECK_THROWS_AS(render_overlay(Image(7, 8), single), RegionError);
}
