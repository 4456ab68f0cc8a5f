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
#include <httplib.h>

#include <cmath>
#include <json.hpp>

#include "regioncap/regionpipe.hpp"

namespace regioncap {

namespace {

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw EmbedError(EmbedError::Kind::Network, "embedding URL needs a scheme: " + url);
  }
  const auto slash = url.find('/', scheme + 3);
  std::string host = url.substr(0, slash);
  std::string path = slash == std::string::npos ? "" : url.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  if (path.size() < 6 || path.compare(path.size() - 6, 6, "/embed") != 0) path += "/embed";
  return {host, path};
}

FeatureVector post_embed(const std::string& host, const std::string& path, const Image& crop,
                         int expected_dim, double timeout_seconds) {
  using Kind = EmbedError::Kind;
  httplib::Client cli(host);
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - secs) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);

  const auto png = encode_png(crop);
  auto res = cli.Post(path, reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
  if (!res) {
    throw EmbedError(Kind::Network, "embedding request to " + host + path +
                                        " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw EmbedError(Kind::HttpStatus, "embedding service answered HTTP " +
                                           std::to_string(res->status));
  }

  nlohmann::json body;
  try {
    body = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw EmbedError(Kind::MalformedBody, std::string("embedding response is not JSON: ") + e.what());
  }
  if (!body.is_object() || !body.contains("embedding") || !body["embedding"].is_array()) {
    throw EmbedError(Kind::MalformedBody, "embedding response lacks an \"embedding\" array");
  }
  FeatureVector out;
  for (const auto& x : body["embedding"]) {
    if (!x.is_number()) throw EmbedError(Kind::MalformedBody, "embedding holds a non-number");
    const double v = x.get<double>();
    if (!std::isfinite(v)) throw EmbedError(Kind::MalformedBody, "embedding holds a non-finite value");
    out.values.push_back(static_cast<float>(v));
  }
  if (out.dim() != expected_dim) {
    throw EmbedError(Kind::DimensionMismatch, "embedding service returned dimension " +
                                                  std::to_string(out.dim()) + ", expected " +
                                                  std::to_string(expected_dim));
  }
  return out;
}

}  // namespace

HttpProvider::HttpProvider(std::string url, int dim, int input_size, double timeout_seconds)
    : dim_(dim), input_size_(input_size), timeout_seconds_(timeout_seconds) {
  if (dim < 1 || input_size < 1) throw RegionError("http provider needs dim >= 1 and input_size >= 1");
  std::tie(host_, path_) = split_url(url);
}

FeatureVector HttpProvider::embed(const Image& crop) const {
  if (crop.width() != input_size_ || crop.height() != input_size_) {
    throw EmbedError(EmbedError::Kind::WrongInputSize,
                     "http provider expects " + std::to_string(input_size_) + "px square crops");
  }
  return post_embed(host_, path_, crop, dim_, timeout_seconds_);
}

FeatureVector http_embed(const Image& crop, const std::string& url, int expected_dim) {
  const auto [host, path] = split_url(url);
  return post_embed(host, path, crop, expected_dim, 10.0);
}

}  // namespace regioncap
