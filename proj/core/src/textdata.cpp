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
#include "regioncap/textdata.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace regioncap {

Tokens tokenize(const std::string& text) {
  Tokens out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab::Vocab() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
}

int Vocab::id(const std::string& word) const {
  const auto it = ids_.find(word);
  return it == ids_.end() ? tokens::kUnk : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw TextError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[static_cast<std::size_t>(id)];
}

int Vocab::add(const std::string& word) {
  if (const auto it = ids_.find(word); it != ids_.end()) return it->second;
  const int id = size();
  words_.push_back(word);
  ids_.emplace(word, id);
  return id;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw TextError("cannot write " + path.string());
  for (int i = 0; i < size(); ++i) out << words_[static_cast<std::size_t>(i)] << ' ' << i << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TextError("cannot open " + path.string());
  Vocab v;
  std::string word;
  int id = 0;
  int expected = 0;
  while (in >> word >> id) {
    if (id != expected) throw TextError("vocab ids must be contiguous; got " + std::to_string(id));
    if (id >= tokens::kSpecialCount) {
      if (v.add(word) != id) throw TextError("duplicate vocab word " + word);
    } else if (v.word(id) != word) {
      throw TextError("special token mismatch at id " + std::to_string(id));
    }
    ++expected;
  }
  if (!in.eof()) throw TextError("malformed vocab file " + path.string());
  return v;
}

Vocab build_vocab(std::span<const Tokens> captions, int min_count, int max_size) {
  if (min_count < 1) throw TextError("min_count must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& cap : captions) {
    for (const auto& w : cap) ++counts[w];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [w, n] : counts) {
    if (n >= min_count) kept.emplace_back(w, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room =
      static_cast<std::size_t>(std::max(0, max_size - tokens::kSpecialCount));
  if (kept.size() > room) kept.resize(room);
  Vocab v;
  for (const auto& [w, n] : kept) v.add(w);
  return v;
}

std::vector<int> encode(const Tokens& toks, const Vocab& vocab, int max_len) {
  std::vector<int> ids{tokens::kBos};
  const std::size_t n =
      max_len < 0 ? toks.size() : std::min(toks.size(), static_cast<std::size_t>(max_len));
  for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id(toks[i]));
  ids.push_back(tokens::kEos);
  return ids;
}

Tokens decode(std::span<const int> ids, const Vocab& vocab) {
  Tokens out;
  for (int id : ids) {
    const std::string& w = vocab.word(id);
    if (id >= tokens::kSpecialCount) out.push_back(w);
  }
  return out;
}

std::string join(const Tokens& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += toks[i];
  }
  return s;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

std::filesystem::path CaptionedImage::relative_path() const {
  return filepath.empty() ? std::filesystem::path(filename) : std::filesystem::path(filepath) / filename;
}

namespace {

std::string image_id(const nlohmann::json& img, std::size_t index) {
  for (const char* key : {"cocoid", "imgid", "id"}) {
    if (img.contains(key)) {
      const auto& v = img[key];
      return v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  if (img.contains("filename") && img["filename"].is_string()) return img["filename"];
  return "#" + std::to_string(index);
}

}  // namespace

std::vector<CaptionedImage> parse_split(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw TextError(std::string("malformed dataset JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    throw TextError("dataset JSON lacks a top-level \"images\" array");
  }
  std::vector<CaptionedImage> out;
  const auto& images = doc["images"];
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    const std::string id = image_id(img, i);
    auto fail = [&](const std::string& what) -> TextError {
      return TextError("image " + id + ": " + what);
    };
    if (!img.is_object()) throw fail("entry is not an object");
    CaptionedImage rec;
    rec.id = id;
    if (!img.contains("split") || !img["split"].is_string()) throw fail("missing \"split\"");
    const std::string split = img["split"];
    if (split == "train" || split == "restval") rec.split = Split::Train;
    else if (split == "val") rec.split = Split::Val;
    else if (split == "test") rec.split = Split::Test;
    else throw fail("unknown split \"" + split + "\"");
    if (!img.contains("filename") || !img["filename"].is_string()) throw fail("missing \"filename\"");
    rec.filename = img["filename"];
    if (img.contains("filepath") && img["filepath"].is_string()) rec.filepath = img["filepath"];
    if (!img.contains("sentences") || !img["sentences"].is_array()) throw fail("missing \"sentences\"");
    for (const auto& s : img["sentences"]) {
      if (s.contains("tokens") && s["tokens"].is_array()) {
        Tokens t;
        for (const auto& w : s["tokens"]) {
          if (!w.is_string()) throw fail("non-string token");
          for (auto& piece : tokenize(w.get<std::string>())) t.push_back(std::move(piece));
        }
        rec.references.push_back(std::move(t));
      } else if (s.contains("raw") && s["raw"].is_string()) {
        rec.references.push_back(tokenize(s["raw"].get<std::string>()));
      } else {
        throw fail("sentence without \"tokens\"");
      }
    }
    if (rec.references.empty()) throw fail("no reference captions");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CaptionedImage> load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TextError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_split(os.str());
}

std::map<Split, std::size_t> split_counts(std::span<const CaptionedImage> images) {
  std::map<Split, std::size_t> out{{Split::Train, 0}, {Split::Val, 0}, {Split::Test, 0}};
  for (const auto& img : images) ++out[img.split];
  return out;
}

std::vector<CaptionedImage> filter_split(std::span<const CaptionedImage> images, Split split) {
  std::vector<CaptionedImage> out;
  for (const auto& img : images) {
    if (img.split == split) out.push_back(img);
  }
  return out;
}

}  // namespace regioncap
