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
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "regioncap/tokens.hpp"

namespace regioncap {

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Tokens = std::vector<std::string>;

/// Lowercases, turns ASCII punctuation into spaces and splits on whitespace.
Tokens tokenize(const std::string& text);

/// Word/id map. Ids 0..3 are PAD, BOS, EOS, UNK; words follow.
class Vocab {
 public:
  Vocab();

  int size() const { return static_cast<int>(words_.size()); }
  /// UNK for unknown words.
  int id(const std::string& word) const;
  bool contains(const std::string& word) const { return ids_.count(word) != 0; }
  const std::string& word(int id) const;
  int add(const std::string& word);

  /// "word id" per line, specials included.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.words_ == b.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

/// Keeps words seen at least `min_count` times. When more than
/// `max_size` ids would result, the most frequent words win, ties broken by
/// lexicographic order. `max_size` counts the special tokens.
Vocab build_vocab(std::span<const Tokens> captions, int min_count = 6, int max_size = 10000);

/// BOS w1 .. wn EOS, with at most `max_len` words kept (max_len < 0: no limit).
std::vector<int> encode(const Tokens& tokens, const Vocab& vocab, int max_len = -1);
/// Drops PAD/BOS/EOS/UNK; throws TextError on ids outside the vocabulary.
Tokens decode(std::span<const int> ids, const Vocab& vocab);

std::string join(const Tokens& tokens);

enum class Split { Train, Val, Test };
std::string to_string(Split s);

struct CaptionedImage {
  std::string id;
  std::string filename;
  std::string filepath;
  std::vector<Tokens> references;
  Split split = Split::Train;

  /// filepath/filename, or filename when filepath is empty.
  std::filesystem::path relative_path() const;
};

/// Karpathy dataset JSON. "restval" entries count as training data.
std::vector<CaptionedImage> load_split(const std::filesystem::path& path);
std::vector<CaptionedImage> parse_split(const std::string& json_text);

std::map<Split, std::size_t> split_counts(std::span<const CaptionedImage> images);
std::vector<CaptionedImage> filter_split(std::span<const CaptionedImage> images, Split split);

}  // namespace regioncap
