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

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "regioncap/textdata.hpp"

namespace regioncap {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, int>;

NGramCounts ngram_counts(const Tokens& tokens, int n);

/// Clipped n-gram matches and candidate n-gram total.
struct Precision {
  long matched = 0;
  long total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(matched) / total; }
};

Precision modified_precision(const Tokens& candidate, std::span<const Tokens> references, int n);

/// Reference length closest to `length`; the shorter one on ties.
std::size_t closest_ref_length(std::size_t length, std::span<const Tokens> references);

/// Sentence BLEU@max_n. An empty candidate scores 0. With `smooth`, orders
/// n >= 2 use (matched + 1) / (total + 1).
double bleu(const Tokens& candidate, std::span<const Tokens> references, int max_n = 4,
            bool smooth = false);

/// Corpus BLEU@max_n: clipped counts and lengths summed over all images.
double corpus_bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references,
                   int max_n = 4);

std::size_t lcs_length(const Tokens& a, const Tokens& b);

/// LCS F-measure with recall weighted by beta, maximised over references.
double rouge_l(const Tokens& candidate, std::span<const Tokens> references, double beta = 1.2);

/// Mean of per-image ROUGE-L.
double corpus_rouge_l(std::span<const Tokens> candidates,
                      std::span<const std::vector<Tokens>> references);

enum class CiderVariant { Plain, D };

/// TF-IDF n-gram consensus score on a 0..10 scale. The document frequencies
/// come from the reference corpus given at construction and stay fixed.
class CiderScorer {
 public:
  explicit CiderScorer(std::span<const std::vector<Tokens>> reference_corpus, int max_n = 4,
                       double sigma = 6.0);

  double score(const Tokens& candidate, std::span<const Tokens> references,
               CiderVariant variant = CiderVariant::Plain) const;

  struct Result {
    std::vector<double> per_image;
    double mean = 0.0;
  };
  Result corpus_score(std::span<const Tokens> candidates,
                      std::span<const std::vector<Tokens>> references,
                      CiderVariant variant = CiderVariant::Plain) const;

  double idf(const NGram& gram) const;
  std::size_t corpus_size() const { return corpus_size_; }

 private:
  int max_n_;
  double sigma_;
  std::size_t corpus_size_;
  std::map<NGram, int> doc_freq_;
};

}  // namespace regioncap
