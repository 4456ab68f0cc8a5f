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
#include "regioncap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace regioncap {

NGramCounts ngram_counts(const Tokens& tokens, int n) {
  NGramCounts out;
  if (n < 1 || tokens.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++out[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

namespace {

void require_refs(std::span<const Tokens> references) {
  if (references.empty()) throw MetricError("at least one reference is required");
}

}  // namespace

Precision modified_precision(const Tokens& candidate, std::span<const Tokens> references, int n) {
  require_refs(references);
  const NGramCounts cand = ngram_counts(candidate, n);
  NGramCounts max_ref;
  for (const auto& ref : references) {
    for (const auto& [g, c] : ngram_counts(ref, n)) max_ref[g] = std::max(max_ref[g], c);
  }
  Precision p;
  for (const auto& [g, c] : cand) {
    p.total += c;
    const auto it = max_ref.find(g);
    if (it != max_ref.end()) p.matched += std::min(c, it->second);
  }
  return p;
}

std::size_t closest_ref_length(std::size_t length, std::span<const Tokens> references) {
  require_refs(references);
  std::size_t best = references[0].size();
  for (const auto& ref : references) {
    const auto d = [&](std::size_t r) { return r > length ? r - length : length - r; };
    if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
  }
  return best;
}

namespace {

double brevity_penalty(double c, double r) {
  if (c <= 0.0) return 0.0;
  return c >= r ? 1.0 : std::exp(1.0 - r / c);
}

}  // namespace

double bleu(const Tokens& candidate, std::span<const Tokens> references, int max_n, bool smooth) {
  require_refs(references);
  if (max_n < 1) throw MetricError("BLEU order must be >= 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const Precision p = modified_precision(candidate, references, n);
    double value;
    if (smooth && n >= 2) {
      value = (p.matched + 1.0) / (p.total + 1.0);
    } else {
      if (p.matched == 0) return 0.0;
      value = p.value();
    }
    log_sum += std::log(value);
  }
  const double bp = brevity_penalty(static_cast<double>(candidate.size()),
                                    static_cast<double>(closest_ref_length(candidate.size(), references)));
  return bp * std::exp(log_sum / max_n);
}

double corpus_bleu(std::span<const Tokens> candidates, std::span<const std::vector<Tokens>> references,
                   int max_n) {
  if (candidates.size() != references.size()) {
    throw MetricError("corpus BLEU needs one reference list per candidate");
  }
  if (candidates.empty()) throw MetricError("corpus BLEU needs at least one candidate");
  if (max_n < 1) throw MetricError("BLEU order must be >= 1");
  std::vector<long> matched(max_n, 0);
  std::vector<long> total(max_n, 0);
  double c = 0.0;
  double r = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (int n = 1; n <= max_n; ++n) {
      const Precision p = modified_precision(candidates[i], references[i], n);
      matched[n - 1] += p.matched;
      total[n - 1] += p.total;
    }
    c += static_cast<double>(candidates[i].size());
    r += static_cast<double>(closest_ref_length(candidates[i].size(), references[i]));
  }
  double log_sum = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / total[n]);
  }
  return brevity_penalty(c, r) * std::exp(log_sum / max_n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, std::span<const Tokens> references, double beta) {
  require_refs(references);
  double best = 0.0;
  for (const auto& ref : references) {
    const double lcs = static_cast<double>(lcs_length(candidate, ref));
    if (lcs == 0.0) continue;
    const double p = lcs / candidate.size();
    const double r = lcs / ref.size();
    const double f = (1.0 + beta * beta) * p * r / (r + beta * beta * p);
    best = std::max(best, f);
  }
  return best;
}

double corpus_rouge_l(std::span<const Tokens> candidates,
                      std::span<const std::vector<Tokens>> references) {
  if (candidates.size() != references.size() || candidates.empty()) {
    throw MetricError("ROUGE-L needs one non-empty reference list per candidate");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

// ---------------------------------------------------------------------------

CiderScorer::CiderScorer(std::span<const std::vector<Tokens>> reference_corpus, int max_n,
                         double sigma)
    : max_n_(max_n), sigma_(sigma), corpus_size_(reference_corpus.size()) {
  if (reference_corpus.empty()) throw MetricError("CIDEr needs a non-empty reference corpus");
  if (max_n < 1) throw MetricError("CIDEr order must be >= 1");
  for (const auto& refs : reference_corpus) {
    std::set<NGram> seen;
    for (const auto& ref : refs) {
      for (int n = 1; n <= max_n_; ++n) {
        for (const auto& [g, c] : ngram_counts(ref, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) ++doc_freq_[g];
  }
}

double CiderScorer::idf(const NGram& gram) const {
  const auto it = doc_freq_.find(gram);
  const double df = it == doc_freq_.end() ? 1.0 : std::max(1, it->second);
  return std::log(static_cast<double>(corpus_size_) / df);
}

namespace {

struct TfIdf {
  std::map<NGram, double> weights;
  double norm = 0.0;
};

}  // namespace

double CiderScorer::score(const Tokens& candidate, std::span<const Tokens> references,
                          CiderVariant variant) const {
  require_refs(references);
  auto vectorize = [&](const Tokens& s, int n) {
    TfIdf v;
    for (const auto& [g, c] : ngram_counts(s, n)) {
      const double w = c * idf(g);
      v.weights[g] = w;
      v.norm += w * w;
    }
    v.norm = std::sqrt(v.norm);
    return v;
  };

  double total = 0.0;
  for (int n = 1; n <= max_n_; ++n) {
    const TfIdf cv = vectorize(candidate, n);
    double per_n = 0.0;
    for (const auto& ref : references) {
      const TfIdf rv = vectorize(ref, n);
      if (cv.norm == 0.0 || rv.norm == 0.0) continue;
      double dot = 0.0;
      for (const auto& [g, w] : cv.weights) {
        const auto it = rv.weights.find(g);
        if (it == rv.weights.end()) continue;
        dot += variant == CiderVariant::D ? std::min(w, it->second) * it->second : w * it->second;
      }
      double sim = dot / (cv.norm * rv.norm);
      if (variant == CiderVariant::D) {
        const double delta = static_cast<double>(candidate.size()) - static_cast<double>(ref.size());
        sim *= std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
      }
      per_n += sim;
    }
    total += per_n / static_cast<double>(references.size());
  }
  return 10.0 * total / max_n_;
}

CiderScorer::Result CiderScorer::corpus_score(std::span<const Tokens> candidates,
                                              std::span<const std::vector<Tokens>> references,
                                              CiderVariant variant) const {
  if (candidates.size() != references.size() || candidates.empty()) {
    throw MetricError("CIDEr needs one reference list per candidate");
  }
  Result r;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.per_image.push_back(score(candidates[i], references[i], variant));
  }
  for (double s : r.per_image) r.mean += s;
  r.mean /= static_cast<double>(r.per_image.size());
  return r;
}

}  // namespace regioncap
