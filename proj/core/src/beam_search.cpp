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
#include <algorithm>
#include <limits>

#include "regioncap/model.hpp"

namespace regioncap {

namespace {

struct Candidate {
  std::size_t parent;
  int token;
  double score;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

}  // namespace

CaptionHypothesis beam_search(const NextTokenFn& next, int bos, int eos, int beam, int max_len) {
  if (beam < 1) throw ModelError("beam width must be >= 1");
  if (max_len < 1) throw ModelError("max_len must be >= 1");

  std::vector<CaptionHypothesis> alive{{{bos}, 0.0, false}};
  std::vector<CaptionHypothesis> finished;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  for (int step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < alive.size(); ++p) {
      const std::vector<double> lp = next(alive[p].tokens);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (lp[tok] == kNegInf) continue;
        cands.push_back({p, static_cast<int>(tok), alive[p].log_prob + lp[tok]});
      }
    }
    const std::size_t keep = std::min<std::size_t>(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      better);

    std::vector<CaptionHypothesis> next_alive;
    for (std::size_t i = 0; i < keep; ++i) {
      CaptionHypothesis h{alive[cands[i].parent].tokens, cands[i].score, false};
      h.tokens.push_back(cands[i].token);
      const bool at_limit = static_cast<int>(h.tokens.size()) - 1 >= max_len;
      if (cands[i].token == eos || at_limit) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next_alive.push_back(std::move(h));
      }
    }
    alive = std::move(next_alive);

    if (!finished.empty() && !alive.empty()) {
      double best_done = kNegInf;
      for (const auto& h : finished) best_done = std::max(best_done, h.log_prob);
      double best_alive = kNegInf;
      for (const auto& h : alive) best_alive = std::max(best_alive, h.log_prob);
      // Extending a hypothesis never raises its score.
      if (best_done >= best_alive) break;
    }
  }

  const auto& pool = finished.empty() ? alive : finished;
  if (pool.empty()) return {{bos}, kNegInf, true};
  const CaptionHypothesis* best = &pool.front();
  for (const auto& h : pool) {
    if (h.log_prob > best->log_prob) best = &h;
  }
  return *best;
}

CaptionHypothesis greedy_decode(const NextTokenFn& next, int bos, int eos, int max_len) {
  if (max_len < 1) throw ModelError("max_len must be >= 1");
  CaptionHypothesis h{{bos}, 0.0, false};
  while (!h.finished) {
    const std::vector<double> lp = next(h.tokens);
    if (lp.empty()) throw ModelError("next-token function returned an empty distribution");
    const auto it = std::max_element(lp.begin(), lp.end());
    const int tok = static_cast<int>(it - lp.begin());
    h.tokens.push_back(tok);
    h.log_prob += *it;
    h.finished = tok == eos || static_cast<int>(h.tokens.size()) - 1 >= max_len;
  }
  return h;
}

}  // namespace regioncap
