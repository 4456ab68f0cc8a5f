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
#include <benchmark/benchmark.h>

#include "regioncap/imaging.hpp"
#include "regioncap/metrics.hpp"
#include "regioncap/model.hpp"
#include "regioncap/regionpipe.hpp"
#include "regioncap/superpixel.hpp"
#include "regioncap/tokens.hpp"

using namespace regioncap;

namespace {

Image noise_image(int size, std::uint64_t seed) {
  CounterRng rng(seed);
  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const auto base = static_cast<std::uint8_t>((x * 255) / size);
      img.at(x, y) = {base, static_cast<std::uint8_t>(rng.below(64)), static_cast<std::uint8_t>((y * 255) / size)};
    }
  }
  return img;
}

void BM_Slic(benchmark::State& state) {
  const LabImage lab = rgb_to_lab(noise_image(static_cast<int>(state.range(0)), 1));
  SlicConfig cfg;
  cfg.k = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(slic(lab, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_Slic)->Args({64, 10})->Args({64, 25})->Args({224, 25});

void BM_EncodeImageMock(benchmark::State& state) {
  const Image img = noise_image(96, 2);
  const MockProvider provider(512, 32);
  const std::vector<int> ks{10, 25};
  for (auto _ : state) benchmark::DoNotOptimize(encode_image(img, ks, provider));
}
BENCHMARK(BM_EncodeImageMock);

void BM_MultiHeadForwardBackward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const int n = static_cast<int>(state.range(1));
  CounterRng rng(3);
  auto rand = [&](int r, int c) {
    Tensor t = Tensor::matrix(r, c);
    for (double& v : t.values()) v = rng.uniform(-0.1, 0.1);
    return t;
  };
  const Tensor x = rand(n, d), wq = rand(d, d), wk = rand(d, d), wv = rand(d, d), wo = rand(d, d);
  for (auto _ : state) {
    Tape t;
    const AttentionVars w{t.parameter(wq), t.parameter(wk), t.parameter(wv), t.parameter(wo)};
    const Var xv = t.variable(x);
    t.backward(ops::sum(t, multi_head(t, xv, xv, w, 8)));
    benchmark::DoNotOptimize(t.grad(w.wq));
  }
}
BENCHMARK(BM_MultiHeadForwardBackward)->Args({64, 37})->Args({512, 37});

void BM_BeamSearch(benchmark::State& state) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.d_model = 64;
  cfg.d_ff = 128;
  cfg.vocab_size = 200;
  cfg.resolutions = {10};
  const Captioner model(cfg);
  CounterRng rng(4);
  MultiResFeatures f;
  auto vec = [&] {
    FeatureVector v;
    for (int i = 0; i < cfg.d_model; ++i) v.values.push_back(static_cast<float>(rng.uniform(-1, 1)));
    return v;
  };
  f.global = vec();
  f.per_resolution.push_back({10, {}});
  for (int i = 0; i < 10; ++i) f.per_resolution[0].regions.push_back({i, {0, 0, 1, 1}, vec()});
  const auto memories = model.encode(f);
  for (auto _ : state) {
    benchmark::DoNotOptimize(beam_search(next_token_fn(model, memories), tokens::kBos, tokens::kEos,
                                         static_cast<int>(state.range(0)), 20));
  }
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5);

void BM_CiderCorpus(benchmark::State& state) {
  CounterRng rng(5);
  const std::vector<std::string> words{"a", "man", "dog", "riding", "on", "the", "wave", "beach", "red", "sky"};
  auto sentence = [&] {
    Tokens s;
    for (int i = 0; i < 10; ++i) s.push_back(words[rng.below(words.size())]);
    return s;
  };
  std::vector<std::vector<Tokens>> refs(static_cast<std::size_t>(state.range(0)));
  std::vector<Tokens> cands;
  for (auto& r : refs) {
    for (int j = 0; j < 5; ++j) r.push_back(sentence());
    cands.push_back(sentence());
  }
  const CiderScorer scorer(refs);
  for (auto _ : state) benchmark::DoNotOptimize(scorer.corpus_score(cands, refs, CiderVariant::D));
}
BENCHMARK(BM_CiderCorpus)->Arg(100);

}  // namespace

BENCHMARK_MAIN();
