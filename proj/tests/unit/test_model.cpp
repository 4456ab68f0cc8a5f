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

#include <cmath>
#include <numeric>

#include "frozen_oracles.hpp"
#include "regioncap/model.hpp"
#include "regioncap/tokens.hpp"
#include "test_support.hpp"
#include "tolerances.hpp"

using namespace regioncap;

namespace {

constexpr FusionMethod kAllMethods[] = {FusionMethod::Method1, FusionMethod::Method2,
                                        FusionMethod::Method3, FusionMethod::Method4};

void check_values(const Tensor& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    INFO("element " << i);
    CHECK(std::abs(got[i] - want[i]) < tol);
  }
}

AttentionWeights add_attention(ParamStore& s, int d, int first_seed) {
  AttentionWeights w{};
  w.wq = s.add("wq", support::fill({d, d}, first_seed));
  w.wk = s.add("wk", support::fill({d, d}, first_seed + 1));
  w.wv = s.add("wv", support::fill({d, d}, first_seed + 2));
  w.wo = s.add("wo", support::fill({d, d}, first_seed + 3));
  return w;
}

NormWeights add_norm(ParamStore& s, int d, int first_seed) {
  return {s.add("g", support::fill({1, d}, first_seed)), s.add("b", support::fill({1, d}, first_seed + 1))};
}

FeedForwardWeights add_ff(ParamStore& s, int d, int dff, int first_seed) {
  return {s.add("w1", support::fill({d, dff}, first_seed)), s.add("b1", support::fill({1, dff}, first_seed + 1)),
          s.add("w2", support::fill({dff, d}, first_seed + 2)), s.add("b2", support::fill({1, d}, first_seed + 3))};
}

constexpr int kD = 4;
constexpr int kDff = 6;
constexpr int kVocab = 5;

DecoderWeights oracle_decoder(ParamStore& s, bool with_layer) {
  DecoderWeights dec;
  dec.embedding = s.add("emb", support::fill({kVocab, kD}, 30));
  if (with_layer) {
    DecoderLayerWeights l{};
    l.self_attn = add_attention(s, kD, 31);
    l.norm1 = add_norm(s, kD, 35);
    l.cross_attn = add_attention(s, kD, 37);
    l.norm2 = add_norm(s, kD, 41);
    l.ff = add_ff(s, kD, kDff, 43);
    l.norm3 = add_norm(s, kD, 47);
    dec.layers.push_back(l);
  }
  dec.out_w = s.add("out_w", support::fill({kD, kVocab}, 49));
  dec.out_b = s.add("out_b", support::fill({1, kVocab}, 50));
  return dec;
}

Tensor oracle_logits(bool with_layer, std::vector<int> prefix) {
  ParamStore s;
  const DecoderWeights dec = oracle_decoder(s, with_layer);
  Tape t(false);
  ParamBinder p(t, s);
  const Var mem = t.constant(support::fill({3, kD}, 21));
  const Var h = decoder_hidden(t, p, dec, mem, prefix, 2);
  const Tensor logits = t.value(decoder_logits(t, p, dec, h));
  Tensor last = Tensor::matrix(1, kVocab);
  for (int c = 0; c < kVocab; ++c) last(0, c) = logits(logits.rows() - 1, c);
  return last;
}

MultiResFeatures tiny_features(const ModelConfig& cfg, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<int> counts;
  for (std::size_t i = 0; i < cfg.resolutions.size(); ++i) counts.push_back(cfg.resolutions[i] + 1);
  return support::random_features(cfg.d_model, cfg.resolutions, counts, rng);
}

}  // namespace

TEST_CASE("positional encoding and causal mask") {
  const Tensor pe = positional_encoding(3, 4);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(std::abs(pe(2, 0) - std::sin(2.0)) < tol::kHandComputed);
  CHECK(std::abs(pe(2, 3) - std::cos(2.0 / 100.0)) < tol::kHandComputed);
  const Tensor odd = positional_encoding(2, 3);
  CHECK(std::abs(odd(1, 2) - std::sin(1.0 / std::pow(10000.0, 2.0 / 3.0))) < tol::kHandComputed);

  const Tensor m = causal_mask(3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (c > r) {
        CHECK(std::isinf(m(r, c)));
        CHECK(m(r, c) < 0);
      } else {
        CHECK(m(r, c) == 0.0);
      }
    }
  }
}

TEST_CASE("single attention head matches the reference") {
  Tape t(false);
  const Var x = t.constant(Tensor::of(2, 2, {1.0, 0.0, 0.5, -1.0}));
  const Var out = attention_head(t, x, x, t.constant(Tensor::of(2, 2, {1.0, 0.5, -0.5, 1.0})),
                                 t.constant(Tensor::of(2, 2, {0.2, 1.0, 1.0, -0.3})),
                                 t.constant(Tensor::of(2, 2, {1.0, 2.0, 3.0, 4.0})));
  check_values(t.value(out), oracle::kAttentionHead, tol::kHandComputed);
}

TEST_CASE("encoder layer matches the reference") {
  ParamStore s;
  EncoderWeights enc;
  EncoderLayerWeights l{};
  l.self_attn = add_attention(s, kD, 1);
  l.norm1 = add_norm(s, kD, 5);
  l.ff = add_ff(s, kD, kDff, 7);
  l.norm2 = add_norm(s, kD, 11);
  enc.layers.push_back(l);
  Tape t(false);
  ParamBinder p(t, s);
  const Var out = encoder_forward(t, p, enc, t.constant(support::fill({2, kD}, 20)), 2);
  check_values(t.value(out), oracle::kEncoderLayer, tol::kHandComputed);

  Tape t0(false);
  ParamBinder p0(t0, s);
  const Tensor tokens = support::fill({3, kD}, 20);
  const Tensor identity = t0.value(encoder_forward(t0, p0, EncoderWeights{}, t0.constant(tokens), 2));
  const Tensor pe = positional_encoding(3, kD);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    CHECK(std::abs(identity[i] - (tokens[i] + pe[i])) < tol::kHandComputed);
  }
}

TEST_CASE("decoder logits match the reference") {
  check_values(oracle_logits(true, {1}), oracle::kDecoderLogitsBos, tol::kHandComputed);
  check_values(oracle_logits(true, {1, 3}), oracle::kDecoderLogitsTwo, tol::kHandComputed);
  check_values(oracle_logits(false, {1}), oracle::kDecoderLogitsNoLayers, tol::kHandComputed);
}

TEST_CASE("decoder is causal: later tokens never change earlier positions") {
  ParamStore s;
  const DecoderWeights dec = oracle_decoder(s, true);
  auto hidden = [&](std::vector<int> prefix) {
    Tape t(false);
    ParamBinder p(t, s);
    return t.value(decoder_hidden(t, p, dec, t.constant(support::fill({3, kD}, 21)), prefix, 2));
  };
  const Tensor a = hidden({1, 3, 4, 0});
  const Tensor b = hidden({1, 3, 2, 2});
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < kD; ++c) CHECK(a(r, c) == b(r, c));
  }
  bool differs = false;
  for (int c = 0; c < kD; ++c) differs |= a(2, c) != b(2, c);
  CHECK(differs);
}

TEST_CASE("multi-head attention is invariant to head order") {
  CounterRng rng(4);
  const int d = 6;
  const int heads = 3;
  const int dk = d / heads;
  const Tensor x = support::random_tensor(4, d, rng);
  const Tensor kv = support::random_tensor(5, d, rng);
  const Tensor wq = support::random_tensor(d, d, rng);
  const Tensor wk = support::random_tensor(d, d, rng);
  const Tensor wv = support::random_tensor(d, d, rng);
  const Tensor wo = support::random_tensor(d, d, rng);
  const int perm[] = {2, 0, 1};
  Tensor pq = wq, pk = wk, pv = wv, po = wo;
  for (int h = 0; h < heads; ++h) {
    for (int j = 0; j < dk; ++j) {
      const int dst = h * dk + j;
      const int src = perm[h] * dk + j;
      for (int r = 0; r < d; ++r) {
        pq(r, dst) = wq(r, src);
        pk(r, dst) = wk(r, src);
        pv(r, dst) = wv(r, src);
        po(dst, r) = wo(src, r);
      }
    }
  }
  auto run = [&](const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& o) {
    Tape t(false);
    const AttentionVars w{t.constant(q), t.constant(k), t.constant(v), t.constant(o)};
    return t.value(multi_head(t, t.constant(x), t.constant(kv), w, heads));
  };
  const Tensor a = run(wq, wk, wv, wo);
  const Tensor b = run(pq, pk, pv, po);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < tol::kHandComputed);

  Tape t(false);
  const Var xv = t.constant(x);
  const AttentionVars zero_out{t.constant(wq), t.constant(wk), t.constant(wv),
                               t.constant(Tensor::matrix(d, d))};
  const Var g = t.constant(Tensor::matrix(1, d, 1.0));
  const Var b0 = t.constant(Tensor::matrix(1, d));
  const Tensor sub = t.value(attention_sublayer(t, xv, t.constant(kv), zero_out, g, b0, heads));
  const Tensor ln = t.value(ops::layer_norm(t, xv, g, b0));
  CHECK(sub == ln);
}

TEST_CASE("building blocks pass finite-difference gradient checks") {
  CounterRng rng(12);
  const int d = 4;
  const Tensor mask = causal_mask(3);
  auto weighted = [&](Tape& t, Var y, int rows) {
    CounterRng wr(99);
    return ops::sum(t, ops::mul(t, y, t.constant(support::random_tensor(rows, d, wr))));
  };
  auto R = [&](int r, int c) { return support::random_tensor(r, c, rng); };

  auto check = [](const char* what, const support::GradCheck& r) {
    INFO(what << ": worst " << r.worst << " rel " << r.max_rel_error);
    CHECK(r.max_rel_error < tol::kGradRel);
  };
  check("attention_head", support::check_gradients(
                              [&](Tape& t, const auto& v) {
                                return weighted(t, attention_head(t, v[0], v[1], v[2], v[3], v[4], &mask), 3);
                              },
                              {R(3, d), R(3, d), R(d, d), R(d, d), R(d, d)}, tol::kFdStep, tol::kGradFloor));
  check("multi_head", support::check_gradients(
                          [&](Tape& t, const auto& v) {
                            return weighted(t, multi_head(t, v[0], v[1], {v[2], v[3], v[4], v[5]}, 2), 3);
                          },
                          {R(3, d), R(5, d), R(d, d), R(d, d), R(d, d), R(d, d)}, tol::kFdStep,
                          tol::kGradFloor));
  check("attention_sublayer",
        support::check_gradients(
            [&](Tape& t, const auto& v) {
              return weighted(t, attention_sublayer(t, v[0], v[0], {v[1], v[2], v[3], v[4]}, v[5], v[6], 2, &mask), 3);
            },
            {R(3, d), R(d, d), R(d, d), R(d, d), R(d, d), R(1, d), R(1, d)}, tol::kFdStep, tol::kGradFloor));
  check("feed_forward", support::check_gradients(
                            [&](Tape& t, const auto& v) {
                              return weighted(t, feed_forward(t, v[0], v[1], v[2], v[3], v[4]), 3);
                            },
                            {R(3, d), R(d, 6), R(1, 6), R(6, d), R(1, d)}, tol::kFdStep, tol::kGradFloor));

  ParamStore s;
  const DecoderWeights dec = oracle_decoder(s, true);
  EncoderWeights enc;
  EncoderLayerWeights l{};
  l.self_attn = add_attention(s, kD, 1);
  l.norm1 = add_norm(s, kD, 5);
  l.ff = add_ff(s, kD, kDff, 7);
  l.norm2 = add_norm(s, kD, 11);
  enc.layers.push_back(l);
  const Tensor tokens = support::fill({3, kD}, 20);
  const std::vector<int> ids = {1, 3, 4, 2};
  check("encoder + decoder",
        support::check_param_gradients(
            s,
            [&](Tape& t, ParamBinder& p) {
              const Var mem = encoder_forward(t, p, enc, t.constant(tokens), 2);
              const std::span<const int> in(ids.data(), 3);
              const Var logits = decoder_logits(t, p, dec, decoder_hidden(t, p, dec, mem, in, 2));
              return ops::cross_entropy(t, logits, std::span<const int>(ids.data() + 1, 3));
            },
            tol::kFdStep, tol::kGradFloor));
}

TEST_CASE("every fusion method passes a full-model gradient check") {
  for (FusionMethod m : kAllMethods) {
    CAPTURE(to_string(m));
    const ModelConfig cfg = support::tiny_config(m);
    Captioner model(cfg);
    const MultiResFeatures f = tiny_features(cfg, 3);
    const auto sets = model.token_sets(f);
    const std::vector<int> ids = {tokens::kBos, 5, 7, 4, tokens::kEos};
    const auto r = support::check_param_gradients(
        model.params().store,
        [&](Tape& t, ParamBinder& p) {
          const FusedMemory mem = fuse(t, p, model.params(), cfg, sets);
          return model.caption_loss(t, p, mem, ids);
        },
        tol::kFdStep, tol::kGradFloor);
    INFO("worst " << r.worst << " rel " << r.max_rel_error);
    CHECK(r.scalars == model.params().store.scalar_count());
    CHECK(r.max_rel_error < tol::kGradRel);
  }
}

TEST_CASE("parameter layout per fusion method") {
  for (FusionMethod m : kAllMethods) {
    ModelConfig cfg = support::tiny_config(m);
    const ModelParams p = ModelParams::init(cfg, 1);
    CHECK(static_cast<int>(p.encoders.size()) == cfg.encoder_count());
    CHECK(static_cast<int>(p.decoders.size()) == cfg.decoder_count());
    CHECK(p.router.has_value() == cfg.routed());
  }
  CHECK(support::tiny_config(FusionMethod::Method1).encoder_count() == 1);
  CHECK(support::tiny_config(FusionMethod::Method2).encoder_count() == 2);
  CHECK(support::tiny_config(FusionMethod::Method3).encoder_count() == 1);
  CHECK(support::tiny_config(FusionMethod::Method3).decoder_count() == 2);
  CHECK(support::tiny_config(FusionMethod::Method4).encoder_count() == 2);
}

TEST_CASE("initialisation bounds and determinism") {
  const ModelConfig cfg = support::tiny_config(FusionMethod::Method4);
  const ModelParams a = ModelParams::init(cfg, 5);
  const ModelParams b = ModelParams::init(cfg, 5);
  const ModelParams c = ModelParams::init(cfg, 6);
  CHECK(a.store.values() == b.store.values());
  CHECK(a.store.values() != c.store.values());
  for (std::size_t i = 0; i < a.store.size(); ++i) {
    const Tensor& w = a.store[i];
    const std::string& name = a.store.name(i);
    CAPTURE(name);
    if (name.ends_with(".gamma")) {
      for (double v : w.values()) CHECK(v == 1.0);
    } else if (name.ends_with(".beta") || name.ends_with(".b") || name.ends_with(".b1") ||
               name.ends_with(".b2")) {
      for (double v : w.values()) CHECK(v == 0.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
      for (double v : w.values()) CHECK(std::abs(v) <= bound);
    }
  }
}

TEST_CASE("Method2 memory concatenates per-resolution encodings") {
  const ModelConfig cfg = support::tiny_config(FusionMethod::Method2);
  Captioner model(cfg);
  const MultiResFeatures f = tiny_features(cfg, 8);
  const auto sets = model.token_sets(f);
  REQUIRE(sets.size() == 2);
  CHECK(sets[0].rows() == 1 + cfg.resolutions[0] + 1);
  const auto memories = model.encode(f);
  REQUIRE(memories.size() == 1);
  CHECK(memories[0].rows() == sets[0].rows() + sets[1].rows());

  ModelConfig no_global = cfg;
  no_global.use_global = false;
  CHECK(Captioner(no_global).token_sets(f)[0].rows() == cfg.resolutions[0] + 1);

  const ModelConfig routed = support::tiny_config(FusionMethod::Method3);
  CHECK(Captioner(routed).encode(f).size() == 2);
}

TEST_CASE("with one resolution Method1 and Method2 coincide") {
  ModelConfig c1 = support::tiny_config(FusionMethod::Method1);
  c1.resolutions = {3};
  ModelConfig c2 = c1;
  c2.fusion = FusionMethod::Method2;
  const Captioner m1(c1);
  const Captioner m2(c2);
  CHECK(m1.params().store.values() == m2.params().store.values());
  const MultiResFeatures f = tiny_features(c1, 2);
  const std::vector<int> prefix = {tokens::kBos, 6};
  CHECK(m1.next_log_probs(m1.encode(f), prefix) == m2.next_log_probs(m2.encode(f), prefix));
}

TEST_CASE("next-token distributions are normalised for every method") {
  for (FusionMethod m : kAllMethods) {
    CAPTURE(to_string(m));
    const ModelConfig cfg = support::tiny_config(m);
    const Captioner model(cfg);
    const auto mem = model.encode(tiny_features(cfg, 4));
    std::vector<int> prefix = {tokens::kBos};
    for (int step = 0; step < cfg.max_len; ++step) {
      const auto lp = model.next_log_probs(mem, prefix);
      REQUIRE(static_cast<int>(lp.size()) == cfg.vocab_size);
      double sum = 0.0;
      for (double v : lp) sum += std::exp(v);
      CHECK(std::abs(sum - 1.0) < tol::kProbSum);
      if (cfg.routed()) {
        const auto w = model.router_weights(mem, prefix);
        CHECK(w.size() == cfg.resolutions.size());
        CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < tol::kProbSum);
        for (double x : w) CHECK(x > 0.0);
      }
      prefix.push_back(4 + step % 5);
    }
    if (!cfg.routed()) CHECK_THROWS_AS(model.router_weights(mem, {prefix.data(), 1}), ModelError);
  }
}

TEST_CASE("caption log-probability sums the per-step log-probabilities") {
  for (FusionMethod m : kAllMethods) {
    CAPTURE(to_string(m));
    const ModelConfig cfg = support::tiny_config(m);
    const Captioner model(cfg);
    const MultiResFeatures f = tiny_features(cfg, 6);
    const auto mem = model.encode(f);
    const std::vector<int> ids = {tokens::kBos, 4, 8, 5, tokens::kEos};
    double expected = 0.0;
    for (std::size_t i = 1; i < ids.size(); ++i) {
      expected += model.next_log_probs(mem, std::span<const int>(ids.data(), i))[static_cast<std::size_t>(ids[i])];
    }
    Tape t(false);
    ParamBinder p(t, model.params().store);
    const FusedMemory fm = fuse(t, p, model.params(), cfg, model.token_sets(f));
    CHECK(std::abs(t.value(model.caption_log_prob(t, p, fm, ids)).item() - expected) < tol::kHandComputed);
    const double loss = t.value(model.caption_loss(t, p, fm, ids)).item();
    CHECK(std::abs(loss + expected / 4.0) < tol::kHandComputed);
  }
}

TEST_CASE("soft routing mixes expert distributions") {
  const std::vector<std::vector<double>> experts = {{0.5, 0.5, 0.0}, {0.1, 0.2, 0.7}};
  const std::vector<double> onehot = {0.0, 1.0};
  CHECK(soft_route(experts, onehot) == experts[1]);
  const std::vector<double> even = {0.5, 0.5};
  const auto mix = soft_route(experts, even);
  CHECK(std::abs(mix[0] - 0.3) < tol::kHandComputed);
  CHECK(std::abs(mix[2] - 0.35) < tol::kHandComputed);
  CHECK(std::abs(mix[0] + mix[1] + mix[2] - 1.0) < tol::kProbSum);
  const std::vector<double> one = {1.0};
  CHECK_THROWS_AS(soft_route(experts, one), ModelError);
}

TEST_CASE("prefixes are validated") {
  const ModelConfig cfg = support::tiny_config(FusionMethod::Method1);
  const Captioner model(cfg);
  const auto mem = model.encode(tiny_features(cfg, 1));
  CHECK_THROWS_AS(model.next_log_probs(mem, std::vector<int>{}), ModelError);
  CHECK_THROWS_AS(model.next_log_probs(mem, std::vector<int>{5}), ModelError);
  CHECK_THROWS_AS(model.next_log_probs(mem, std::vector<int>{tokens::kBos, 99}), ModelError);
  CHECK_THROWS_AS(model.next_log_probs(mem, std::vector<int>(static_cast<std::size_t>(cfg.max_len) + 2, tokens::kBos)),
                  ModelError);

  MultiResFeatures wrong = tiny_features(cfg, 1);
  wrong.per_resolution.pop_back();
  CHECK_THROWS_AS(model.token_sets(wrong), ModelError);
  MultiResFeatures wide = tiny_features(cfg, 1);
  wide.global.values.push_back(0.0f);
  CHECK_THROWS_AS(model.token_sets(wide), ModelError);
}

TEST_CASE("config text round trip and validation") {
  ModelConfig cfg = support::tiny_config(FusionMethod::Method3);
  cfg.use_global = false;
  cfg.resolutions = {4, 9, 16};
  const ModelConfig back = ModelConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.fusion == FusionMethod::Method3);
  CHECK(back.resolutions == cfg.resolutions);
  CHECK_FALSE(back.use_global);

  CHECK(parse_fusion("m2") == FusionMethod::Method2);
  CHECK(parse_fusion("4") == FusionMethod::Method4);
  CHECK(parse_fusion("method1") == FusionMethod::Method1);
  CHECK_THROWS_AS(parse_fusion("m5"), ModelError);

  ModelConfig bad = cfg;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = cfg;
  bad.resolutions.clear();
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = cfg;
  bad.vocab_size = 3;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  CHECK_THROWS_AS(ModelConfig::from_text("layers=x\n"), ModelError);
}

TEST_CASE("saved models reload with identical outputs") {
  for (FusionMethod m : kAllMethods) {
    CAPTURE(to_string(m));
    const ModelConfig cfg = support::tiny_config(m);
    const Captioner model(cfg);
    const auto dir = support::temp_dir("model_save_" + to_string(m));
    model.save(dir);
    const Captioner back = Captioner::load(dir);
    CHECK(back.config().to_text() == cfg.to_text());
    const MultiResFeatures f = tiny_features(cfg, 9);
    const std::vector<int> prefix = {tokens::kBos, 7};
    const auto a = model.next_log_probs(model.encode(f), prefix);
    const auto b = back.next_log_probs(back.encode(f), prefix);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
  }
  const ModelConfig cfg = support::tiny_config(FusionMethod::Method1);
  auto named = ModelParams::init(cfg, 1).to_named();
  named[0].tensor = Tensor::matrix(1, 1);
  CHECK_THROWS_AS(ModelParams::from_named(cfg, named), ModelError);
  CHECK_THROWS_AS(Captioner::load(support::temp_dir("model_missing")), std::exception);
}
