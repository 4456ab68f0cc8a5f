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
#include "regioncap/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "regioncap/rng.hpp"
#include "regioncap/tokens.hpp"

namespace regioncap {

// ---------------------------------------------------------------------------
// configuration

std::string to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::Method1: return "m1";
    case FusionMethod::Method2: return "m2";
    case FusionMethod::Method3: return "m3";
    case FusionMethod::Method4: return "m4";
  }
  return "m2";
}

FusionMethod parse_fusion(const std::string& s) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v.rfind("method", 0) == 0) v = v.substr(6);
  if (!v.empty() && v[0] == 'm') v = v.substr(1);
  if (v == "1") return FusionMethod::Method1;
  if (v == "2") return FusionMethod::Method2;
  if (v == "3") return FusionMethod::Method3;
  if (v == "4") return FusionMethod::Method4;
  throw ModelError("unknown fusion method '" + s + "' (expected m1..m4)");
}

void ModelConfig::validate() const {
  if (layers < 0) throw ModelError("layers must be >= 0");
  if (heads < 1 || d_model < 1 || d_model % heads != 0) {
    throw ModelError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                     std::to_string(heads) + ")");
  }
  if (d_ff < 1) throw ModelError("d_ff must be >= 1");
  if (vocab_size < tokens::kSpecialCount) throw ModelError("vocab_size must cover the 4 special tokens");
  if (resolutions.empty()) throw ModelError("at least one resolution is required");
  for (int k : resolutions) {
    if (k < 1) throw ModelError("resolutions must be >= 1");
  }
  if (max_len < 1) throw ModelError("max_len must be >= 1");
}

int ModelConfig::encoder_count() const {
  const int k = static_cast<int>(resolutions.size());
  return (fusion == FusionMethod::Method2 || fusion == FusionMethod::Method4) ? k : 1;
}

int ModelConfig::decoder_count() const {
  return routed() ? static_cast<int>(resolutions.size()) : 1;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "layers=" << layers << '\n'
     << "heads=" << heads << '\n'
     << "d_model=" << d_model << '\n'
     << "d_ff=" << d_ff << '\n'
     << "vocab_size=" << vocab_size << '\n'
     << "resolutions=";
  for (std::size_t i = 0; i < resolutions.size(); ++i) os << (i ? "," : "") << resolutions[i];
  os << '\n'
     << "fusion=" << to_string(fusion) << '\n'
     << "use_global=" << (use_global ? 1 : 0) << '\n'
     << "max_len=" << max_len << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ModelError("bad config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "layers") cfg.layers = std::stoi(val);
      else if (key == "heads") cfg.heads = std::stoi(val);
      else if (key == "d_model") cfg.d_model = std::stoi(val);
      else if (key == "d_ff") cfg.d_ff = std::stoi(val);
      else if (key == "vocab_size") cfg.vocab_size = std::stoi(val);
      else if (key == "fusion") cfg.fusion = parse_fusion(val);
      else if (key == "use_global") cfg.use_global = val == "1" || val == "true";
      else if (key == "max_len") cfg.max_len = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "resolutions") {
        cfg.resolutions.clear();
        std::istringstream rs(val);
        std::string tok;
        while (std::getline(rs, tok, ',')) cfg.resolutions.push_back(std::stoi(tok));
      } else {
        throw ModelError("unknown config key: " + key);
      }
    } catch (const std::logic_error&) {
      throw ModelError("bad value for config key " + key + ": " + val);
    }
  }
  cfg.validate();
  return cfg;
}

void ModelConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write " + path.string());
  out << to_text();
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return from_text(os.str());
}

// ---------------------------------------------------------------------------
// parameters

std::size_t ParamStore::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

namespace {

class Initializer {
 public:
  Initializer(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  std::size_t matrix(const std::string& name, int rows, int cols) {
    Tensor t = Tensor::matrix(rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : t.values()) v = rng_.uniform(-bound, bound);
    return store_.add(name, std::move(t));
  }
  std::size_t filled(const std::string& name, int cols, double value) {
    return store_.add(name, Tensor::matrix(1, cols, value));
  }
  AttentionWeights attention(const std::string& prefix, int d) {
    return {matrix(prefix + ".wq", d, d), matrix(prefix + ".wk", d, d),
            matrix(prefix + ".wv", d, d), matrix(prefix + ".wo", d, d)};
  }
  NormWeights norm(const std::string& prefix, int d) {
    return {filled(prefix + ".gamma", d, 1.0), filled(prefix + ".beta", d, 0.0)};
  }
  FeedForwardWeights ff(const std::string& prefix, int d, int d_ff) {
    const std::size_t w1 = matrix(prefix + ".w1", d, d_ff);
    const std::size_t b1 = filled(prefix + ".b1", d_ff, 0.0);
    const std::size_t w2 = matrix(prefix + ".w2", d_ff, d);
    const std::size_t b2 = filled(prefix + ".b2", d, 0.0);
    return {w1, b1, w2, b2};
  }

 private:
  ParamStore& store_;
  CounterRng rng_;
};

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  Initializer init(p.store, seed);
  const int d = cfg.d_model;
  for (int e = 0; e < cfg.encoder_count(); ++e) {
    EncoderWeights enc;
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "enc" + std::to_string(e) + ".layer" + std::to_string(l);
      EncoderLayerWeights lw;
      lw.self_attn = init.attention(pre + ".self_attn", d);
      lw.norm1 = init.norm(pre + ".norm1", d);
      lw.ff = init.ff(pre + ".ff", d, cfg.d_ff);
      lw.norm2 = init.norm(pre + ".norm2", d);
      enc.layers.push_back(lw);
    }
    p.encoders.push_back(std::move(enc));
  }
  for (int di = 0; di < cfg.decoder_count(); ++di) {
    const std::string dp = "dec" + std::to_string(di);
    DecoderWeights dec;
    dec.embedding = init.matrix(dp + ".embedding", cfg.vocab_size, d);
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = dp + ".layer" + std::to_string(l);
      DecoderLayerWeights lw;
      lw.self_attn = init.attention(pre + ".self_attn", d);
      lw.norm1 = init.norm(pre + ".norm1", d);
      lw.cross_attn = init.attention(pre + ".cross_attn", d);
      lw.norm2 = init.norm(pre + ".norm2", d);
      lw.ff = init.ff(pre + ".ff", d, cfg.d_ff);
      lw.norm3 = init.norm(pre + ".norm3", d);
      dec.layers.push_back(lw);
    }
    dec.out_w = init.matrix(dp + ".out.w", d, cfg.vocab_size);
    dec.out_b = init.filled(dp + ".out.b", cfg.vocab_size, 0.0);
    p.decoders.push_back(std::move(dec));
  }
  if (cfg.routed()) {
    const int k = static_cast<int>(cfg.resolutions.size());
    p.router = RouterWeights{init.matrix("router.w", d, k), init.filled("router.b", k, 0.0)};
  }
  return p;
}

std::vector<NamedTensor> ModelParams::to_named() const {
  std::vector<NamedTensor> out;
  out.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back({store.name(i), store[i]});
  return out;
}

ModelParams ModelParams::from_named(const ModelConfig& cfg, const std::vector<NamedTensor>& tensors) {
  ModelParams p = init(cfg, cfg.seed);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  if (by_name.size() != p.store.size()) {
    throw ModelError("checkpoint holds " + std::to_string(by_name.size()) +
                     " tensors, model expects " + std::to_string(p.store.size()));
  }
  for (std::size_t i = 0; i < p.store.size(); ++i) {
    auto it = by_name.find(p.store.name(i));
    if (it == by_name.end()) throw ModelError("checkpoint lacks tensor " + p.store.name(i));
    if (it->second->size() != p.store[i].size()) {
      throw ModelError("checkpoint tensor " + p.store.name(i) + " has shape " +
                       shape_string(it->second->shape()) + ", expected " +
                       shape_string(p.store[i].shape()));
    }
    p.store[i] = Tensor(p.store[i].shape(), it->second->values());
  }
  return p;
}

Var ParamBinder::operator()(std::size_t index) {
  auto& slot = vars_.at(index);
  if (!slot) slot = tape_.parameter(store_[index]);
  return *slot;
}

std::vector<Tensor> ParamBinder::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    out.push_back(vars_[i] ? tape_.grad(*vars_[i]) : Tensor(store_[i].shape(), 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// blocks

Tensor positional_encoding(int length, int d_model) {
  if (length < 1) throw ModelError("positional encoding needs length >= 1");
  Tensor pe = Tensor::matrix(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; 2 * i < d_model; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / d_model);
      pe(pos, 2 * i) = std::sin(angle);
      if (2 * i + 1 < d_model) pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor causal_mask(int n) {
  Tensor m = Tensor::matrix(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = r + 1; c < n; ++c) m(r, c) = -std::numeric_limits<double>::infinity();
  }
  return m;
}

Var attention_head(Tape& t, Var x_q, Var x_kv, Var wq, Var wk, Var wv, const Tensor* mask) {
  const Var q = ops::matmul(t, x_q, wq);
  const Var k = ops::matmul(t, x_kv, wk);
  const Var v = ops::matmul(t, x_kv, wv);
  const double d_k = t.value(wq).cols();
  Var scores = ops::scale(t, ops::matmul(t, q, ops::transpose(t, k)), 1.0 / std::sqrt(d_k));
  if (mask) scores = ops::add(t, scores, t.constant(*mask));
  return ops::matmul(t, ops::softmax_rows(t, scores), v);
}

Var multi_head(Tape& t, Var x_q, Var x_kv, const AttentionVars& w, int heads, const Tensor* mask) {
  const int d = t.value(w.wq).cols();
  if (heads < 1 || d % heads != 0) throw ModelError("multi_head: width not divisible by head count");
  const int dk = d / heads;
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    outs.push_back(attention_head(t, x_q, x_kv, ops::slice_cols(t, w.wq, h * dk, dk),
                                  ops::slice_cols(t, w.wk, h * dk, dk),
                                  ops::slice_cols(t, w.wv, h * dk, dk), mask));
  }
  const Var cat = heads == 1 ? outs[0] : ops::concat_cols(t, outs);
  return ops::matmul(t, cat, w.wo);
}

Var attention_sublayer(Tape& t, Var x, Var kv, const AttentionVars& w, Var gamma, Var beta,
                       int heads, const Tensor* mask) {
  return ops::layer_norm(t, ops::add(t, x, multi_head(t, x, kv, w, heads, mask)), gamma, beta);
}

Var feed_forward(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2) {
  const Var hidden = ops::relu(t, ops::add_row(t, ops::matmul(t, x, w1), b1));
  return ops::add_row(t, ops::matmul(t, hidden, w2), b2);
}

namespace {

AttentionVars bind(ParamBinder& p, const AttentionWeights& w) {
  return {p(w.wq), p(w.wk), p(w.wv), p(w.wo)};
}

Var ff_sublayer(Tape& t, ParamBinder& p, Var x, const FeedForwardWeights& ff, const NormWeights& n) {
  const Var y = feed_forward(t, x, p(ff.w1), p(ff.b1), p(ff.w2), p(ff.b2));
  return ops::layer_norm(t, ops::add(t, x, y), p(n.gamma), p(n.beta));
}

}  // namespace

Var encoder_forward(Tape& t, ParamBinder& p, const EncoderWeights& enc, Var tokens, int heads) {
  const Tensor& x = t.value(tokens);
  Var h = ops::add(t, tokens, t.constant(positional_encoding(x.rows(), x.cols())));
  for (const auto& layer : enc.layers) {
    h = attention_sublayer(t, h, h, bind(p, layer.self_attn), p(layer.norm1.gamma),
                           p(layer.norm1.beta), heads);
    h = ff_sublayer(t, p, h, layer.ff, layer.norm2);
  }
  return h;
}

Var decoder_hidden(Tape& t, ParamBinder& p, const DecoderWeights& dec, Var memory,
                   std::span<const int> prefix, int heads) {
  if (prefix.empty()) throw ModelError("decoder needs a non-empty prefix");
  const Var emb = ops::embedding(t, p(dec.embedding), prefix);
  const int n = static_cast<int>(prefix.size());
  const int d = t.value(emb).cols();
  Var h = ops::add(t, emb, t.constant(positional_encoding(n, d)));
  const Tensor mask = causal_mask(n);
  for (const auto& layer : dec.layers) {
    h = attention_sublayer(t, h, h, bind(p, layer.self_attn), p(layer.norm1.gamma),
                           p(layer.norm1.beta), heads, &mask);
    h = attention_sublayer(t, h, memory, bind(p, layer.cross_attn), p(layer.norm2.gamma),
                           p(layer.norm2.beta), heads);
    h = ff_sublayer(t, p, h, layer.ff, layer.norm3);
  }
  return h;
}

Var decoder_logits(Tape& t, ParamBinder& p, const DecoderWeights& dec, Var hidden) {
  return ops::add_row(t, ops::matmul(t, hidden, p(dec.out_w)), p(dec.out_b));
}

std::vector<double> soft_route(std::span<const std::vector<double>> experts,
                               std::span<const double> weights) {
  if (experts.empty() || experts.size() != weights.size()) {
    throw ModelError("soft_route: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(experts.size()) + " experts");
  }
  const std::size_t n = experts[0].size();
  std::vector<double> out(n, 0.0);
  for (std::size_t e = 0; e < experts.size(); ++e) {
    if (experts[e].size() != n) throw ModelError("soft_route: expert distributions differ in length");
    for (std::size_t i = 0; i < n; ++i) out[i] += weights[e] * experts[e][i];
  }
  return out;
}

FusedMemory fuse(Tape& t, ParamBinder& p, const ModelParams& params, const ModelConfig& cfg,
                 std::span<const Tensor> token_sets) {
  const std::size_t k = cfg.resolutions.size();
  if (token_sets.size() != k) {
    throw ModelError("fuse: " + std::to_string(token_sets.size()) + " token sets for " +
                     std::to_string(k) + " configured resolutions");
  }
  std::vector<Var> sets;
  sets.reserve(k);
  for (const Tensor& s : token_sets) {
    if (s.cols() != cfg.d_model) {
      throw ModelError("fuse: token width " + std::to_string(s.cols()) + " != d_model " +
                       std::to_string(cfg.d_model));
    }
    sets.push_back(t.constant(s));
  }

  FusedMemory out;
  out.routed = cfg.routed();
  switch (cfg.fusion) {
    case FusionMethod::Method1: {
      const Var all = k == 1 ? sets[0] : ops::concat_rows(t, sets);
      out.memories.push_back(encoder_forward(t, p, params.encoders[0], all, cfg.heads));
      break;
    }
    case FusionMethod::Method2: {
      std::vector<Var> encoded;
      for (std::size_t i = 0; i < k; ++i) {
        encoded.push_back(encoder_forward(t, p, params.encoders[i], sets[i], cfg.heads));
      }
      out.memories.push_back(k == 1 ? encoded[0] : ops::concat_rows(t, encoded));
      break;
    }
    case FusionMethod::Method3:
      for (std::size_t i = 0; i < k; ++i) {
        out.memories.push_back(encoder_forward(t, p, params.encoders[0], sets[i], cfg.heads));
      }
      break;
    case FusionMethod::Method4:
      for (std::size_t i = 0; i < k; ++i) {
        out.memories.push_back(encoder_forward(t, p, params.encoders[i], sets[i], cfg.heads));
      }
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Captioner

Captioner::Captioner(ModelConfig cfg, ModelParams params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  if (static_cast<int>(params_.encoders.size()) != cfg_.encoder_count() ||
      static_cast<int>(params_.decoders.size()) != cfg_.decoder_count() ||
      params_.router.has_value() != cfg_.routed()) {
    throw ModelError("parameter layout does not match the model configuration");
  }
}

Captioner::Captioner(ModelConfig cfg) : Captioner(cfg, ModelParams::init(cfg, cfg.seed)) {}

std::vector<Tensor> Captioner::token_sets(const MultiResFeatures& f) const {
  if (f.per_resolution.size() != cfg_.resolutions.size()) {
    throw ModelError("features hold " + std::to_string(f.per_resolution.size()) +
                     " resolutions, model expects " + std::to_string(cfg_.resolutions.size()));
  }
  if (f.dim() != cfg_.d_model) {
    throw ModelError("feature dimension " + std::to_string(f.dim()) + " != d_model " +
                     std::to_string(cfg_.d_model));
  }
  std::vector<Tensor> out;
  for (std::size_t r = 0; r < f.per_resolution.size(); ++r) {
    const auto& res = f.per_resolution[r];
    if (res.k != cfg_.resolutions[r]) {
      throw ModelError("feature resolution " + std::to_string(res.k) + " != configured " +
                       std::to_string(cfg_.resolutions[r]));
    }
    const int rows = static_cast<int>(res.regions.size()) + (cfg_.use_global ? 1 : 0);
    if (rows == 0) throw ModelError("resolution " + std::to_string(res.k) + " has no regions");
    Tensor t = Tensor::matrix(rows, cfg_.d_model);
    int row = 0;
    auto put = [&](const FeatureVector& v) {
      if (v.dim() != cfg_.d_model) throw ModelError("feature vectors differ in dimension");
      for (int c = 0; c < cfg_.d_model; ++c) t(row, c) = v.values[c];
      ++row;
    };
    if (cfg_.use_global) put(f.global);
    for (const auto& reg : res.regions) put(reg.vec);
    out.push_back(std::move(t));
  }
  return out;
}

void Captioner::check_prefix(std::span<const int> prefix) const {
  if (prefix.empty()) throw ModelError("empty decoder prefix");
  if (static_cast<int>(prefix.size()) > cfg_.max_len + 1) {
    throw ModelError("decoder prefix of " + std::to_string(prefix.size()) +
                     " tokens exceeds max length " + std::to_string(cfg_.max_len + 1));
  }
  if (prefix[0] != tokens::kBos) throw ModelError("decoder prefix must start with BOS");
  for (int id : prefix) {
    if (id < 0 || id >= cfg_.vocab_size) throw ModelError("token id outside the vocabulary");
  }
}

namespace {

struct DecodeOutputs {
  std::optional<Var> logits;  // single decoder
  std::optional<Var> probs;   // routed mixture
};

Var router_weights_var(Tape& t, ParamBinder& p, const RouterWeights& r,
                       const std::vector<Var>& hiddens) {
  Var avg = hiddens[0];
  for (std::size_t i = 1; i < hiddens.size(); ++i) avg = ops::add(t, avg, hiddens[i]);
  if (hiddens.size() > 1) avg = ops::scale(t, avg, 1.0 / static_cast<double>(hiddens.size()));
  return ops::softmax_rows(t, ops::add_row(t, ops::matmul(t, avg, p(r.w)), p(r.b)));
}

DecodeOutputs decode_outputs(Tape& t, ParamBinder& p, const ModelParams& params,
                             const ModelConfig& cfg, const FusedMemory& mem,
                             std::span<const int> ids) {
  DecodeOutputs out;
  if (!mem.routed) {
    const Var h = decoder_hidden(t, p, params.decoders[0], mem.memories[0], ids, cfg.heads);
    out.logits = decoder_logits(t, p, params.decoders[0], h);
    return out;
  }
  std::vector<Var> hiddens;
  std::vector<Var> probs;
  for (std::size_t e = 0; e < mem.memories.size(); ++e) {
    const Var h = decoder_hidden(t, p, params.decoders[e], mem.memories[e], ids, cfg.heads);
    hiddens.push_back(h);
    probs.push_back(ops::softmax_rows(t, decoder_logits(t, p, params.decoders[e], h)));
  }
  const Var w = router_weights_var(t, p, *params.router, hiddens);
  Var mix = ops::row_scale(t, probs[0], ops::slice_cols(t, w, 0, 1));
  for (std::size_t e = 1; e < probs.size(); ++e) {
    mix = ops::add(t, mix, ops::row_scale(t, probs[e], ops::slice_cols(t, w, static_cast<int>(e), 1)));
  }
  out.probs = mix;
  return out;
}

std::vector<int> shifted_targets(std::span<const int> ids) {
  return std::vector<int>(ids.begin() + 1, ids.end());
}

}  // namespace

Var Captioner::sequence_log_probs(Tape& t, ParamBinder& p, const FusedMemory& mem,
                                  std::span<const int> input_ids) const {
  check_prefix(input_ids);
  const DecodeOutputs out = decode_outputs(t, p, params_, cfg_, mem, input_ids);
  return out.logits ? ops::log_softmax_rows(t, *out.logits) : ops::log(t, *out.probs);
}

Var Captioner::caption_loss(Tape& t, ParamBinder& p, const FusedMemory& mem,
                            std::span<const int> ids, int pad_id) const {
  if (ids.size() < 2) throw ModelError("caption needs at least BOS and one target token");
  const auto input = ids.first(ids.size() - 1);
  check_prefix(input);
  const std::vector<int> targets = shifted_targets(ids);
  const DecodeOutputs out = decode_outputs(t, p, params_, cfg_, mem, input);
  return out.logits ? ops::cross_entropy(t, *out.logits, targets, pad_id)
                    : ops::nll_from_probs(t, *out.probs, targets, pad_id);
}

Var Captioner::caption_log_prob(Tape& t, ParamBinder& p, const FusedMemory& mem,
                                std::span<const int> ids) const {
  if (ids.size() < 2) throw ModelError("caption needs at least BOS and one target token");
  const auto input = ids.first(ids.size() - 1);
  check_prefix(input);
  const std::vector<int> targets = shifted_targets(ids);
  const DecodeOutputs out = decode_outputs(t, p, params_, cfg_, mem, input);
  const Var nll = out.logits
                      ? ops::cross_entropy(t, *out.logits, targets, -1, ops::Reduction::Sum)
                      : ops::nll_from_probs(t, *out.probs, targets, -1, ops::Reduction::Sum);
  return ops::scale(t, nll, -1.0);
}

std::vector<Tensor> Captioner::encode(const MultiResFeatures& features) const {
  Tape t(false);
  ParamBinder p(t, params_.store);
  const auto sets = token_sets(features);
  const FusedMemory mem = fuse(t, p, params_, cfg_, sets);
  std::vector<Tensor> out;
  for (Var m : mem.memories) out.push_back(t.value(m));
  return out;
}

Tensor Captioner::decoder_step(const std::vector<Tensor>& memories, std::span<const int> prefix,
                               int decoder_index) const {
  check_prefix(prefix);
  if (decoder_index < 0 || decoder_index >= static_cast<int>(params_.decoders.size()) ||
      decoder_index >= static_cast<int>(memories.size())) {
    throw ModelError("decoder index out of range");
  }
  Tape t(false);
  ParamBinder p(t, params_.store);
  const auto& dec = params_.decoders[decoder_index];
  const Var h = decoder_hidden(t, p, dec, t.constant(memories[decoder_index]), prefix, cfg_.heads);
  const Var last = ops::slice_rows(t, h, static_cast<int>(prefix.size()) - 1, 1);
  return t.value(decoder_logits(t, p, dec, last));
}

std::vector<double> Captioner::next_log_probs(const std::vector<Tensor>& memories,
                                              std::span<const int> prefix) const {
  check_prefix(prefix);
  Tape t(false);
  ParamBinder p(t, params_.store);
  FusedMemory mem;
  mem.routed = cfg_.routed();
  for (const Tensor& m : memories) mem.memories.push_back(t.constant(m));
  if (mem.memories.size() != static_cast<std::size_t>(cfg_.decoder_count())) {
    throw ModelError("expected " + std::to_string(cfg_.decoder_count()) + " encoded memories");
  }
  const Var lp = sequence_log_probs(t, p, mem, prefix);
  const Tensor& v = t.value(lp);
  const int last = v.rows() - 1;
  return std::vector<double>(v.values().begin() + static_cast<std::ptrdiff_t>(last) * v.cols(),
                             v.values().end());
}

std::vector<double> Captioner::router_weights(const std::vector<Tensor>& memories,
                                              std::span<const int> prefix) const {
  if (!cfg_.routed()) throw ModelError("router weights exist only for Methods 3 and 4");
  check_prefix(prefix);
  Tape t(false);
  ParamBinder p(t, params_.store);
  std::vector<Var> hiddens;
  for (std::size_t e = 0; e < memories.size(); ++e) {
    hiddens.push_back(decoder_hidden(t, p, params_.decoders[e], t.constant(memories[e]), prefix,
                                     cfg_.heads));
  }
  const Tensor& w = t.value(router_weights_var(t, p, *params_.router, hiddens));
  const int last = w.rows() - 1;
  return std::vector<double>(w.values().begin() + static_cast<std::ptrdiff_t>(last) * w.cols(),
                             w.values().end());
}

void Captioner::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  cfg_.save(dir / "model.cfg");
  save_checkpoint(params_.to_named(), dir / "params.bin");
}

Captioner Captioner::load(const std::filesystem::path& dir) {
  ModelConfig cfg = ModelConfig::load(dir / "model.cfg");
  ModelParams params = ModelParams::from_named(cfg, load_checkpoint(dir / "params.bin"));
  return Captioner(std::move(cfg), std::move(params));
}

NextTokenFn next_token_fn(const Captioner& model, const std::vector<Tensor>& memories) {
  return [&model, &memories](std::span<const int> prefix) {
    return model.next_log_probs(memories, prefix);
  };
}

}  // namespace regioncap
