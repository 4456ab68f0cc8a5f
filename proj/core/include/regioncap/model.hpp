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
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "regioncap/checkpoint.hpp"
#include "regioncap/regionpipe.hpp"
#include "regioncap/tensor.hpp"

namespace regioncap {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How several superpixel resolutions are combined.
///   Method1: all token sets concatenated, one encoder, one decoder.
///   Method2: one encoder per resolution, outputs concatenated, one decoder.
///   Method3: one shared encoder, one decoder per resolution, soft router.
///   Method4: one encoder and one decoder per resolution, soft router.
enum class FusionMethod { Method1, Method2, Method3, Method4 };

std::string to_string(FusionMethod m);
/// Accepts "m1".."m4", "1".."4" and "method1".."method4".
FusionMethod parse_fusion(const std::string& s);

struct ModelConfig {
  int layers = 6;
  int heads = 8;
  int d_model = 512;
  int d_ff = 2048;
  int vocab_size = 10000;
  std::vector<int> resolutions{10, 25};
  FusionMethod fusion = FusionMethod::Method2;
  bool use_global = true;
  int max_len = 20;
  std::uint64_t seed = 1;

  void validate() const;
  int head_dim() const { return d_model / heads; }
  int encoder_count() const;
  int decoder_count() const;
  bool routed() const {
    return fusion == FusionMethod::Method3 || fusion == FusionMethod::Method4;
  }

  /// Plain "key=value" lines.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ModelConfig load(const std::filesystem::path& path);
};

/// Ordered, named parameter storage. Indices are stable for the lifetime of
/// the store.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }
  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

struct AttentionWeights {
  std::size_t wq, wk, wv, wo;
};
struct NormWeights {
  std::size_t gamma, beta;
};
struct FeedForwardWeights {
  std::size_t w1, b1, w2, b2;
};
struct EncoderLayerWeights {
  AttentionWeights self_attn;
  NormWeights norm1;
  FeedForwardWeights ff;
  NormWeights norm2;
};
struct DecoderLayerWeights {
  AttentionWeights self_attn;
  NormWeights norm1;
  AttentionWeights cross_attn;
  NormWeights norm2;
  FeedForwardWeights ff;
  NormWeights norm3;
};
struct EncoderWeights {
  std::vector<EncoderLayerWeights> layers;
};
struct DecoderWeights {
  std::size_t embedding;
  std::vector<DecoderLayerWeights> layers;
  std::size_t out_w, out_b;
};
struct RouterWeights {
  std::size_t w, b;
};

struct ModelParams {
  ParamStore store;
  std::vector<EncoderWeights> encoders;
  std::vector<DecoderWeights> decoders;
  std::optional<RouterWeights> router;

  /// Matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, norm gains 1.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<NamedTensor> to_named() const;
  /// Copies values by name into a freshly laid-out parameter set.
  static ModelParams from_named(const ModelConfig& cfg, const std::vector<NamedTensor>& tensors);
};

/// Binds parameters to a tape on first use.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store)
      : tape_(tape), store_(store), vars_(store.size()) {}

  Var operator()(std::size_t index);
  /// Gradient of every parameter (zeros where unused) after backward().
  std::vector<Tensor> gradients() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::vector<std::optional<Var>> vars_;
};

// ---------------------------------------------------------------------------
// building blocks

/// PE(pos, 2i) = sin(pos / 10000^(2i/d)), PE(pos, 2i+1) = cos(same angle).
Tensor positional_encoding(int length, int d_model);

/// Additive mask [n x n] with -inf above the diagonal.
Tensor causal_mask(int n);

/// softmax((x_q Wq)(x_kv Wk)^T / sqrt(d_k) + mask) (x_kv Wv), d_k = cols of Wq.
Var attention_head(Tape& t, Var x_q, Var x_kv, Var wq, Var wk, Var wv,
                   const Tensor* mask = nullptr);

struct AttentionVars {
  Var wq, wk, wv, wo;
};

/// [head_1 | ... | head_n] Wo. Head h uses column block h of Wq/Wk/Wv.
Var multi_head(Tape& t, Var x_q, Var x_kv, const AttentionVars& w, int heads,
               const Tensor* mask = nullptr);

/// layer_norm(x + multi_head(x, kv)).
Var attention_sublayer(Tape& t, Var x, Var kv, const AttentionVars& w, Var gamma, Var beta,
                       int heads, const Tensor* mask = nullptr);

/// relu(x W1 + b1) W2 + b2.
Var feed_forward(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2);

/// Adds positional encodings, then runs every encoder layer
/// (self-attention sublayer, feed-forward sublayer, both post-norm).
Var encoder_forward(Tape& t, ParamBinder& p, const EncoderWeights& enc, Var tokens, int heads);

/// Decoder hidden states [len x d] for the token prefix (must start with BOS).
Var decoder_hidden(Tape& t, ParamBinder& p, const DecoderWeights& dec, Var memory,
                   std::span<const int> prefix, int heads);

/// Per-position logits [len x vocab].
Var decoder_logits(Tape& t, ParamBinder& p, const DecoderWeights& dec, Var hidden);

/// Convex combination of expert distributions with the given router weights.
std::vector<double> soft_route(std::span<const std::vector<double>> experts,
                               std::span<const double> weights);

/// Encoder output(s) feeding the decoder(s): one memory for Methods 1/2, one
/// per resolution for Methods 3/4.
struct FusedMemory {
  std::vector<Var> memories;
  bool routed = false;
};

FusedMemory fuse(Tape& t, ParamBinder& p, const ModelParams& params, const ModelConfig& cfg,
                 std::span<const Tensor> token_sets);

// ---------------------------------------------------------------------------

/// Caption model: parameters plus forward passes for training and decoding.
class Captioner {
 public:
  Captioner(ModelConfig cfg, ModelParams params);
  explicit Captioner(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// One token matrix per resolution: [global row if use_global; regions].
  std::vector<Tensor> token_sets(const MultiResFeatures& features) const;

  /// Per-position log-probabilities [len x vocab] over next tokens.
  Var sequence_log_probs(Tape& t, ParamBinder& p, const FusedMemory& mem,
                         std::span<const int> input_ids) const;

  /// Mean teacher-forced token cross-entropy for one caption
  /// (ids = BOS w1 .. wn EOS).
  Var caption_loss(Tape& t, ParamBinder& p, const FusedMemory& mem, std::span<const int> ids,
                   int pad_id = 0) const;

  /// Sum of log p(ids[i+1] | ids[0..i]).
  Var caption_log_prob(Tape& t, ParamBinder& p, const FusedMemory& mem,
                       std::span<const int> ids) const;

  /// Logits of one decoder for the position after the prefix.
  Tensor decoder_step(const std::vector<Tensor>& memories, std::span<const int> prefix,
                      int decoder_index = 0) const;

  /// Encoded memories detached from any tape, for decoding.
  std::vector<Tensor> encode(const MultiResFeatures& features) const;

  /// log p(next | prefix) over the vocabulary.
  std::vector<double> next_log_probs(const std::vector<Tensor>& memories,
                                     std::span<const int> prefix) const;

  /// Router weights over experts for the position after the prefix
  /// (Methods 3/4 only).
  std::vector<double> router_weights(const std::vector<Tensor>& memories,
                                     std::span<const int> prefix) const;

  void save(const std::filesystem::path& dir) const;
  static Captioner load(const std::filesystem::path& dir);

 private:
  void check_prefix(std::span<const int> prefix) const;

  ModelConfig cfg_;
  ModelParams params_;
};

// ---------------------------------------------------------------------------
// decoding

struct CaptionHypothesis {
  std::vector<int> tokens;  // starts with BOS
  double log_prob = 0.0;
  bool finished = false;
};

/// log p(next | prefix) for a prefix that starts with BOS.
using NextTokenFn = std::function<std::vector<double>(std::span<const int> prefix)>;

/// Length-terminated beam search over cumulative log-probabilities. At most
/// `max_len` tokens follow BOS; hypotheses retire on EOS or at max_len.
/// Ties prefer the earlier parent, then the lower token id.
CaptionHypothesis beam_search(const NextTokenFn& next, int bos, int eos, int beam, int max_len);

/// Argmax decoding (lowest id wins ties).
CaptionHypothesis greedy_decode(const NextTokenFn& next, int bos, int eos, int max_len);

NextTokenFn next_token_fn(const Captioner& model, const std::vector<Tensor>& memories);

}  // namespace regioncap
