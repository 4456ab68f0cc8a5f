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

#include "regioncap/metrics.hpp"
#include "regioncap/model.hpp"
#include "regioncap/optim.hpp"
#include "regioncap/regionpipe.hpp"
#include "regioncap/textdata.hpp"

namespace regioncap {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int xe_epochs = 30;
  int scst_epochs = 30;
  int batch_size = 1;  // images per optimiser step
  int warmup_steps = 20;
  double lr_scale = 1.0;  // multiplies the Noam schedule
  double scst_lr = 5e-6;
  double scst_clip_norm = 5.0;
  int max_len = 20;  // caption words kept for teacher forcing
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_dir;
  bool verbose = false;

  void validate() const;
};

/// Image features paired with tokenized reference captions.
struct TrainingExample {
  std::string id;
  MultiResFeatures features;
  std::vector<Tokens> references;
};

struct TrainLogEntry {
  long step = 0;
  std::string phase;  // "xe" or "scst"
  int epoch = 0;
  double lr = 0.0;
  double value = 0.0;  // XE loss, or mean SCST reward
  double wall_seconds = 0.0;
};

struct EpochSnapshot {
  std::string phase;
  int epoch = 0;
  double metric = 0.0;
};

class TrainLog {
 public:
  void add(TrainLogEntry e);
  void snapshot(EpochSnapshot s) { snapshots_.push_back(std::move(s)); }
  const std::vector<TrainLogEntry>& entries() const { return entries_; }
  const std::vector<EpochSnapshot>& snapshots() const { return snapshots_; }
  long last_step() const { return entries_.empty() ? 0 : entries_.back().step; }

  /// step,phase,epoch,lr,loss_or_reward,wall_seconds
  void write_csv(const std::filesystem::path& path) const;
  std::string csv() const;

 private:
  std::vector<TrainLogEntry> entries_;
  std::vector<EpochSnapshot> snapshots_;
};

/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
double noam_lr(long step, int d_model, int warmup);

/// Called after every epoch; may record a metric and request an early stop.
struct EpochControl {
  std::optional<double> metric;
  bool stop = false;
};
using EpochHook = std::function<EpochControl(const std::string& phase, int epoch, const Captioner&)>;

/// Teacher-forced cross-entropy with Adam on the Noam schedule. Each epoch
/// visits every image once in a seeded order and uses one seeded reference.
TrainLog xe_train(Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
                  const TrainConfig& cfg, const EpochHook& hook = {});

/// Mean teacher-forced loss of reference `ref_index` of each image.
double xe_loss(const Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
               int max_len, std::size_t ref_index = 0);

/// Draws ids from the model, starting at BOS and ending at EOS or max_len.
std::vector<int> sample_caption(const Captioner& model, const std::vector<Tensor>& memories,
                                int max_len, CounterRng& rng);

std::vector<int> greedy_caption(const Captioner& model, const std::vector<Tensor>& memories,
                                int max_len);

struct PolicyGradient {
  double loss = 0.0;
  double log_prob = 0.0;  // of the sampled ids
  std::vector<Tensor> grads;
};

/// Gradient of -advantage * log p(sample_ids) for one image.
PolicyGradient policy_gradient(const Captioner& model, const MultiResFeatures& features,
                               std::span<const int> sample_ids, double advantage);

struct ScstDraw {
  std::vector<int> sample;
  std::vector<int> baseline;
  double sample_reward = 0.0;
  double baseline_reward = 0.0;
  double advantage() const { return sample_reward - baseline_reward; }
};

/// One sampled caption and the greedy baseline, both scored with CIDEr-D.
ScstDraw scst_draw(const Captioner& model, const TrainingExample& example, const Vocab& vocab,
                   const CiderScorer& scorer, int max_len, CounterRng& rng);

/// Self-critical finetuning at a fixed learning rate with a greedy baseline
/// and CIDEr-D reward (IDF frozen on the training references).
TrainLog scst_finetune(Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
                       const TrainConfig& cfg, const EpochHook& hook = {});

struct ImageCaption {
  std::string id;
  Tokens caption;
};

struct EvalReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::size_t images = 0;
  std::vector<ImageCaption> captions;

  /// {"BLEU-4", "ROUGE-L", "CIDEr", "METEOR": "n/a", "SPICE": "n/a", "images"}
  std::string to_json() const;
};

/// Metrics of `captions` against the references of the matching examples.
EvalReport score_captions(std::vector<ImageCaption> captions, std::span<const TrainingExample> data);

/// Beam-search captions for every image, then corpus BLEU-4, mean ROUGE-L and
/// plain CIDEr with IDF taken from this split's references.
EvalReport evaluate(const Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
                    int beam, int max_len, int workers = 1);

/// Mean CIDEr-D of greedy captions with the given scorer.
double greedy_cider_d(const Captioner& model, std::span<const TrainingExample> data,
                      const Vocab& vocab, const CiderScorer& scorer, int max_len);

/// JSON array of {"image_id", "caption"}.
void write_captions(const std::vector<ImageCaption>& captions, const std::filesystem::path& path);
std::vector<ImageCaption> read_captions(const std::filesystem::path& path);

std::vector<std::vector<Tokens>> reference_lists(std::span<const TrainingExample> data);

}  // namespace regioncap
