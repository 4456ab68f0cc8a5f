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
#include "regioncap/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "regioncap/tokens.hpp"

namespace regioncap {

void TrainConfig::validate() const {
  if (xe_epochs < 0 || scst_epochs < 0) throw TrainError("epoch counts must be >= 0");
  if (batch_size < 1) throw TrainError("batch_size must be >= 1");
  if (warmup_steps < 1) throw TrainError("warmup_steps must be >= 1");
  if (!(lr_scale > 0.0)) throw TrainError("lr_scale must be > 0");
  if (!(scst_lr > 0.0)) throw TrainError("scst_lr must be > 0");
  if (max_len < 1) throw TrainError("max_len must be >= 1");
  if (checkpoint_every < 0) throw TrainError("checkpoint_every must be >= 0");
}

void TrainLog::add(TrainLogEntry e) {
  if (!entries_.empty() && e.step <= entries_.back().step) {
    throw TrainError("train log steps must increase");
  }
  entries_.push_back(std::move(e));
}

std::string TrainLog::csv() const {
  std::ostringstream os;
  os << "step,phase,epoch,lr,loss_or_reward,wall_seconds\n" << std::setprecision(10);
  for (const auto& e : entries_) {
    os << e.step << ',' << e.phase << ',' << e.epoch << ',' << e.lr << ',' << e.value << ','
       << e.wall_seconds << '\n';
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw TrainError("cannot write " + path.string());
  out << csv();
}

double noam_lr(long step, int d_model, int warmup) {
  if (step < 1) throw TrainError("noam_lr: step must be >= 1");
  if (d_model < 1 || warmup < 1) throw TrainError("noam_lr: d_model and warmup must be >= 1");
  const double s = static_cast<double>(step);
  return std::pow(d_model, -0.5) * std::min(std::pow(s, -0.5), s * std::pow(warmup, -1.5));
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_data(std::span<const TrainingExample> data) {
  if (data.empty()) throw TrainError("training set is empty");
  for (const auto& ex : data) {
    if (ex.references.empty()) throw TrainError("image " + ex.id + " has no reference captions");
    if (ex.features.per_resolution.empty()) throw TrainError("image " + ex.id + " has no features");
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, CounterRng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void maybe_checkpoint(const Captioner& model, const TrainConfig& cfg, const std::string& phase,
                      int epoch) {
  if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty()) {
    model.save(cfg.checkpoint_dir / (phase + "_epoch" + std::to_string(epoch)));
  }
}

bool run_hook(const EpochHook& hook, TrainLog& log, const std::string& phase, int epoch,
              const Captioner& model) {
  if (!hook) return false;
  const EpochControl c = hook(phase, epoch, model);
  if (c.metric) log.snapshot({phase, epoch, *c.metric});
  return c.stop;
}

}  // namespace

TrainLog xe_train(Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
                  const TrainConfig& cfg, const EpochHook& hook) {
  cfg.validate();
  check_data(data);
  if (vocab.size() > model.config().vocab_size) {
    throw TrainError("vocabulary larger than the model's vocab_size");
  }
  TrainLog log;
  AdamState adam;
  CounterRng rng = CounterRng(cfg.seed).fork(1);
  const auto t0 = Clock::now();
  long step = 0;

  for (int epoch = 1; epoch <= cfg.xe_epochs; ++epoch) {
    const auto order = epoch_order(data.size(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      ParamBinder binder(tape, model.params().store);
      std::optional<Var> total;
      for (std::size_t b = start; b < end; ++b) {
        const TrainingExample& ex = data[order[b]];
        const Tokens& ref = ex.references[rng.below(ex.references.size())];
        const std::vector<int> ids = encode(ref, vocab, cfg.max_len);
        const auto sets = model.token_sets(ex.features);
        const FusedMemory mem = fuse(tape, binder, model.params(), model.config(), sets);
        const Var loss = model.caption_loss(tape, binder, mem, ids, tokens::kPad);
        total = total ? ops::add(tape, *total, loss) : loss;
      }
      const Var batch_loss = ops::scale(tape, *total, 1.0 / static_cast<double>(end - start));
      const double value = tape.value(batch_loss).item();
      ++step;
      if (!std::isfinite(value)) {
        throw TrainError("non-finite XE loss at step " + std::to_string(step) + " (epoch " +
                         std::to_string(epoch) + "); lower lr_scale or check the features");
      }
      tape.backward(batch_loss);
      adam.lr = cfg.lr_scale * noam_lr(step, model.config().d_model, cfg.warmup_steps);
      adam_step(model.params().store.values(), binder.gradients(), adam);
      log.add({step, "xe", epoch, adam.lr, value, seconds_since(t0)});
      epoch_loss += value * static_cast<double>(end - start);
    }
    if (cfg.verbose) {
      std::cerr << "xe epoch " << epoch << " loss " << epoch_loss / data.size() << '\n';
    }
    maybe_checkpoint(model, cfg, "xe", epoch);
    if (run_hook(hook, log, "xe", epoch, model)) break;
  }
  return log;
}

double xe_loss(const Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
               int max_len, std::size_t ref_index) {
  check_data(data);
  double sum = 0.0;
  for (const auto& ex : data) {
    Tape tape(false);
    ParamBinder binder(tape, model.params().store);
    const auto sets = model.token_sets(ex.features);
    const FusedMemory mem = fuse(tape, binder, model.params(), model.config(), sets);
    const auto& ref = ex.references.at(std::min(ref_index, ex.references.size() - 1));
    const std::vector<int> ids = encode(ref, vocab, max_len);
    sum += tape.value(model.caption_loss(tape, binder, mem, ids, tokens::kPad)).item();
  }
  return sum / static_cast<double>(data.size());
}

std::vector<int> sample_caption(const Captioner& model, const std::vector<Tensor>& memories,
                                int max_len, CounterRng& rng) {
  std::vector<int> ids{tokens::kBos};
  while (static_cast<int>(ids.size()) - 1 < max_len) {
    std::vector<double> p = model.next_log_probs(memories, ids);
    for (double& v : p) v = std::exp(v);
    const int tok = sample_categorical(p, rng);
    ids.push_back(tok);
    if (tok == tokens::kEos) break;
  }
  return ids;
}

std::vector<int> greedy_caption(const Captioner& model, const std::vector<Tensor>& memories,
                                int max_len) {
  return greedy_decode(next_token_fn(model, memories), tokens::kBos, tokens::kEos, max_len).tokens;
}

PolicyGradient policy_gradient(const Captioner& model, const MultiResFeatures& features,
                               std::span<const int> sample_ids, double advantage) {
  Tape tape;
  ParamBinder binder(tape, model.params().store);
  const auto sets = model.token_sets(features);
  const FusedMemory mem = fuse(tape, binder, model.params(), model.config(), sets);
  const Var logp = model.caption_log_prob(tape, binder, mem, sample_ids);
  const Var loss = ops::scale(tape, logp, -advantage);
  tape.backward(loss);
  return {tape.value(loss).item(), tape.value(logp).item(), binder.gradients()};
}

ScstDraw scst_draw(const Captioner& model, const TrainingExample& example, const Vocab& vocab,
                   const CiderScorer& scorer, int max_len, CounterRng& rng) {
  const auto memories = model.encode(example.features);
  ScstDraw d;
  d.sample = sample_caption(model, memories, max_len, rng);
  d.baseline = greedy_caption(model, memories, max_len);
  d.sample_reward = scorer.score(decode(d.sample, vocab), example.references, CiderVariant::D);
  d.baseline_reward = scorer.score(decode(d.baseline, vocab), example.references, CiderVariant::D);
  return d;
}

std::vector<std::vector<Tokens>> reference_lists(std::span<const TrainingExample> data) {
  std::vector<std::vector<Tokens>> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(ex.references);
  return out;
}

TrainLog scst_finetune(Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
                       const TrainConfig& cfg, const EpochHook& hook) {
  cfg.validate();
  check_data(data);
  const auto refs = reference_lists(data);
  const CiderScorer scorer(refs);
  TrainLog log;
  AdamState adam;
  adam.lr = cfg.scst_lr;
  CounterRng rng = CounterRng(cfg.seed).fork(2);
  const auto t0 = Clock::now();
  const int max_len = model.config().max_len;
  long step = 0;

  for (int epoch = 1; epoch <= cfg.scst_epochs; ++epoch) {
    const auto order = epoch_order(data.size(), rng);
    double reward_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      std::vector<Tensor> grads;
      double batch_reward = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const TrainingExample& ex = data[order[b]];
        const ScstDraw d = scst_draw(model, ex, vocab, scorer, max_len, rng);
        PolicyGradient pg = policy_gradient(model, ex.features, d.sample, d.advantage() * inv);
        if (!std::isfinite(pg.loss)) {
          throw TrainError("non-finite SCST loss on image " + ex.id + " at epoch " +
                           std::to_string(epoch));
        }
        if (grads.empty()) {
          grads = std::move(pg.grads);
        } else {
          for (std::size_t i = 0; i < grads.size(); ++i) {
            for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += pg.grads[i][j];
          }
        }
        batch_reward += d.sample_reward;
      }
      clip_global_norm(grads, cfg.scst_clip_norm);
      adam_step(model.params().store.values(), grads, adam);
      ++step;
      log.add({step, "scst", epoch, adam.lr, batch_reward * inv, seconds_since(t0)});
      reward_sum += batch_reward;
    }
    if (cfg.verbose) {
      std::cerr << "scst epoch " << epoch << " mean sample reward " << reward_sum / data.size()
                << '\n';
    }
    maybe_checkpoint(model, cfg, "scst", epoch);
    if (run_hook(hook, log, "scst", epoch, model)) break;
  }
  return log;
}

// ---------------------------------------------------------------------------

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["BLEU-4"] = bleu4;
  j["ROUGE-L"] = rouge_l;
  j["CIDEr"] = cider;
  j["METEOR"] = "n/a";
  j["SPICE"] = "n/a";
  j["images"] = images;
  return j.dump(2);
}

EvalReport score_captions(std::vector<ImageCaption> captions, std::span<const TrainingExample> data) {
  if (data.empty()) throw TrainError("evaluation split is empty");
  if (captions.size() != data.size()) throw TrainError("one caption per image is required");
  std::vector<Tokens> cands;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (captions[i].id != data[i].id) {
      throw TrainError("caption for image " + captions[i].id + " does not match " + data[i].id);
    }
    cands.push_back(captions[i].caption);
  }
  const auto refs = reference_lists(data);
  EvalReport r;
  r.images = data.size();
  r.bleu4 = corpus_bleu(cands, refs, 4);
  r.rouge_l = corpus_rouge_l(cands, refs);
  r.cider = CiderScorer(refs).corpus_score(cands, refs, CiderVariant::Plain).mean;
  r.captions = std::move(captions);
  return r;
}

EvalReport evaluate(const Captioner& model, std::span<const TrainingExample> data, const Vocab& vocab,
                    int beam, int max_len, int workers) {
  if (data.empty()) throw TrainError("evaluation split is empty");
  std::vector<ImageCaption> captions(data.size());
  auto work = [&](std::size_t i) {
    const auto memories = model.encode(data[i].features);
    const CaptionHypothesis h = beam_search(next_token_fn(model, memories), tokens::kBos,
                                            tokens::kEos, beam, max_len);
    captions[i] = {data[i].id, decode(h.tokens, vocab)};
  };
  const std::size_t n_workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, data.size());
  if (n_workers == 1) {
    for (std::size_t i = 0; i < data.size(); ++i) work(i);
  } else {
    std::vector<std::exception_ptr> errors(n_workers);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < n_workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < data.size(); i += n_workers) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return score_captions(std::move(captions), data);
}

double greedy_cider_d(const Captioner& model, std::span<const TrainingExample> data,
                      const Vocab& vocab, const CiderScorer& scorer, int max_len) {
  if (data.empty()) throw TrainError("evaluation split is empty");
  double sum = 0.0;
  for (const auto& ex : data) {
    const auto ids = greedy_caption(model, model.encode(ex.features), max_len);
    sum += scorer.score(decode(ids, vocab), ex.references, CiderVariant::D);
  }
  return sum / static_cast<double>(data.size());
}

void write_captions(const std::vector<ImageCaption>& captions, const std::filesystem::path& path) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& c : captions) {
    arr.push_back({{"image_id", c.id}, {"caption", join(c.caption)}});
  }
  std::ofstream out(path);
  if (!out) throw TrainError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

std::vector<ImageCaption> read_captions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot open " + path.string());
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw TrainError(std::string("malformed captions file: ") + e.what());
  }
  std::vector<ImageCaption> out;
  for (const auto& c : arr) {
    out.push_back({c.at("image_id").get<std::string>(), tokenize(c.at("caption").get<std::string>())});
  }
  return out;
}

}  // namespace regioncap
