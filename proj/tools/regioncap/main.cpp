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
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "regioncap/imaging.hpp"
#include "regioncap/metrics.hpp"
#include "regioncap/model.hpp"
#include "regioncap/regionpipe.hpp"
#include "regioncap/superpixel.hpp"
#include "regioncap/textdata.hpp"
#include "regioncap/tokens.hpp"
#include "regioncap/toydata.hpp"
#include "regioncap/trainer.hpp"

namespace fs = std::filesystem;
using namespace regioncap;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// shared options

struct ProviderOptions {
  std::string provider_name = "mock";
  int dim = 512;
  int input_size = 0;  // 0: provider default
  std::uint64_t mock_seed = 0x5eed;
  std::vector<int> resolutions{10, 25};
  double compactness = 10.0;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
};

struct ModelOptions {
  int layers = 6;
  int heads = 8;
  int d_ff = 2048;
  int vocab_size = 10000;
  int min_count = 6;
  std::string fusion = "m2";
  bool use_global = true;
  int max_len = 20;
  std::uint64_t seed = 1;
};

struct DataOptions {
  fs::path dataset;
  fs::path images;  // defaults to the dataset's directory
  std::string split = "train";
};

void add_provider_options(CLI::App* app, ProviderOptions& o, bool with_resolutions = true) {
  app->add_option("--provider", o.provider_name, "mock | http:<url> | file:<feature dir>");
  app->add_option("--dim", o.dim, "feature dimension of mock/http providers");
  app->add_option("--input-size", o.input_size, "provider crop size in pixels");
  app->add_option("--mock-seed", o.mock_seed, "seed of the mock embedder");
  if (with_resolutions) {
    app->add_option("--resolutions", o.resolutions, "superpixel counts, e.g. 10,25")->delimiter(',');
  }
  app->add_option("--compactness", o.compactness, "SLIC compactness m");
  app->add_option("--workers", o.workers, "parallel feature workers");
}

void add_model_options(CLI::App* app, ModelOptions& o) {
  app->add_option("--layers", o.layers);
  app->add_option("--heads", o.heads);
  app->add_option("--d-ff", o.d_ff);
  app->add_option("--vocab-size", o.vocab_size);
  app->add_option("--min-count", o.min_count, "minimum word count for the vocabulary");
  app->add_option("--fusion", o.fusion, "m1 | m2 | m3 | m4");
  app->add_flag("--global,!--no-global", o.use_global, "prepend the global feature");
  app->add_option("--max-len", o.max_len);
  app->add_option("--seed", o.seed);
}

void add_data_options(CLI::App* app, DataOptions& o, bool required = true) {
  auto* opt = app->add_option("--dataset", o.dataset, "Karpathy-layout dataset JSON");
  if (required) opt->required();
  app->add_option("--images", o.images, "image root (default: dataset directory)");
  app->add_option("--split", o.split, "train | val | test");
}

Split parse_split_name(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split '" + s + "'");
}

std::unique_ptr<FeatureProvider> make_provider(const ProviderOptions& o) {
  if (o.provider_name == "mock") {
    return std::make_unique<MockProvider>(o.dim, o.input_size > 0 ? o.input_size : 32, o.mock_seed);
  }
  if (o.provider_name.rfind("http:", 0) == 0) {
    std::string url = o.provider_name.substr(5);
    if (url.rfind("//", 0) == 0) url = "http:" + url;
    return std::make_unique<HttpProvider>(url, o.dim, o.input_size > 0 ? o.input_size : 224);
  }
  if (o.provider_name.rfind("file:", 0) == 0) return nullptr;
  throw UsageError("unknown provider '" + o.provider_name + "' (expected mock, http:<url> or file:<dir>)");
}

SlicConfig slic_config(const ProviderOptions& o) {
  SlicConfig c;
  c.compactness = o.compactness;
  return c;
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads; rethrows the
/// first failure.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1,
                                                std::max<std::size_t>(1, n));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (w == 1) {
    body();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < w; ++t) threads.emplace_back(body);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

fs::path feature_file_for(const fs::path& dir, const std::string& filename) {
  return dir / (fs::path(filename).stem().string() + ".scf");
}

std::vector<TrainingExample> load_examples(const DataOptions& d, const ProviderOptions& p,
                                           std::optional<Split> split) {
  std::vector<CaptionedImage> images = load_split(d.dataset);
  if (split) images = filter_split(images, *split);
  if (images.empty()) throw UsageError("no images in split '" + d.split + "' of " + d.dataset.string());
  const fs::path root = d.images.empty() ? d.dataset.parent_path() : d.images;
  const auto provider = make_provider(p);
  const std::string file_dir = p.provider_name.rfind("file:", 0) == 0 ? p.provider_name.substr(5) : std::string();

  std::vector<TrainingExample> out(images.size());
  parallel_for(images.size(), p.workers, [&](std::size_t i) {
    const CaptionedImage& img = images[i];
    TrainingExample ex;
    ex.id = img.id;
    ex.references = img.references;
    if (provider) {
      ex.features = encode_image(load_image(root / img.relative_path()), p.resolutions, *provider,
                                 slic_config(p));
    } else {
      const fs::path f = feature_file_for(file_dir, img.filename);
      if (!fs::exists(f)) throw UsageError("missing features for image " + img.id + ": " + f.string());
      ex.features = read_features(f);
    }
    out[i] = std::move(ex);
  });
  return out;
}

std::vector<int> feature_resolutions(const std::vector<TrainingExample>& data) {
  std::vector<int> ks;
  for (const auto& r : data.front().features.per_resolution) ks.push_back(r.k);
  return ks;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------
// model directory: model.cfg + params.bin + vocab.txt

struct Loaded {
  Captioner model;
  Vocab vocab;
};

Loaded load_model_dir(const fs::path& dir) {
  if (!fs::exists(dir / "model.cfg")) throw UsageError("no model in " + dir.string());
  return {Captioner::load(dir), Vocab::load(dir / "vocab.txt")};
}

void save_model_dir(const Captioner& model, const Vocab& vocab, const fs::path& dir) {
  model.save(dir);
  vocab.save(dir / "vocab.txt");
}

struct TrainOptions {
  int epochs = 30;
  int batch_size = 1;
  int warmup = 20;
  double lr_scale = 1.0;
  int eval_every = 0;
  double stop_bleu = 2.0;  // > 1 disables early stopping
  int checkpoint_every = 0;
  bool verbose = false;
};

void add_train_options(CLI::App* app, TrainOptions& o) {
  app->add_option("--epochs", o.epochs, "cross-entropy epochs");
  app->add_option("--batch-size", o.batch_size);
  app->add_option("--warmup", o.warmup, "Noam warmup steps");
  app->add_option("--lr-scale", o.lr_scale, "multiplier on the Noam schedule");
  app->add_option("--eval-every", o.eval_every, "greedy BLEU-4 check on the training split every N epochs");
  app->add_option("--stop-bleu", o.stop_bleu, "stop once that BLEU-4 is reached at a check");
  app->add_option("--checkpoint-every", o.checkpoint_every, "epochs between checkpoints");
  app->add_flag("--verbose", o.verbose);
}

EpochHook bleu_hook(const std::vector<TrainingExample>& data, const Vocab& vocab, int every,
                    double stop_bleu, int max_len, bool verbose) {
  if (every <= 0) return {};
  return [&data, &vocab, every, stop_bleu, max_len, verbose](const std::string& phase, int epoch,
                                                              const Captioner& model) {
    EpochControl c;
    if (epoch % every != 0) return c;
    const double b = evaluate(model, data, vocab, 1, max_len).bleu4;
    if (verbose) std::cerr << phase << " epoch " << epoch << " greedy BLEU-4 " << b << '\n';
    c.metric = b;
    c.stop = b >= stop_bleu;
    return c;
  };
}

/// Builds vocab + model on the training split and runs XE training.
Loaded train_model(const std::vector<TrainingExample>& data, const ModelOptions& m,
                   const TrainOptions& t, const fs::path& out) {
  std::vector<Tokens> caps;
  for (const auto& ex : data) caps.insert(caps.end(), ex.references.begin(), ex.references.end());
  Vocab vocab = build_vocab(caps, m.min_count, m.vocab_size);

  ModelConfig cfg;
  cfg.layers = m.layers;
  cfg.heads = m.heads;
  cfg.d_model = data.front().features.dim();
  cfg.d_ff = m.d_ff;
  cfg.vocab_size = vocab.size();
  cfg.resolutions = feature_resolutions(data);
  cfg.fusion = parse_fusion(m.fusion);
  cfg.use_global = m.use_global;
  cfg.max_len = m.max_len;
  cfg.seed = m.seed;
  Captioner model(cfg);

  TrainConfig tc;
  tc.xe_epochs = t.epochs;
  tc.batch_size = t.batch_size;
  tc.warmup_steps = t.warmup;
  tc.lr_scale = t.lr_scale;
  tc.max_len = m.max_len;
  tc.seed = m.seed;
  tc.checkpoint_every = t.checkpoint_every;
  tc.checkpoint_dir = out / "checkpoints";
  tc.verbose = t.verbose;

  fs::create_directories(out);
  const TrainLog log =
      xe_train(model, data, vocab, tc, bleu_hook(data, vocab, t.eval_every, t.stop_bleu, m.max_len, t.verbose));
  log.write_csv(out / "train_log.csv");
  save_model_dir(model, vocab, out);
  return {std::move(model), std::move(vocab)};
}

// ---------------------------------------------------------------------------
// commands

int cmd_toy(const fs::path& out, int count, int size) {
  const fs::path json = write_toy_dataset(out, count, size);
  std::cout << json.string() << '\n';
  return 0;
}

int cmd_segment(const fs::path& image, int k, double compactness, const fs::path& out) {
  const Image img = load_image(image);
  SlicConfig cfg;
  cfg.k = k;
  cfg.compactness = compactness;
  const LabelMap map = slic(rgb_to_lab(img), cfg);
  fs::create_directories(out);
  const std::string stem = image.stem().string() + "_k" + std::to_string(k);
  write_label_map(map, out / (stem + ".labels"));
  save_png(render_overlay(img, map), out / (stem + "_overlay.png"));
  std::cout << "regions " << map.region_count() << '\n';
  return 0;
}

int cmd_features(const fs::path& input, const ProviderOptions& p, const fs::path& out) {
  const auto provider = make_provider(p);
  if (!provider) throw UsageError("features needs a mock or http provider");
  std::vector<fs::path> images;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
        images.push_back(e.path());
      }
    }
    std::sort(images.begin(), images.end());
  } else {
    images.push_back(input);
  }
  if (images.empty()) throw UsageError("no PNG or JPEG images in " + input.string());
  fs::create_directories(out);
  parallel_for(images.size(), p.workers, [&](std::size_t i) {
    const MultiResFeatures f = encode_image(load_image(images[i]), p.resolutions, *provider, slic_config(p));
    write_features(f, feature_file_for(out, images[i].filename().string()));
  });
  std::cout << "wrote " << images.size() << " feature files to " << out.string() << '\n';
  return 0;
}

int cmd_train(const DataOptions& d, const ProviderOptions& p, const ModelOptions& m,
              const TrainOptions& t, const fs::path& out) {
  const auto data = load_examples(d, p, parse_split_name(d.split));
  const Loaded l = train_model(data, m, t, out);
  std::cout << "trained " << l.model.params().store.scalar_count() << " parameters on " << data.size()
            << " images; model in " << out.string() << '\n';
  return 0;
}

int cmd_finetune(const fs::path& model_dir, const DataOptions& d, const ProviderOptions& p,
                 int epochs, double lr, std::uint64_t seed, const TrainOptions& t, const fs::path& out) {
  Loaded l = load_model_dir(model_dir);
  ProviderOptions pp = p;
  pp.resolutions = l.model.config().resolutions;
  if (pp.provider_name == "mock") pp.dim = l.model.config().d_model;
  const auto data = load_examples(d, pp, parse_split_name(d.split));
  TrainConfig tc;
  tc.scst_epochs = epochs;
  tc.scst_lr = lr;
  tc.seed = seed;
  tc.batch_size = t.batch_size;
  tc.checkpoint_every = t.checkpoint_every;
  tc.checkpoint_dir = out / "checkpoints";
  tc.verbose = t.verbose;
  fs::create_directories(out);
  const TrainLog log = scst_finetune(l.model, data, l.vocab, tc);
  log.write_csv(out / "scst_log.csv");
  save_model_dir(l.model, l.vocab, out);
  std::cout << "finetuned for " << epochs << " epochs; model in " << out.string() << '\n';
  return 0;
}

int cmd_caption(const fs::path& model_dir, const std::vector<fs::path>& inputs, const ProviderOptions& p,
                int beam, bool greedy, std::optional<int> max_len) {
  const Loaded l = load_model_dir(model_dir);
  ProviderOptions pp = p;
  pp.resolutions = l.model.config().resolutions;
  if (pp.provider_name == "mock") pp.dim = l.model.config().d_model;
  const auto provider = make_provider(pp);
  const int len = max_len.value_or(l.model.config().max_len);
  for (const fs::path& in : inputs) {
    MultiResFeatures f;
    if (in.extension() == ".scf") {
      f = read_features(in);
    } else if (provider) {
      f = encode_image(load_image(in), pp.resolutions, *provider, slic_config(pp));
    } else {
      f = read_features(feature_file_for(pp.provider_name.substr(5), in.filename().string()));
    }
    const auto memories = l.model.encode(f);
    const auto next = next_token_fn(l.model, memories);
    const CaptionHypothesis h = greedy ? greedy_decode(next, tokens::kBos, tokens::kEos, len)
                                       : beam_search(next, tokens::kBos, tokens::kEos, beam, len);
    std::cout << in.filename().string() << '\t' << join(decode(h.tokens, l.vocab)) << '\n';
  }
  return 0;
}

int cmd_eval(const fs::path& model_dir, const DataOptions& d, const ProviderOptions& p, int beam,
             std::optional<int> max_len, const fs::path& out, const fs::path& captions_out) {
  const Loaded l = load_model_dir(model_dir);
  ProviderOptions pp = p;
  pp.resolutions = l.model.config().resolutions;
  if (pp.provider_name == "mock") pp.dim = l.model.config().d_model;
  const auto data = load_examples(d, pp, parse_split_name(d.split));
  const EvalReport r =
      evaluate(l.model, data, l.vocab, beam, max_len.value_or(l.model.config().max_len), pp.workers);
  const std::string json = r.to_json();
  std::cout << json << '\n';
  if (!out.empty()) write_text(out, json + "\n");
  if (!captions_out.empty()) write_captions(r.captions, captions_out);
  return 0;
}

int cmd_sweep(const DataOptions& d, const ProviderOptions& p, const ModelOptions& m, const TrainOptions& t,
              const std::string& globals, int beam, const fs::path& out) {
  std::vector<bool> modes;
  if (globals == "on") modes = {true};
  else if (globals == "off") modes = {false};
  else if (globals == "both") modes = {true, false};
  else throw UsageError("--globals must be on, off or both");

  fs::create_directories(out);
  std::ostringstream csv;
  csv << "k,global,BLEU-4,ROUGE-L,CIDEr,run_dir\n";
  for (int k : p.resolutions) {
    ProviderOptions pk = p;
    pk.resolutions = {k};
    const auto data = load_examples(d, pk, parse_split_name(d.split));
    for (bool g : modes) {
      ModelOptions mk = m;
      mk.use_global = g;
      const fs::path run = out / ("k" + std::to_string(k) + (g ? "_global" : "_noglobal"));
      const Loaded l = train_model(data, mk, t, run);
      const EvalReport r = evaluate(l.model, data, l.vocab, beam, m.max_len, p.workers);
      write_text(run / "report.json", r.to_json() + "\n");
      csv << k << ',' << (g ? 1 : 0) << ',' << r.bleu4 << ',' << r.rouge_l << ',' << r.cider << ','
          << run.filename().string() << '\n';
      std::cerr << "k=" << k << " global=" << g << " BLEU-4=" << r.bleu4 << '\n';
    }
  }
  write_text(out / "sweep.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regioncap: superpixel region captioning pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with flag defaults");

  ProviderOptions provider;
  ModelOptions model;
  DataOptions data;
  TrainOptions train;
  fs::path out;
  fs::path model_dir;

  auto* toy = app.add_subcommand("toy", "write the synthetic 8-image toy dataset");
  int toy_count = 8;
  int toy_size = 32;
  toy->add_option("--out", out, "output directory")->required();
  toy->add_option("--count", toy_count);
  toy->add_option("--size", toy_size);

  auto* segment = app.add_subcommand("segment", "SLIC label map and boundary overlay for one image");
  fs::path image;
  int k = 10;
  double compactness = 10.0;
  segment->add_option("image", image)->required();
  segment->add_option("-k,--k", k, "superpixel count");
  segment->add_option("--compactness", compactness);
  segment->add_option("--out", out)->required();

  auto* features = app.add_subcommand("features", "one feature file per image");
  features->add_option("input", image, "image file or directory")->required();
  add_provider_options(features, provider);
  features->add_option("--out", out)->required();

  auto* trainc = app.add_subcommand("train", "cross-entropy training");
  add_data_options(trainc, data);
  add_provider_options(trainc, provider);
  add_model_options(trainc, model);
  add_train_options(trainc, train);
  trainc->add_option("--out", out, "model directory")->required();

  auto* finetune = app.add_subcommand("finetune", "self-critical CIDEr-D finetuning");
  int scst_epochs = 30;
  double scst_lr = 5e-6;
  std::uint64_t seed = 1;
  finetune->add_option("--model", model_dir)->required();
  add_data_options(finetune, data);
  add_provider_options(finetune, provider, false);
  finetune->add_option("--scst-epochs", scst_epochs);
  finetune->add_option("--scst-lr", scst_lr);
  finetune->add_option("--seed", seed);
  finetune->add_option("--batch-size", train.batch_size);
  finetune->add_option("--checkpoint-every", train.checkpoint_every);
  finetune->add_flag("--verbose", train.verbose);
  finetune->add_option("--out", out, "model directory")->required();

  auto* caption = app.add_subcommand("caption", "caption images or feature files");
  std::vector<fs::path> inputs;
  int beam = 5;
  bool greedy = false;
  std::optional<int> max_len;
  caption->add_option("--model", model_dir)->required();
  caption->add_option("inputs", inputs, "images or .scf feature files")->required();
  add_provider_options(caption, provider, false);
  caption->add_option("--beam", beam);
  caption->add_flag("--greedy", greedy, "argmax decoding");
  caption->add_option("--max-len", max_len);

  auto* eval = app.add_subcommand("eval", "BLEU-4 / ROUGE-L / CIDEr report as JSON");
  fs::path captions_out;
  eval->add_option("--model", model_dir)->required();
  add_data_options(eval, data);
  add_provider_options(eval, provider, false);
  eval->add_option("--beam", beam);
  eval->add_option("--max-len", max_len);
  eval->add_option("--out", out, "report path");
  eval->add_option("--captions", captions_out, "write generated captions as JSON");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate one model per superpixel count");
  std::string globals = "both";
  add_data_options(sweep, data);
  add_provider_options(sweep, provider);
  add_model_options(sweep, model);
  add_train_options(sweep, train);
  sweep->add_option("--globals", globals, "on | off | both");
  sweep->add_option("--beam", beam);
  sweep->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*toy) return cmd_toy(out, toy_count, toy_size);
    if (*segment) return cmd_segment(image, k, compactness, out);
    if (*features) return cmd_features(image, provider, out);
    if (*trainc) return cmd_train(data, provider, model, train, out);
    if (*finetune) return cmd_finetune(model_dir, data, provider, scst_epochs, scst_lr, seed, train, out);
    if (*caption) return cmd_caption(model_dir, inputs, provider, beam, greedy, max_len);
    if (*eval) return cmd_eval(model_dir, data, provider, beam, max_len, out, captions_out);
    if (*sweep) return cmd_sweep(data, provider, model, train, globals, beam, out);
  } catch (const std::exception& e) {
    std::cerr << "regioncap: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
