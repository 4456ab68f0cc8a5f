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
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "regioncap/regionpipe.hpp"
#include "regioncap/superpixel.hpp"
#include "test_support.hpp"

using namespace regioncap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(REGIONCAP_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kMock = " --provider mock --dim 16 --resolutions 2,4";
const std::string kSmallModel =
    " --layers 1 --heads 2 --d-ff 32 --min-count 1 --max-len 10 --warmup 5 --lr-scale 0.5";

/// Toy dataset written once per test binary run.
const fs::path& toy_dir() {
  static const fs::path dir = [] {
    const fs::path d = support::temp_dir("cli_toy");
    const Run r = run("toy --out " + d.string() + " --count 4");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

const fs::path& trained_model() {
  static const fs::path dir = [] {
    const fs::path d = support::temp_dir("cli_model");
    const Run r = run("train --dataset " + (toy_dir() / "dataset.json").string() + kMock + kSmallModel +
                      " --epochs 3 --out " + d.string());
    INFO(r.output);
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("usage errors exit nonzero") {
  CHECK(run("").code != 0);
  CHECK(run("--help").code == 0);
  CHECK(run("frobnicate").code != 0);
  CHECK(run("segment").code != 0);
}

TEST_CASE("toy writes a loadable dataset") {
  const auto dir = toy_dir();
  CHECK(fs::exists(dir / "dataset.json"));
  for (int i = 0; i < 4; ++i) CHECK(fs::exists(dir / ("toy_" + std::to_string(i) + ".png")));
  const auto j = nlohmann::json::parse(slurp(dir / "dataset.json"));
  CHECK(j.at("images").size() == 4);
}

TEST_CASE("segment writes a label map and an overlay") {
  const auto dir = support::temp_dir("cli_segment");
  const Image uniform(16, 16, Rgb{120, 60, 200});
  save_png(uniform, dir / "flat.png");
  const Run one = run("segment " + (dir / "flat.png").string() + " -k 1 --out " + dir.string());
  INFO(one.output);
  REQUIRE(one.code == 0);
  CHECK(one.output.find("regions 1") != std::string::npos);
  CHECK(load_image(dir / "flat_k1_overlay.png") == uniform);
  CHECK(read_label_map(dir / "flat_k1.labels").region_count() == 1);

  const Run many = run("segment " + (toy_dir() / "toy_0.png").string() + " -k 10 --out " + dir.string());
  REQUIRE(many.code == 0);
  const LabelMap map = read_label_map(dir / "toy_0_k10.labels");
  CHECK(map.region_count() >= 1);
  CHECK(map.region_count() <= 20);

  const Run missing = run("segment " + (dir / "absent.png").string() + " -k 4 --out " + dir.string());
  CHECK(missing.code != 0);
  CHECK(missing.output.find("regioncap:") != std::string::npos);
}

TEST_CASE("features writes one readable file per image") {
  const auto out = support::temp_dir("cli_features");
  const Run r = run("features " + toy_dir().string() + " --provider mock --dim 16 --resolutions 2,4 --workers 2 --out " +
                    out.string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  for (int i = 0; i < 4; ++i) {
    const MultiResFeatures f = read_features(out / ("toy_" + std::to_string(i) + ".scf"));
    CHECK(f.dim() == 16);
    REQUIRE(f.per_resolution.size() == 2);
    CHECK(f.per_resolution[1].k == 4);
  }
  CHECK(run("features " + toy_dir().string() + " --provider bogus --out " + out.string()).code != 0);
  CHECK(run("features " + toy_dir().string() + " --provider http:http://127.0.0.1:1 --dim 4 --out " +
            out.string())
            .code != 0);
}

TEST_CASE("train, caption, eval and finetune work end to end") {
  const auto model = trained_model();
  for (const char* f : {"model.cfg", "params.bin", "vocab.txt", "train_log.csv"}) CHECK(fs::exists(model / f));
  CHECK(slurp(model / "train_log.csv").rfind("step,phase,epoch,lr,loss_or_reward,wall_seconds", 0) == 0);

  const Run cap = run("caption --model " + model.string() + " " + (toy_dir() / "toy_1.png").string());
  INFO(cap.output);
  REQUIRE(cap.code == 0);
  CHECK(cap.output.rfind("toy_1.png\t", 0) == 0);

  const auto eval_dir = support::temp_dir("cli_eval");
  const Run ev = run("eval --model " + model.string() + " --dataset " + (toy_dir() / "dataset.json").string() +
                     " --split train --beam 2 --out " + (eval_dir / "report.json").string() + " --captions " +
                     (eval_dir / "caps.json").string());
  INFO(ev.output);
  REQUIRE(ev.code == 0);
  const auto report = nlohmann::json::parse(slurp(eval_dir / "report.json"));
  for (const char* key : {"BLEU-4", "ROUGE-L", "CIDEr"}) CHECK(report.at(key).is_number());
  CHECK(report.at("images") == 4);
  CHECK(nlohmann::json::parse(slurp(eval_dir / "caps.json")).size() == 4);

  const auto tuned = support::temp_dir("cli_tuned");
  const Run ft = run("finetune --model " + model.string() + " --dataset " + (toy_dir() / "dataset.json").string() +
                     " --scst-epochs 1 --out " + tuned.string());
  INFO(ft.output);
  REQUIRE(ft.code == 0);
  CHECK(fs::exists(tuned / "scst_log.csv"));
  CHECK(fs::exists(tuned / "params.bin"));

  CHECK(run("caption --model " + (tuned / "missing").string() + " x.png").code != 0);
  CHECK(run("eval --model " + model.string() + " --dataset " + (toy_dir() / "dataset.json").string() +
            " --split test")
            .code != 0);
}

TEST_CASE("feature files can stand in for the provider") {
  const auto feats = support::temp_dir("cli_filefeat");
  REQUIRE(run("features " + toy_dir().string() + " --provider mock --dim 16 --resolutions 2,4 --out " + feats.string())
              .code == 0);
  const auto out = support::temp_dir("cli_filemodel");
  const Run r = run("train --dataset " + (toy_dir() / "dataset.json").string() + kSmallModel +
                    " --dim 16 --resolutions 2,4 --provider file:" + feats.string() + " --epochs 1 --out " + out.string());
  INFO(r.output);
  CHECK(r.code == 0);
  const Run cap = run("caption --model " + out.string() + " --greedy " + (feats / "toy_2.scf").string());
  CHECK(cap.code == 0);
  CHECK(cap.output.find("toy_2.scf\t") != std::string::npos);
}

TEST_CASE("sweep trains one run per resolution and global setting") {
  const auto out = support::temp_dir("cli_sweep");
  const Run r = run("sweep --dataset " + (toy_dir() / "dataset.json").string() + kSmallModel +
                    " --provider mock --dim 16 --resolutions 2,4 --globals both --epochs 1 --beam 1 --out " + out.string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(out / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "k,global,BLEU-4,ROUGE-L,CIDEr,run_dir");
  int rows = 0;
  while (std::getline(csv, line)) rows += line.empty() ? 0 : 1;
  CHECK(rows == 4);
  CHECK(fs::exists(out / "k2_global" / "model.cfg"));
  CHECK(fs::exists(out / "k4_noglobal" / "model.cfg"));
}

TEST_CASE("flag defaults can come from a config file") {
  const auto dir = support::temp_dir("cli_config");
  std::ofstream(dir / "seg.ini") << "[segment]\nk=1\n";
  save_png(Image(8, 8, Rgb{1, 2, 3}), dir / "tiny.png");
  const Run r = run("--config " + (dir / "seg.ini").string() + " segment " + (dir / "tiny.png").string() +
                    " --out " + dir.string());
  INFO(r.output);
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "tiny_k1.labels"));
}
