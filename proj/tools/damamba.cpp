// Copyright 2026 DA-Mamba Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "damamba/checkpoint.hpp"
#include "damamba/plot.hpp"
#include "damamba/train.hpp"

namespace fs = std::filesystem;
using namespace damamba;

namespace {

constexpr const char* kVersion = "damamba 0.1.0";

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string runs_root() {
  if (const char* env = std::getenv("DAMAMBA_RUNS_DIR")) return env;
  return "runs";
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

struct FileConfig {
  TrainConfig train;
  std::string source_dir, target_dir;
};

FileConfig load_file_config(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  FileConfig fc;
  fc.train = config_from_json(j);
  if (j.contains("data")) {
    const auto& d = j["data"];
    if (d.contains("source")) fc.source_dir = d["source"];
    if (d.contains("target")) fc.target_dir = d["target"];
  }
  return fc;
}

AblationFlags parse_flags(const std::string& spec) {
  AblationFlags f{false, false, false, false};
  if (spec == "full") return AblationFlags{};
  if (spec == "source_only" || spec == "none") return f;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "hdamt_da") f.hdamt_da = true;
    else if (item == "ekd") f.ekd = true;
    else if (item == "ermp") f.ermp = true;
    else if (item == "adl") f.adl = true;
    else throw std::runtime_error("unknown ablation flag: " + item);
  }
  return f;
}

nlohmann::json run_manifest(const std::string& command,
                            const std::string& config_path,
                            const FileConfig& fc, const std::string& run_dir) {
  nlohmann::json m;
  m["command"] = command;
  m["config_path"] = config_path;
  m["resolved_config"] = config_to_json(fc.train);
  m["seeds"] = {{"data", fc.train.seed_data},
                {"model", fc.train.seed_model},
                {"ermp", fc.train.seed_ermp}};
  m["start_time"] = now_iso8601();
  m["version"] = kVersion;
  m["artifacts"] = {
      {"run_dir", run_dir},
      {"source_data", fc.source_dir},
      {"target_data", fc.target_dir},
      {"metrics", run_dir + "/metrics.csv"},
      {"entropy", run_dir + "/entropy.csv"},
      {"predictions", run_dir + "/predictions.jsonl"},
      {"checkpoints", run_dir + "/checkpoints"}};
  return m;
}

int cmd_generate(const std::string& out, uint64_t seed, int num_images,
                 int image_size) {
  DomainSpec s;
  s.domain = Domain::source;
  s.seed = seed;
  s.num_images = num_images;
  s.image_size = image_size;
  DomainSpec t = s;
  t.domain = Domain::target;
  generate_dataset(s, (fs::path(out) / "source").string());
  generate_dataset(t, (fs::path(out) / "target").string());
  std::cout << "generated " << num_images << " images per domain under "
            << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& ablate,
              int64_t seed, std::string run_dir, bool resume) {
  FileConfig fc = load_file_config(config_path);
  if (!ablate.empty()) fc.train.flags = parse_flags(ablate);
  if (seed >= 0) {
    fc.train.seed_data = static_cast<uint64_t>(seed);
    fc.train.seed_model = static_cast<uint64_t>(seed) + 1;
    fc.train.seed_ermp = static_cast<uint64_t>(seed) + 2;
  }
  if (fc.source_dir.empty() || fc.target_dir.empty())
    throw std::runtime_error("config must set data.source and data.target");
  if (run_dir.empty()) {
    run_dir = (fs::path(runs_root()) /
               (fc.train.flags.tag() + "_seed" +
                std::to_string(fc.train.seed_data)))
                  .string();
  }
  fs::create_directories(run_dir);

  const std::string resume_ckpt =
      (fs::path(run_dir) / "checkpoints" / "last.ckpt").string();
  std::string resume_from;
  if (resume) {
    if (!fs::exists(resume_ckpt))
      throw std::runtime_error("no checkpoint to resume from: " + resume_ckpt);
    resume_from = resume_ckpt;
  }

  const std::string manifest_path =
      (fs::path(run_dir) / "run_manifest.json").string();
  nlohmann::json manifest =
      run_manifest("train", config_path, fc, run_dir);
  write_json_file(manifest_path, manifest);

  const auto src = load_manifest(fc.source_dir);
  const auto tgt = load_manifest(fc.target_dir);
  RunResult r = run_training(fc.train, manifest_split(src, true),
                             manifest_split(tgt, true),
                             manifest_split(tgt, false), run_dir, resume_from);

  manifest["end_time"] = now_iso8601();
  manifest["final_map"] = r.map;
  write_json_file(manifest_path, manifest);
  std::cout << "run " << run_dir << " finished after " << r.steps
            << " steps, target test mAP " << r.map << "\n";
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& split) {
  const nlohmann::json manifest =
      read_json_file((fs::path(run_dir) / "run_manifest.json").string());
  TrainConfig cfg = config_from_json(manifest.at("resolved_config"));
  const std::string src_dir = manifest.at("artifacts").at("source_data");
  const std::string tgt_dir = manifest.at("artifacts").at("target_data");
  const std::string ckpt =
      (fs::path(run_dir) / "checkpoints" / "final.ckpt").string();
  if (!fs::exists(ckpt))
    throw std::runtime_error("missing checkpoint: " + ckpt);

  const auto src = load_manifest(src_dir);
  const auto tgt = load_manifest(tgt_dir);
  Trainer trainer(cfg, manifest_split(src, true), manifest_split(tgt, true));
  trainer.load(ckpt);
  EvalResult ev = trainer.evaluate(manifest_split(tgt, split == "train"));

  nlohmann::json report;
  report["run_dir"] = run_dir;
  report["split"] = split;
  report["map"] = ev.map;
  for (const auto& [cls, ap] : ev.per_class_ap)
    report["per_class_ap"][shape_class_name(cls)] = ap;
  write_json_file((fs::path(run_dir) / "eval.json").string(), report);
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& seeds_csv,
               std::string out_dir) {
  FileConfig fc = load_file_config(config_path);
  if (fc.source_dir.empty() || fc.target_dir.empty())
    throw std::runtime_error("config must set data.source and data.target");
  if (out_dir.empty())
    out_dir = (fs::path(runs_root()) / "ablation").string();

  std::vector<uint64_t> seeds;
  std::stringstream ss(seeds_csv);
  std::string item;
  while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
  if (seeds.empty()) seeds = {0, 1, 2};

  const std::vector<AblationFlags> combos = {
      AblationFlags{false, false, false, false},
      AblationFlags{true, false, false, false},
      AblationFlags{false, true, false, false},
      AblationFlags{false, false, true, false},
      AblationFlags{false, false, false, true},
      AblationFlags{},
  };

  const auto src = load_manifest(fc.source_dir);
  const auto tgt = load_manifest(fc.target_dir);
  auto rows = run_ablation(fc.train, combos, seeds, manifest_split(src, true),
                           manifest_split(tgt, true),
                           manifest_split(tgt, false), out_dir);
  for (const auto& row : rows)
    std::cout << row.flags.tag() << ": mean mAP " << row.mean_map << "\n";
  std::cout << "table written to " << out_dir << "/ablation_table.csv\n";
  return 0;
}

int cmd_plot_entropy(const std::string& run_dir, const std::string& out) {
  const auto series =
      read_entropy_csv((fs::path(run_dir) / "entropy.csv").string());
  if (series.empty())
    throw std::runtime_error("entropy.csv has no rows; was EKD enabled?");
  plot_entropy(series, out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_info(const std::string& config_path, bool refs) {
  FileConfig fc = load_file_config(config_path);
  std::mt19937_64 rng(fc.train.seed_model);
  DaMambaModel model(fc.train, rng);
  const int64_t params = model.parameter_count();

  // rough MAC estimate: every weight applied once per stage-3 location
  const int64_t area3 = static_cast<int64_t>(fc.train.anchors.image_size / 8) *
                        (fc.train.anchors.image_size / 8);
  int64_t weight_params = 0;
  for (const auto& [name, p] : model.named_parameters())
    if (Sgd::decays(name)) weight_params += p.numel();

  nlohmann::json j;
  j["parameters"] = params;
  j["approx_macs"] = weight_params * area3;
  if (refs) {
    int64_t small_params = 0, base_params = 0;
    {
      std::mt19937_64 r(0);
      HdamtBackbone small(BackboneConfig::small_ref(), r);
      small_params = small.parameter_count();
    }
    {
      std::mt19937_64 r(0);
      HdamtBackbone base(BackboneConfig::base_ref(), r);
      base_params = base.parameter_count();
    }
    j["backbone_small_params"] = small_params;
    j["backbone_base_params"] = base_params;
    j["base_to_small_ratio"] =
        static_cast<double>(base_params) / static_cast<double>(small_params);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DA-Mamba: domain-adaptive hybrid Mamba-Transformer detector"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* gen = app.add_subcommand("generate", "render the two-domain benchmark");
  std::string gen_out = "data";
  uint64_t gen_seed = 0;
  int gen_n = 100, gen_size = 128;
  gen->add_option("--out", gen_out, "output root directory");
  gen->add_option("--seed", gen_seed, "layout seed shared by both domains");
  gen->add_option("--num-images", gen_n, "images per domain");
  gen->add_option("--image-size", gen_size, "square image side");

  auto* train = app.add_subcommand("train", "train a detector");
  std::string tr_config, tr_ablate, tr_run_dir;
  int64_t tr_seed = -1;
  bool tr_resume = false;
  train->add_option("--config", tr_config, "JSON config file")->required();
  train->add_option("--ablate", tr_ablate,
                    "flag set: full, source_only, or csv of "
                    "hdamt_da,ekd,ermp,adl");
  train->add_option("--seed", tr_seed, "override the config seeds");
  train->add_option("--run-dir", tr_run_dir, "explicit run directory");
  train->add_flag("--resume", tr_resume, "resume from the last checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a finished run");
  std::string ev_run, ev_split = "test";
  eval->add_option("--run", ev_run, "run directory")->required();
  eval->add_option("--split", ev_split, "test or train");

  auto* abl = app.add_subcommand("ablate", "run the component ablation grid");
  std::string ab_config, ab_seeds = "0,1,2", ab_out;
  abl->add_option("--config", ab_config, "JSON config file")->required();
  abl->add_option("--seeds", ab_seeds, "comma separated seed list");
  abl->add_option("--out", ab_out, "output directory");

  auto* plot = app.add_subcommand("plot-entropy",
                                  "plot per-stage entropy over steps");
  std::string pl_run, pl_out = "entropy.png";
  plot->add_option("--run", pl_run, "run directory")->required();
  plot->add_option("--out", pl_out, "output image file");

  auto* info = app.add_subcommand("info", "model size report");
  std::string in_config;
  bool in_refs = false;
  info->add_option("--config", in_config, "JSON config file")->required();
  info->add_flag("--refs", in_refs,
                 "also report publication-scale backbone sizes (slow)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_out, gen_seed, gen_n, gen_size);
    if (train->parsed())
      return cmd_train(tr_config, tr_ablate, tr_seed, tr_run_dir, tr_resume);
    if (eval->parsed()) return cmd_eval(ev_run, ev_split);
    if (abl->parsed()) return cmd_ablate(ab_config, ab_seeds, ab_out);
    if (plot->parsed()) return cmd_plot_entropy(pl_run, pl_out);
    if (info->parsed()) return cmd_info(in_config, in_refs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
