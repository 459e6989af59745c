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

#pragma once

#include <array>
#include <functional>
#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "damamba/adversarial.hpp"
#include "damamba/backbone.hpp"
#include "damamba/data.hpp"
#include "damamba/detection.hpp"
#include "damamba/entropy.hpp"

namespace damamba {

/// Which adaptation components are active. All four off reduces to plain
/// supervised training on the source domain.
struct AblationFlags {
  bool hdamt_da = true;
  bool ekd = true;
  bool ermp = true;
  bool adl = true;

  bool any() const { return hdamt_da || ekd || ermp || adl; }
  std::string tag() const;
};

struct TrainConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  int num_classes = kNumShapeClasses;

  int batch_size = 8;
  int epochs = 50;
  int warmup_epochs = 5;
  double lr_base = 5e-3;
  double momentum = 0.9;
  double weight_decay = 1e-3;

  double lambda_adv = 0.5;
  double lambda_entropy = 0.1;
  double ermp_alpha = 0.1;
  double grl_lambda = 1.0;
  double grad_clip = 5.0;  // global L2 norm bound, 0 disables
  bool ekd_stop_teacher = false;

  AblationFlags flags;

  uint64_t seed_data = 1;
  uint64_t seed_model = 2;
  uint64_t seed_ermp = 3;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

/// Linear warmup from 0 to lr_base over warmup_epochs, then cosine decay
/// that reaches exactly 0 at the last step.
double lr_schedule(int64_t step, int64_t steps_per_epoch,
                   const TrainConfig& cfg);

struct LossBundle {
  double l_det = 0, l_adv = 0, l_entropy = 0, l_total = 0;
};

/// l_total = l_det + lambda_adv * l_adv + lambda_entropy * l_entropy.
/// Throws if any component is non-finite.
LossBundle total_loss(double l_det, double l_adv, double l_entropy,
                      const TrainConfig& cfg);

/// Backbone, detection head, discriminators and the perturbation gate under
/// one parameter namespace.
class DaMambaModel : public Module {
 public:
  DaMambaModel(const TrainConfig& cfg, std::mt19937_64& rng);

  std::shared_ptr<HdamtBackbone> backbone;
  std::shared_ptr<DetectionHead> head;
  std::shared_ptr<LocalDiscriminator> local_disc;
  std::shared_ptr<GlobalDiscriminator> global_disc;
  std::shared_ptr<ErmpGate> gate;
};

/// SGD with momentum. Weight decay applies only to parameters whose leaf
/// name is "weight" (linear and convolution kernels), never to biases or
/// normalization scales.
class Sgd {
 public:
  /// clip_norm rescales the whole gradient when its global L2 norm exceeds
  /// the bound; 0 disables clipping.
  Sgd(std::vector<std::pair<std::string, Var>> params, double momentum,
      double weight_decay, double clip_norm = 0.0);

  void step(double lr);
  size_t tensor_count() const { return slots_.size(); }
  static bool decays(const std::string& name);

  std::vector<std::pair<std::string, Tensor>> state() const;
  void restore(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  struct Slot {
    std::string name;
    Var param;
    Tensor velocity;
    bool decay;
  };
  std::vector<Slot> slots_;
  double momentum_, weight_decay_, clip_norm_;
};

struct StepRecord {
  int64_t step = 0;
  int epoch = 0;
  double lr = 0;
  LossBundle losses;
  double sigma_gamma = 0.5;
  int ermp_stage = 0;  // 0 when ERMP is off
  double local_disc_acc = 0, global_disc_acc = 0;
  std::array<double, 3> h_t_ts{}, h_t_st{};  // stage 2/4/6 means
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const DatasetManifest& source_train,
          const DatasetManifest& target_train);

  StepRecord train_step();
  EvalResult evaluate(const DatasetManifest& test_set,
                      std::vector<DetPrediction>* out_preds = nullptr);

  int64_t step() const { return step_; }
  int64_t steps_per_epoch() const { return loader_->steps_per_epoch(); }
  int64_t total_steps() const {
    return steps_per_epoch() * static_cast<int64_t>(cfg_.epochs);
  }
  DaMambaModel& model() { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  size_t optimizer_tensor_count() const { return opt_->tensor_count(); }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  TrainConfig cfg_;
  std::shared_ptr<DaMambaModel> model_;
  std::unique_ptr<Sgd> opt_;
  std::unique_ptr<PairedLoader> loader_;
  std::vector<Box> anchors_;
  std::mt19937_64 ermp_rng_;
  int64_t step_ = 0;
};

struct RunResult {
  std::string run_dir;
  double map = 0;
  LossBundle final_losses;
  int64_t steps = 0;
};

/// Full training loop with on-disk artifacts: config.json, metrics.csv,
/// entropy.csv, checkpoints/, predictions.jsonl. Resuming from a checkpoint
/// appends to the csv files from the restored step.
RunResult run_training(
    const TrainConfig& cfg, const DatasetManifest& source_train,
    const DatasetManifest& target_train, const DatasetManifest& target_test,
    const std::string& run_dir, const std::string& resume_from = "",
    const std::function<void(const StepRecord&)>& on_step = {});

struct AblationRow {
  AblationFlags flags;
  std::vector<double> maps;  // one per seed
  double mean_map = 0;
};

/// Trains each flag combination with each seed triple offset and writes
/// <out_dir>/ablation_table.csv.
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<AblationFlags>& combos,
                                      const std::vector<uint64_t>& seeds,
                                      const DatasetManifest& source_train,
                                      const DatasetManifest& target_train,
                                      const DatasetManifest& target_test,
                                      const std::string& out_dir);

}  // namespace damamba
