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

#include "damamba/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "damamba/checkpoint.hpp"

namespace damamba {

namespace fs = std::filesystem;

std::string AblationFlags::tag() const {
  if (hdamt_da && ekd && ermp && adl) return "full";
  std::string t;
  auto app = [&t](const char* name) {
    if (!t.empty()) t += "+";
    t += name;
  };
  if (hdamt_da) app("hdamt_da");
  if (ekd) app("ekd");
  if (ermp) app("ermp");
  if (adl) app("adl");
  return t.empty() ? "source_only" : t;
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["backbone"] = {{"base_channels", cfg.backbone.base_channels},
                   {"depths", cfg.backbone.depths},
                   {"heads", cfg.backbone.heads},
                   {"state_dim", cfg.backbone.state_dim},
                   {"mlp_ratio", cfg.backbone.mlp_ratio},
                   {"max_channels", cfg.backbone.max_channels}};
  j["anchors"] = {{"stages", cfg.anchors.stages},
                  {"scales", cfg.anchors.scales},
                  {"ratios", cfg.anchors.ratios},
                  {"image_size", cfg.anchors.image_size}};
  j["num_classes"] = cfg.num_classes;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["warmup_epochs"] = cfg.warmup_epochs;
  j["lr_base"] = cfg.lr_base;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["lambda_adv"] = cfg.lambda_adv;
  j["lambda_entropy"] = cfg.lambda_entropy;
  j["ermp_alpha"] = cfg.ermp_alpha;
  j["grl_lambda"] = cfg.grl_lambda;
  j["grad_clip"] = cfg.grad_clip;
  j["ekd_stop_teacher"] = cfg.ekd_stop_teacher;
  j["flags"] = {{"hdamt_da", cfg.flags.hdamt_da},
                {"ekd", cfg.flags.ekd},
                {"ermp", cfg.flags.ermp},
                {"adl", cfg.flags.adl}};
  j["seed_data"] = cfg.seed_data;
  j["seed_model"] = cfg.seed_model;
  j["seed_ermp"] = cfg.seed_ermp;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    if (b.contains("base_channels")) cfg.backbone.base_channels = b["base_channels"];
    if (b.contains("depths")) cfg.backbone.depths = b["depths"];
    if (b.contains("heads")) cfg.backbone.heads = b["heads"];
    if (b.contains("state_dim")) cfg.backbone.state_dim = b["state_dim"];
    if (b.contains("mlp_ratio")) cfg.backbone.mlp_ratio = b["mlp_ratio"];
    if (b.contains("max_channels")) cfg.backbone.max_channels = b["max_channels"];
  }
  if (j.contains("anchors")) {
    const auto& a = j["anchors"];
    if (a.contains("stages")) cfg.anchors.stages = a["stages"].get<std::vector<int>>();
    if (a.contains("scales")) cfg.anchors.scales = a["scales"].get<std::vector<double>>();
    if (a.contains("ratios")) cfg.anchors.ratios = a["ratios"].get<std::vector<double>>();
    if (a.contains("image_size")) cfg.anchors.image_size = a["image_size"];
  }
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j[key];
  };
  opt("num_classes", cfg.num_classes);
  opt("batch_size", cfg.batch_size);
  opt("epochs", cfg.epochs);
  opt("warmup_epochs", cfg.warmup_epochs);
  opt("lr_base", cfg.lr_base);
  opt("momentum", cfg.momentum);
  opt("weight_decay", cfg.weight_decay);
  opt("lambda_adv", cfg.lambda_adv);
  opt("lambda_entropy", cfg.lambda_entropy);
  opt("ermp_alpha", cfg.ermp_alpha);
  opt("grl_lambda", cfg.grl_lambda);
  opt("grad_clip", cfg.grad_clip);
  opt("ekd_stop_teacher", cfg.ekd_stop_teacher);
  if (j.contains("flags")) {
    const auto& f = j["flags"];
    if (f.contains("hdamt_da")) cfg.flags.hdamt_da = f["hdamt_da"];
    if (f.contains("ekd")) cfg.flags.ekd = f["ekd"];
    if (f.contains("ermp")) cfg.flags.ermp = f["ermp"];
    if (f.contains("adl")) cfg.flags.adl = f["adl"];
  }
  opt("seed_data", cfg.seed_data);
  opt("seed_model", cfg.seed_model);
  opt("seed_ermp", cfg.seed_ermp);
  return cfg;
}

double lr_schedule(int64_t step, int64_t steps_per_epoch,
                   const TrainConfig& cfg) {
  const int64_t total = steps_per_epoch * static_cast<int64_t>(cfg.epochs);
  int64_t warm = steps_per_epoch * static_cast<int64_t>(cfg.warmup_epochs);
  if (warm > total) warm = total;
  if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
  if (step < warm) {
    return cfg.lr_base * static_cast<double>(step + 1) /
           static_cast<double>(warm);
  }
  const int64_t span = total - 1 - warm;
  if (span <= 0) return 0.0;
  double p = static_cast<double>(step - warm) / static_cast<double>(span);
  if (p > 1.0) p = 1.0;
  return 0.5 * cfg.lr_base * (1.0 + std::cos(M_PI * p));
}

LossBundle total_loss(double l_det, double l_adv, double l_entropy,
                      const TrainConfig& cfg) {
  LossBundle b;
  b.l_det = l_det;
  b.l_adv = l_adv;
  b.l_entropy = l_entropy;
  b.l_total = l_det + cfg.lambda_adv * l_adv + cfg.lambda_entropy * l_entropy;
  if (!std::isfinite(b.l_total) || !std::isfinite(l_det) ||
      !std::isfinite(l_adv) || !std::isfinite(l_entropy)) {
    throw std::runtime_error("non-finite loss encountered, aborting run");
  }
  return b;
}

DaMambaModel::DaMambaModel(const TrainConfig& cfg, std::mt19937_64& rng) {
  backbone = std::make_shared<HdamtBackbone>(cfg.backbone, rng);
  std::vector<int64_t> det_channels;
  for (int stage : cfg.anchors.stages)
    det_channels.push_back(cfg.backbone.stage_channels(stage));
  head = std::make_shared<DetectionHead>(det_channels, cfg.num_classes,
                                         cfg.anchors.anchors_per_location(),
                                         rng);
  local_disc =
      std::make_shared<LocalDiscriminator>(cfg.backbone.stage_channels(3), rng);
  global_disc = std::make_shared<GlobalDiscriminator>(
      cfg.backbone.stage_channels(6), rng);
  gate = std::make_shared<ErmpGate>();
  register_module("backbone", backbone);
  register_module("head", head);
  register_module("local_disc", local_disc);
  register_module("global_disc", global_disc);
  register_module("gate", gate);
}

bool Sgd::decays(const std::string& name) {
  const auto pos = name.rfind('.');
  const std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
  return leaf == "weight";
}

Sgd::Sgd(std::vector<std::pair<std::string, Var>> params, double momentum,
         double weight_decay, double clip_norm)
    : momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {
  for (auto& [name, p] : params) {
    Slot s;
    s.name = name;
    s.param = p;
    s.velocity = Tensor::zeros(p.shape());
    s.decay = decays(name);
    slots_.push_back(std::move(s));
  }
}

void Sgd::step(double lr) {
  double scale = 1.0;
  if (clip_norm_ > 0) {
    double sq = 0;
    for (const Slot& s : slots_) {
      if (!s.param.has_grad()) continue;
      const Tensor& g = s.param.grad();
      for (int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  for (Slot& s : slots_) {
    Tensor& w = s.param.val_mut();
    Tensor& v = s.velocity;
    const bool has_grad = s.param.has_grad();
    const Tensor* g = has_grad ? &s.param.grad() : nullptr;
    for (int64_t i = 0; i < w.numel(); ++i) {
      double gi = g ? scale * (*g)[i] : 0.0;
      if (s.decay) gi += weight_decay_ * w[i];
      v[i] = momentum_ * v[i] + gi;
      w[i] -= lr * v[i];
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Sgd::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Slot& s : slots_) out.emplace_back(s.name, s.velocity);
  return out;
}

void Sgd::restore(const std::vector<std::pair<std::string, Tensor>>& state) {
  for (Slot& s : slots_) {
    for (const auto& [name, t] : state) {
      if (name == s.name) {
        if (t.shape() != s.velocity.shape())
          throw std::invalid_argument("optimizer state shape mismatch: " +
                                      name);
        s.velocity = t;
        break;
      }
    }
  }
}

Trainer::Trainer(const TrainConfig& cfg, const DatasetManifest& source_train,
                 const DatasetManifest& target_train)
    : cfg_(cfg), ermp_rng_(cfg.seed_ermp) {
  if (source_train.spec.image_size != cfg.anchors.image_size) {
    throw std::invalid_argument(
        "anchor image_size does not match the dataset");
  }
  std::mt19937_64 model_rng(cfg.seed_model);
  model_ = std::make_shared<DaMambaModel>(cfg, model_rng);
  anchors_ = generate_anchors(cfg.anchors);

  std::vector<std::pair<std::string, Var>> active;
  for (auto& [name, p] : model_->named_parameters()) {
    const bool disc = name.rfind("local_disc.", 0) == 0 ||
                      name.rfind("global_disc.", 0) == 0;
    const bool gate = name.rfind("gate.", 0) == 0;
    if (disc && !cfg.flags.adl) continue;
    if (gate && !cfg.flags.ermp) continue;
    active.emplace_back(name, p);
  }
  opt_ = std::make_unique<Sgd>(std::move(active), cfg.momentum,
                               cfg.weight_decay, cfg.grad_clip);
  loader_ = std::make_unique<PairedLoader>(source_train, target_train,
                                           cfg.batch_size, cfg.seed_data);
}

StepRecord Trainer::train_step() {
  const double lr = lr_schedule(step_, steps_per_epoch(), cfg_);
  StepRecord rec;
  rec.step = step_;
  rec.epoch = static_cast<int>(step_ / steps_per_epoch());
  rec.lr = lr;
  rec.sigma_gamma = model_->gate->sigma_gamma();

  model_->set_training(true);
  auto batch = loader_->next();
  Var x_s(batch.x_s, false), x_t(batch.x_t, false);

  Var l_det, l_adv, l_ent;
  double v_adv = 0, v_ent = 0;
  HdamtBackbone& bb = *model_->backbone;

  if (!cfg_.flags.any()) {
    auto feats = bb.forward_single(x_s);
    std::vector<Var> det_feats;
    for (int stage : cfg_.anchors.stages)
      det_feats.push_back(feats[static_cast<size_t>(stage - 1)]);
    auto [cls, loc] = model_->head->forward(det_feats);
    std::vector<std::vector<BoxTarget>> targets;
    for (const auto& gt : batch.y_s)
      targets.push_back(match_anchors(anchors_, gt.boxes, gt.classes));
    l_det = det_loss(cls, loc, targets);
  } else {
    std::array<Tensor, 3> margins;
    if (cfg_.flags.ekd || cfg_.flags.ermp) {
      for (int slot = 0; slot < 3; ++slot) {
        const BatchNorm2d& bn = bb.margin_stats(slot);
        margins[static_cast<size_t>(slot)] =
            margins_from_stats(bn.running_mean(), bn.running_var());
      }
    }

    StageHook hook;
    if (cfg_.flags.ermp) {
      rec.ermp_stage = draw_ermp_stage(ermp_rng_);
      hook = [this, &margins, &rec](int stage, const Var& z_t,
                                    const Var& dom_st, const Var& dom_ts) {
        if (stage != rec.ermp_stage) return z_t;
        auto maps = ekd_entropy_pair(z_t, dom_ts, dom_st,
                                     margins[static_cast<size_t>(stage / 2 - 1)],
                                     stage, cfg_.ekd_stop_teacher);
        Var attn =
            gating_attention(maps.h_t_st, maps.h_t_ts, model_->gate->gamma);
        return ermp_perturb(z_t, attn, cfg_.ermp_alpha);
      };
    }

    FeatureSet fs = bb.forward_train(x_s, x_t, cfg_.flags.hdamt_da, true, hook);

    std::vector<Var> det_feats;
    for (int stage : cfg_.anchors.stages)
      det_feats.push_back(fs.stage(stage).dom_st);
    auto [cls, loc] = model_->head->forward(det_feats);
    std::vector<std::vector<BoxTarget>> targets;
    for (const auto& gt : batch.y_s)
      targets.push_back(match_anchors(anchors_, gt.boxes, gt.classes));
    l_det = det_loss(cls, loc, targets);

    if (cfg_.flags.adl) {
      DiscriminatorConfig dc;
      dc.grl_lambda = cfg_.grl_lambda;
      const StageFeatures& s3 = fs.stage(3);
      const StageFeatures& s6 = fs.stage(6);
      Var local_s = model_->local_disc->forward(
          grad_reversal(s3.dom_st, dc.grl_lambda));
      Var local_t = model_->local_disc->forward(
          grad_reversal(s3.dom_ts, dc.grl_lambda));
      Var global_s = model_->global_disc->forward(
          grad_reversal(s6.dom_st, dc.grl_lambda));
      Var global_t = model_->global_disc->forward(
          grad_reversal(s6.dom_ts, dc.grl_lambda));
      AdvLossResult adv = adv_loss(local_s, local_t, global_s, global_t, dc);
      l_adv = adv.loss;
      v_adv = adv.loss.val().item();
      rec.local_disc_acc = adv.local_acc;
      rec.global_disc_acc = adv.global_acc;
    }

    if (cfg_.flags.ekd) {
      std::vector<EntropyMaps> maps;
      for (int stage : {2, 4, 6}) {
        const StageFeatures& sf = fs.stage(stage);
        maps.push_back(ekd_entropy_pair(
            sf.z_t, sf.dom_ts, sf.dom_st,
            margins[static_cast<size_t>(stage / 2 - 1)], stage,
            cfg_.ekd_stop_teacher));
      }
      l_ent = ekd_loss(maps);
      v_ent = l_ent.val().item();
      for (size_t i = 0; i < maps.size(); ++i) {
        const Tensor& ts = maps[i].h_t_ts.val();
        const Tensor& st = maps[i].h_t_st.val();
        double mts = 0, mst = 0;
        for (int64_t k = 0; k < ts.numel(); ++k) mts += ts[k];
        for (int64_t k = 0; k < st.numel(); ++k) mst += st[k];
        rec.h_t_ts[i] = mts / static_cast<double>(ts.numel());
        rec.h_t_st[i] = mst / static_cast<double>(st.numel());
      }
    }
  }

  Var total = l_det;
  if (l_adv.defined()) total = add(total, mul_scalar(l_adv, cfg_.lambda_adv));
  if (l_ent.defined())
    total = add(total, mul_scalar(l_ent, cfg_.lambda_entropy));

  rec.losses = total_loss(l_det.val().item(), v_adv, v_ent, cfg_);

  model_->zero_grad();
  backward(total);
  opt_->step(lr);
  ++step_;
  return rec;
}

EvalResult Trainer::evaluate(const DatasetManifest& test_set,
                             std::vector<DetPrediction>* out_preds) {
  const bool was_training = model_->training();
  model_->set_training(false);
  NoGradGuard ng;

  std::vector<DetPrediction> preds;
  std::map<std::string, GroundTruth> gt;
  const int S = cfg_.anchors.image_size;
  for (const ImageRecord& recimg : test_set.images) {
    Tensor img = load_image(recimg.path);
    Var x(img.reshaped({1, 3, S, S}), false);
    auto feats = model_->backbone->forward_single(x);
    std::vector<Var> det_feats;
    for (int stage : cfg_.anchors.stages)
      det_feats.push_back(feats[static_cast<size_t>(stage - 1)]);
    auto [cls, loc] = model_->head->forward(det_feats);
    const int64_t A = cls.shape()[1], K1 = cls.shape()[2];
    auto dets = decode_and_nms(cls.val().reshaped({A, K1}),
                               loc.val().reshaped({A, 4}), anchors_, S);
    for (auto& d : dets) {
      d.image_id = recimg.image_id;
      preds.push_back(d);
    }
    gt[recimg.image_id] = GroundTruth{recimg.boxes, recimg.classes};
  }
  model_->set_training(was_training);
  if (out_preds) *out_preds = preds;
  return evaluate_map(preds, gt);
}

void Trainer::save(const std::string& path) const {
  Checkpoint ck;
  ck.step = step_;
  ck.meta["config"] = config_to_json(cfg_);
  for (const auto& [name, p] : model_->named_parameters())
    ck.tensors.emplace("param." + name, p.val());
  for (const auto& [name, t] : model_->named_buffers())
    ck.tensors.emplace("buffer." + name, *t);
  for (const auto& [name, t] : opt_->state())
    ck.tensors.emplace("momentum." + name, t);
  {
    std::ostringstream os;
    os << ermp_rng_;
    ck.rng_states["ermp"] = os.str();
  }
  const auto ls = loader_->state();
  ck.rng_states["loader"] = ls.rng;
  ck.meta["loader"] = {{"src_order", ls.src_order},
                       {"tgt_order", ls.tgt_order},
                       {"src_cursor", ls.src_cursor},
                       {"tgt_cursor", ls.tgt_cursor}};
  save_checkpoint(path, ck);
}

void Trainer::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  step_ = ck.step;
  for (auto& [name, p] : model_->named_parameters()) {
    auto it = ck.tensors.find("param." + name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint missing parameter " + name);
    if (it->second.shape() != p.shape())
      throw std::runtime_error("checkpoint shape mismatch: " + name);
    p.val_mut() = it->second;
  }
  for (auto& [name, t] : model_->named_buffers()) {
    auto it = ck.tensors.find("buffer." + name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint missing buffer " + name);
    *t = it->second;
  }
  std::vector<std::pair<std::string, Tensor>> vel;
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("momentum.", 0) == 0) vel.emplace_back(name.substr(9), t);
  }
  opt_->restore(vel);
  {
    std::istringstream is(ck.rng_states.at("ermp"));
    is >> ermp_rng_;
  }
  PairedLoader::State ls;
  ls.rng = ck.rng_states.at("loader");
  const auto& jl = ck.meta.at("loader");
  ls.src_order = jl.at("src_order").get<std::vector<size_t>>();
  ls.tgt_order = jl.at("tgt_order").get<std::vector<size_t>>();
  ls.src_cursor = jl.at("src_cursor").get<size_t>();
  ls.tgt_cursor = jl.at("tgt_cursor").get<size_t>();
  loader_->restore(ls);
}

namespace {

// Drops rows at or past start_step (first column) so a resumed run appends
// cleanly after rows written beyond the last checkpoint.
void truncate_csv(const std::string& path, int64_t start_step) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  if (std::getline(in, line)) keep.push_back(line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const int64_t step = std::stoll(line.substr(0, line.find(',')));
    if (step < start_step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

void write_json_atomic(const std::string& path, const nlohmann::json& j) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

}  // namespace

RunResult run_training(const TrainConfig& cfg,
                       const DatasetManifest& source_train,
                       const DatasetManifest& target_train,
                       const DatasetManifest& target_test,
                       const std::string& run_dir,
                       const std::string& resume_from,
                       const std::function<void(const StepRecord&)>& on_step) {
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  Trainer trainer(cfg, source_train, target_train);

  const bool resuming = !resume_from.empty();
  if (resuming) {
    trainer.load(resume_from);
    truncate_csv((fs::path(run_dir) / "metrics.csv").string(),
                 trainer.step());
    truncate_csv((fs::path(run_dir) / "entropy.csv").string(),
                 trainer.step());
  }
  write_json_atomic((fs::path(run_dir) / "config.json").string(),
                    config_to_json(cfg));

  const auto mode = resuming ? std::ios::app : std::ios::trunc;
  std::ofstream metrics((fs::path(run_dir) / "metrics.csv").string(), mode);
  std::ofstream entropy((fs::path(run_dir) / "entropy.csv").string(), mode);
  if (!resuming) {
    metrics << "step,epoch,lr,l_det,l_adv,l_entropy,l_total,sigma_gamma,"
               "ermp_stage,local_disc_acc,global_disc_acc\n";
    entropy << "step,stage,h_t_ts,h_t_st\n";
  }
  metrics << std::setprecision(12);
  entropy << std::setprecision(12);

  const std::string last_ckpt =
      (fs::path(run_dir) / "checkpoints" / "last.ckpt").string();
  const int64_t total = trainer.total_steps();
  RunResult result;
  result.run_dir = run_dir;

  while (trainer.step() < total) {
    StepRecord rec = trainer.train_step();
    metrics << rec.step << "," << rec.epoch << "," << rec.lr << ","
            << rec.losses.l_det << "," << rec.losses.l_adv << ","
            << rec.losses.l_entropy << "," << rec.losses.l_total << ","
            << rec.sigma_gamma << "," << rec.ermp_stage << ","
            << rec.local_disc_acc << "," << rec.global_disc_acc << std::endl;
    if (cfg.flags.ekd) {
      const int stages[3] = {2, 4, 6};
      for (int i = 0; i < 3; ++i) {
        entropy << rec.step << "," << stages[i] << ","
                << rec.h_t_ts[static_cast<size_t>(i)] << ","
                << rec.h_t_st[static_cast<size_t>(i)] << std::endl;
      }
    }
    result.final_losses = rec.losses;
    if (on_step) on_step(rec);
    if (trainer.step() % trainer.steps_per_epoch() == 0)
      trainer.save(last_ckpt);
  }
  result.steps = trainer.step();
  trainer.save((fs::path(run_dir) / "checkpoints" / "final.ckpt").string());

  std::vector<DetPrediction> preds;
  EvalResult ev = trainer.evaluate(target_test, &preds);
  result.map = ev.map;
  {
    std::ofstream out((fs::path(run_dir) / "predictions.jsonl").string(),
                      std::ios::trunc);
    for (const auto& p : preds) {
      nlohmann::json j = {{"image_id", p.image_id},
                          {"box", {p.box.x1, p.box.y1, p.box.x2, p.box.y2}},
                          {"class_id", p.class_id},
                          {"score", p.score}};
      out << j.dump() << "\n";
    }
  }
  return result;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<AblationFlags>& combos,
                                      const std::vector<uint64_t>& seeds,
                                      const DatasetManifest& source_train,
                                      const DatasetManifest& target_train,
                                      const DatasetManifest& target_test,
                                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<AblationRow> rows;
  for (const AblationFlags& flags : combos) {
    AblationRow row;
    row.flags = flags;
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.flags = flags;
      cfg.seed_data = base.seed_data + seed;
      cfg.seed_model = base.seed_model + seed;
      cfg.seed_ermp = base.seed_ermp + seed;
      const std::string run_dir =
          (fs::path(out_dir) / (flags.tag() + "_seed" + std::to_string(seed)))
              .string();
      RunResult r = run_training(cfg, source_train, target_train, target_test,
                                 run_dir);
      row.maps.push_back(r.map);
    }
    double sum = 0;
    for (double m : row.maps) sum += m;
    row.mean_map = row.maps.empty() ? 0 : sum / static_cast<double>(row.maps.size());
    rows.push_back(std::move(row));
  }

  std::ofstream out((fs::path(out_dir) / "ablation_table.csv").string(),
                    std::ios::trunc);
  out << std::setprecision(10);
  out << "config,hdamt_da,ekd,ermp,adl";
  for (size_t i = 0; i < seeds.size(); ++i) out << ",map_seed" << seeds[i];
  out << ",mean_map\n";
  for (const AblationRow& row : rows) {
    out << row.flags.tag() << "," << row.flags.hdamt_da << ","
        << row.flags.ekd << "," << row.flags.ermp << "," << row.flags.adl;
    for (double m : row.maps) out << "," << m;
    out << "," << row.mean_map << "\n";
  }
  return rows;
}

}  // namespace damamba
