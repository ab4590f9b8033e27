#include "adapterseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace fs = std::filesystem;

namespace adapterseg {

std::int64_t TrainConfig::effective_epochs() const {
  if (epochs > 0) return epochs;
  switch (task) {
    case TaskKind::kCod:
    case TaskKind::kShadow: return 29;
    case TaskKind::kPolyp:
    case TaskKind::kCell: return 100;
  }
  return 29;
}

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw ConfigError("TrainConfig: lr0 must be positive");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("TrainConfig: epochs must be >= 1 (or 0 for default)");
  if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
  if (!(hfc_ratio >= 0.0 && hfc_ratio <= 1.0))
    throw ConfigError("TrainConfig: hfc_ratio must lie in [0,1]");
  if (grad_clip < 0.0) throw ConfigError("TrainConfig: grad_clip must be >= 0");
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step outside [0, total_steps]");
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * (1.0 + std::cos(M_PI * x)) / 2.0;
}

namespace {

// Per-sample tensors reused across epochs. Only small fixtures are cached;
// large datasets stream from disk every epoch.
struct SampleCache {
  bool enabled = false;
  std::unordered_map<std::string, ImageTensor> images;
  std::unordered_map<std::string, Tensor> masks;
  std::unordered_map<std::string, GuidanceTensor> guidance;
};

constexpr std::int64_t kCacheLimit = 64;

ImageTensor load_image(const SampleRecord& rec, std::int64_t res, SampleCache& cache) {
  if (cache.enabled) {
    auto it = cache.images.find(rec.sample_id);
    if (it != cache.images.end()) return it->second;
  }
  ImageTensor img = preprocess_image(rec.image_path, res);
  if (cache.enabled) cache.images.emplace(rec.sample_id, img);
  return img;
}

Tensor load_mask(const SampleRecord& rec, std::int64_t res, bool instance,
                 SampleCache& cache) {
  if (cache.enabled) {
    auto it = cache.masks.find(rec.sample_id);
    if (it != cache.masks.end()) return it->second;
  }
  Tensor mask = preprocess_mask(rec.mask_path, res, instance);
  if (cache.enabled) cache.masks.emplace(rec.sample_id, mask);
  return mask;
}

std::string checkpoint_name(std::int64_t step, bool final) {
  if (final) return "ckpt_final.ascp";
  std::ostringstream os;
  os << "ckpt_step" << step << ".ascp";
  return os.str();
}

void write_training_log(const std::string& dir, const std::vector<TrainLogRecord>& history) {
  std::ofstream os(fs::path(dir) / "train_log.txt");
  os.precision(12);
  for (const auto& rec : history) {
    os << "step=" << rec.step << " lr=" << rec.lr << " loss=" << rec.loss;
    for (const auto& [k, v] : rec.terms) os << " " << k << "=" << v;
    os << "\n";
  }
}

nlohmann::json history_to_json(const std::vector<TrainLogRecord>& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& rec : history)
    arr.push_back({{"step", rec.step}, {"lr", rec.lr}, {"loss", rec.loss},
                   {"terms", rec.terms}});
  return arr;
}

std::vector<TrainLogRecord> history_from_json(const nlohmann::json& arr) {
  std::vector<TrainLogRecord> out;
  for (const auto& j : arr) {
    TrainLogRecord rec;
    rec.step = j.at("step").get<std::int64_t>();
    rec.lr = j.at("lr").get<double>();
    rec.loss = j.at("loss").get<double>();
    rec.terms = j.value("terms", std::map<std::string, double>{});
    out.push_back(std::move(rec));
  }
  return out;
}

// Shared main loop for train() and resume().
TrainResult run_loop(Model& model, const TrainConfig& cfg, const DatasetManifest& manifest,
                     AdamW& optimizer, std::int64_t start_step,
                     std::vector<TrainLogRecord> history) {
  cfg.validate();
  auto records = manifest.split_records(Split::kTrain);
  if (records.empty())
    throw DataError("train: manifest '" + manifest.dataset_id + "' has no train split");
  std::sort(records.begin(), records.end(),
            [](const SampleRecord* a, const SampleRecord* b) {
              return a->sample_id < b->sample_id;
            });

  const std::int64_t n = static_cast<std::int64_t>(records.size());
  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = cfg.effective_epochs() * steps_per_epoch;
  std::int64_t end_step = total_steps;
  if (cfg.dry_run) end_step = start_step;
  if (cfg.max_steps > 0) end_step = std::min(end_step, cfg.max_steps);

  const std::int64_t res = model.config().encoder.input_resolution;
  const bool instance = cfg.task == TaskKind::kCell;
  SampleCache cache;
  cache.enabled = n <= kCacheLimit;
  const bool cache_guidance = cache.enabled && !model.config().train_guidance_weights;

  fs::create_directories(cfg.checkpoint_dir);
  const std::uint64_t encoder_hash_before = model.encoder().parameter_hash();

  for (std::int64_t step = start_step; step < end_step; ++step) {
    const double lr = cosine_lr(step, total_steps, cfg.lr0);
    const std::int64_t batch_begin = (step % steps_per_epoch) * cfg.batch_size;
    const std::int64_t batch_end = std::min(n, batch_begin + cfg.batch_size);

    Graph g;
    Var loss;
    std::vector<std::pair<Tensor, Tensor>> batch_probs;  // (probabilities, target)
    for (std::int64_t i = batch_begin; i < batch_end; ++i) {
      const SampleRecord& rec = *records[i];
      ImageTensor image = load_image(rec, res, cache);
      Tensor mask = load_mask(rec, res, instance, cache);
      // Token-major logits are [res*res, 1]; align the target with them.
      mask = Tensor({res * res, 1},
                    std::vector<double>(mask.data(), mask.data() + mask.size()));

      const GuidanceTensor* cached = nullptr;
      if (cache_guidance) {
        auto it = cache.guidance.find(rec.sample_id);
        if (it == cache.guidance.end())
          it = cache.guidance.emplace(rec.sample_id, model.guidance_base(image)).first;
        cached = &it->second;
      }
      Var logits = model.forward(g, image, cached);
      Var probs = g.sigmoid(logits);
      Var sample_loss = task_loss_logits_var(g, cfg.task, logits, mask);
      loss = loss.valid() ? g.add(loss, sample_loss) : sample_loss;
      batch_probs.emplace_back(probs.val(), std::move(mask));
    }
    const double batch_count = static_cast<double>(batch_end - batch_begin);
    loss = g.scale(loss, 1.0 / batch_count);

    const double loss_value = loss.val().item();
    if (!std::isfinite(loss_value))
      throw NumericError(step, "train: non-finite loss at step " + std::to_string(step));

    optimizer.zero_grad();
    g.backward(loss);

    if (cfg.grad_clip > 0.0) {
      double norm2 = 0.0;
      for (Parameter* p : optimizer.params()) norm2 += p->grad.array().square().sum();
      const double norm = std::sqrt(norm2);
      if (norm > cfg.grad_clip) {
        const double scale = cfg.grad_clip / norm;
        for (Parameter* p : optimizer.params()) p->grad.array() *= scale;
      }
    }
    optimizer.step(lr);

    TrainLogRecord rec;
    rec.step = step;
    rec.lr = lr;
    rec.loss = loss_value;
    // Term breakdown averaged over the batch.
    for (const auto& [probs, target] : batch_probs) {
      LossValue lv = task_loss(cfg.task, probs, target);
      if (lv.bce) rec.terms["bce"] += *lv.bce / batch_count;
      if (lv.iou) rec.terms["iou"] += *lv.iou / batch_count;
      if (lv.balanced_bce) rec.terms["balanced_bce"] += *lv.balanced_bce / batch_count;
    }
    history.push_back(std::move(rec));

    const std::int64_t done = step + 1;
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 &&
        done < end_step) {
      const std::string path =
          (fs::path(cfg.checkpoint_dir) / checkpoint_name(done, false)).string();
      save_train_checkpoint(path, model, cfg, optimizer, done, total_steps,
                            manifest.dataset_id, history);
    }
  }

  if (model.encoder().parameter_hash() != encoder_hash_before)
    throw std::logic_error("train: frozen encoder changed during training");

  TrainResult result;
  result.steps_run = end_step - start_step;
  result.total_steps = total_steps;
  result.history = std::move(history);
  result.checkpoint_path =
      (fs::path(cfg.checkpoint_dir) / checkpoint_name(end_step, true)).string();
  save_train_checkpoint(result.checkpoint_path, model, cfg, optimizer, end_step,
                        total_steps, manifest.dataset_id, result.history);
  write_training_log(cfg.checkpoint_dir, result.history);
  return result;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"task", task_to_string(cfg.task)},
                        {"lr0", cfg.lr0},
                        {"batch_size", cfg.batch_size},
                        {"epochs", cfg.epochs},
                        {"weight_decay", cfg.weight_decay},
                        {"seed", cfg.seed},
                        {"hfc_ratio", cfg.hfc_ratio},
                        {"checkpoint_interval", cfg.checkpoint_interval},
                        {"grad_clip", cfg.grad_clip},
                        {"f64_checkpoints", cfg.f64_checkpoints},
                        {"max_steps", cfg.max_steps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.task = task_from_string(j.at("task").get<std::string>());
  cfg.lr0 = j.at("lr0").get<double>();
  cfg.batch_size = j.at("batch_size").get<std::int64_t>();
  cfg.epochs = j.at("epochs").get<std::int64_t>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.hfc_ratio = j.at("hfc_ratio").get<double>();
  cfg.checkpoint_interval = j.at("checkpoint_interval").get<std::int64_t>();
  cfg.grad_clip = j.at("grad_clip").get<double>();
  cfg.f64_checkpoints = j.at("f64_checkpoints").get<bool>();
  cfg.max_steps = j.value("max_steps", static_cast<std::int64_t>(0));
  return cfg;
}

}  // namespace

void save_train_checkpoint(const std::string& path, Model& model, const TrainConfig& cfg,
                           const AdamW& optimizer, std::int64_t step,
                           std::int64_t total_steps, const std::string& dataset_id,
                           const std::vector<TrainLogRecord>& history) {
  CheckpointMeta meta;
  meta.encoder_config = encoder_config_to_json(model.config().encoder);
  meta.creation_time = iso8601_now();
  char hash_hex[24];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(model.encoder().parameter_hash()));
  meta.extra = {{"step", step},
                {"total_steps", total_steps},
                {"dataset_id", dataset_id},
                {"encoder_hash", hash_hex},
                {"optimizer_t", optimizer.step_count()},
                {"train_config", train_config_to_json(cfg)},
                {"model_config",
                 {{"bottleneck_dim", model.config().bottleneck_dim},
                  {"prompt_dim", model.config().prompt_dim},
                  {"decoder_fuse_dim", model.config().decoder_fuse_dim},
                  {"hfc_ratio", model.config().hfc_ratio},
                  {"train_guidance_weights", model.config().train_guidance_weights}}},
                {"history", history_to_json(history)}};

  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (Parameter* p : model.all_parameters()) arrays.emplace_back(p->name, &p->value);
  const auto& params = optimizer.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    arrays.emplace_back("opt.m." + params[i]->name, &optimizer.moment1(i));
    arrays.emplace_back("opt.v." + params[i]->name, &optimizer.moment2(i));
  }
  save_checkpoint(path, meta, arrays,
                  cfg.f64_checkpoints ? CheckpointDtype::kF64 : CheckpointDtype::kF32);
}

TrainResult train(Model& model, const TrainConfig& cfg, const DatasetManifest& manifest) {
  cfg.validate();
  AdamW optimizer(model.trainable(),
                  AdamW::Options{0.9, 0.999, 1e-8, cfg.weight_decay});
  return run_loop(model, cfg, manifest, optimizer, 0, {});
}

RestoredModel restore_model(const std::string& checkpoint_path) {
  CheckpointFile file = load_checkpoint(checkpoint_path);
  RestoredModel out;
  out.train_config = train_config_from_json(file.meta.extra.at("train_config"));
  out.step = file.meta.extra.at("step").get<std::int64_t>();
  out.dataset_id = file.meta.extra.value("dataset_id", "");
  out.history = history_from_json(file.meta.extra.value("history", nlohmann::json::array()));

  ModelConfig mc;
  mc.encoder = encoder_config_from_json(file.meta.encoder_config);
  const auto& mj = file.meta.extra.at("model_config");
  mc.bottleneck_dim = mj.at("bottleneck_dim").get<std::int64_t>();
  mc.prompt_dim = mj.at("prompt_dim").get<std::int64_t>();
  mc.decoder_fuse_dim = mj.at("decoder_fuse_dim").get<std::int64_t>();
  mc.hfc_ratio = mj.at("hfc_ratio").get<double>();
  mc.train_guidance_weights = mj.at("train_guidance_weights").get<bool>();

  out.model = std::make_unique<Model>(mc, out.train_config.seed);
  LoadReport report = populate_parameters(out.model->all_parameters(), file.arrays, "");
  // Optimizer-state arrays are expected leftovers here.
  report.unexpected.erase(
      std::remove_if(report.unexpected.begin(), report.unexpected.end(),
                     [](const std::string& s) { return s.rfind("opt.", 0) == 0; }),
      report.unexpected.end());
  if (!report.ok() || !report.unexpected.empty())
    throw CheckpointMismatchError(std::move(report));

  const std::string stored_hash = file.meta.extra.value("encoder_hash", "");
  char hash_hex[24];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(out.model->encoder().parameter_hash()));
  if (stored_hash != hash_hex)
    throw ConfigError("restore: encoder hash mismatch (stored " + stored_hash + ", got " +
                      hash_hex + ")");
  out.file = std::move(file);
  return out;
}

TrainResult resume(const std::string& checkpoint_path, const DatasetManifest& manifest,
                   const std::string& checkpoint_dir) {
  RestoredModel restored = restore_model(checkpoint_path);
  if (restored.dataset_id != manifest.dataset_id)
    throw ConfigError("resume: checkpoint was trained on '" + restored.dataset_id +
                      "', manifest is '" + manifest.dataset_id + "'");

  TrainConfig cfg = restored.train_config;
  if (!checkpoint_dir.empty()) cfg.checkpoint_dir = checkpoint_dir;

  AdamW optimizer(restored.model->trainable(),
                  AdamW::Options{0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::int64_t opt_t = restored.file.meta.extra.value("optimizer_t",
                                                            static_cast<std::int64_t>(0));
  std::vector<Tensor> m, v;
  for (Parameter* p : optimizer.params()) {
    auto im = restored.file.arrays.find("opt.m." + p->name);
    auto iv = restored.file.arrays.find("opt.v." + p->name);
    if (im == restored.file.arrays.end() || iv == restored.file.arrays.end())
      throw CheckpointIoError("resume: missing optimizer state for " + p->name);
    m.push_back(im->second);
    v.push_back(iv->second);
  }
  optimizer.load_state(opt_t, std::move(m), std::move(v));

  // max_steps in the snapshot reflects the truncation that produced this
  // checkpoint; a resumed run continues to the full schedule unless the
  // caller re-truncates.
  cfg.max_steps = 0;
  TrainResult result = run_loop(*restored.model, cfg, manifest, optimizer, restored.step,
                                restored.history);
  return result;
}

}  // namespace adapterseg
