#include "landcover/sartrain.hpp"

#include "landcover/checkpoint.hpp"
#include "landcover/errors.hpp"
#include "landcover/io.hpp"

namespace landcover {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagSampler = 21;
constexpr std::uint64_t kTagAugment = 22;

}  // namespace

std::string_view to_string(LabelSource source) {
  switch (source) {
    case LabelSource::official: return "official";
    case LabelSource::ours: return "ours";
    default: return "union";
  }
}

LabelSource parse_label_source(std::string_view text) {
  if (text == "official") return LabelSource::official;
  if (text == "ours") return LabelSource::ours;
  if (text == "union") return LabelSource::both;
  throw ConfigError("label source must be official, ours or union, got '" + std::string(text) + "'");
}

void Stage2Config::validate() const {
  sce.validate();
  if (!(lovasz_weight >= 0.0)) throw ValidationError("stage2.lovasz_weight must be >= 0");
  augment.validate();
  optimizer.validate();
  if (iter_num < 0) throw ValidationError("stage2.iter_num must be >= 0");
  if (image_size < 0) throw ValidationError("stage2.image_size must be >= 0");
  if (batch_size < 1) throw ValidationError("stage2.batch_size must be >= 1");
  if (eval_interval < 1) throw ValidationError("stage2.eval_interval must be >= 1");
}

AugmentPipelineConfig Stage2Config::effective_augment() const {
  AugmentPipelineConfig a = augment;
  if (image_size > 0) a.resized_crop.out_height = a.resized_crop.out_width = image_size;
  return a;
}

Stage2StepResult stage2_step(const SegmentationNet& net, const ParameterSet& params,
                             const OptimizerState& optimizer, std::span<const RasterImage> images,
                             std::span<const LabelMask> masks, const Stage2Config& cfg, Rng& rng,
                             std::int64_t iteration) {
  if (images.empty() || images.size() != masks.size()) {
    throw ValidationError("stage-2 batch needs one mask per SAR image");
  }
  const auto aug = cfg.effective_augment();
  std::vector<RasterImage> imgs;
  std::vector<LabelMask> lbls;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].channels() != 1) throw ValidationError("stage-2 inputs must be single-channel SAR");
    auto a = augment_pair(images[i], masks[i], aug, rng, false);
    imgs.push_back(std::move(a.image));
    lbls.push_back(std::move(a.mask));
  }
  auto fwd = net.forward_train(params, imgs);
  const auto probs = softmax_probs(fwd.logits);
  auto loss = stage2_loss(probs, lbls, cfg.sce, cfg.lovasz_weight, cfg.lovasz_mode);
  check_finite(loss.value, iteration, "stage 2");
  const auto grads = net.backward(params, fwd.trace, loss.grad_logits);
  auto update = adamw_step(params, grads, optimizer, cfg.optimizer);
  return {std::move(update.params), std::move(update.state), std::move(loss.value)};
}

Stage2Data stage2_data(const Dataset& sar, LabelSource source, const fs::path& pseudo_dir) {
  Stage2Data d;
  d.taxonomy = sar.taxonomy();
  const bool want_official = source != LabelSource::ours;
  const bool want_ours = source != LabelSource::official;
  std::vector<std::string> missing;
  if (want_ours && (pseudo_dir.empty() || !fs::is_directory(pseudo_dir))) {
    throw ConfigError("pseudo-label directory '" + pseudo_dir.string() +
                      "' not found; run export-pseudo with the stage-1 checkpoint first");
  }
  for (const auto& s : sar.samples("train")) {
    if (!s.sar) throw ConfigError("sample '" + s.stem + "' has no SAR image");
    if (want_official) {
      if (!s.labels) {
        missing.push_back(s.stem + " (official labels)");
      } else {
        d.images.push_back(*s.sar);
        d.labels.push_back(*s.labels);
      }
    }
    if (want_ours) {
      const auto path = pseudo_dir / "train" / (s.stem + ".png");
      if (!fs::exists(path)) {
        missing.push_back(path.string());
        continue;
      }
      auto mask = io::read_labels(path, d.taxonomy);
      if (mask.height() != s.sar->height() || mask.width() != s.sar->width()) {
        throw ConfigError("pseudo-label '" + path.string() + "' does not match its SAR image size");
      }
      d.images.push_back(*s.sar);
      d.labels.push_back(std::move(mask));
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing stage-2 labels";
    if (want_ours) msg += " (run export-pseudo first)";
    msg += ":";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ConfigError(msg);
  }
  for (const auto& s : sar.samples("val")) {
    if (!s.sar || !s.labels_clean) continue;
    d.val_images.push_back(*s.sar);
    d.val_labels.push_back(*s.labels_clean);
  }
  if (d.images.empty()) throw ConfigError("SAR train split is empty");
  return d;
}

TrainOutcome run_stage2(const ModelConfig& model, const Stage2Config& cfg, const Stage2Data& data,
                        const fs::path& out_dir, const std::string& config_hash) {
  cfg.validate();
  if (model.in_channels != 1) throw ConfigError("stage 2 trains on single-channel SAR images");
  if (model.num_classes != data.taxonomy->num_classes()) {
    throw ConfigError("model.num_classes does not match the dataset taxonomy");
  }
  if (data.images.empty()) throw ConfigError("stage 2 needs a non-empty training set");
  fs::create_directories(out_dir);
  const SegmentationNet net(model);
  ParameterSet params = init_params(model);
  OptimizerState opt = OptimizerState::for_params(params);
  EpochSampler sampler(data.images.size(), derive_rng(cfg.seed, {kTagSampler}));
  Rng aug_rng = derive_rng(cfg.seed, {kTagAugment, cfg.augment.seed});

  TrainOutcome out;
  out.metrics_log = out_dir / "metrics.jsonl";
  out.checkpoint = out_dir / "checkpoint";
  out.best_checkpoint = out_dir / "best";
  MetricsLog log(out.metrics_log);
  std::int64_t iteration = 0;

  auto save = [&](const fs::path& dir) {
    save_checkpoint(dir, Checkpoint{model, data.taxonomy, iteration, config_hash, params,
                                    {{"stage", "2"}}});
  };
  auto validate_now = [&]() -> std::optional<double> {
    if (data.val_images.empty()) return std::nullopt;
    const auto cm = evaluate(net, params, data.val_images, data.val_labels, cfg.eval_tile);
    if (cm.total() == 0) return std::nullopt;
    return miou(cm).miou;
  };
  auto record_eval = [&]() {
    const auto v = validate_now();
    out.final_val_miou = v;
    save(out.checkpoint);
    if (!out.best_val_miou || (v && *v > *out.best_val_miou)) {
      out.best_val_miou = v;
      save(out.best_checkpoint);
    }
    return v;
  };

  for (std::int64_t t = 0; t < cfg.iter_num; ++t) {
    std::vector<RasterImage> imgs;
    std::vector<LabelMask> lbls;
    for (auto i : sampler.next(cfg.batch_size)) {
      imgs.push_back(data.images[i]);
      lbls.push_back(data.labels[i]);
    }
    auto step = stage2_step(net, params, opt, imgs, lbls, cfg, aug_rng, iteration);
    params = std::move(step.params);
    opt = std::move(step.optimizer);
    ++iteration;

    Json rec{{"iter", iteration},
             {"L_ce", step.loss.per_term.at("L_ce")},
             {"L_sce", step.loss.per_term.at("L_sce")},
             {"L_lovasz", step.loss.per_term.at("L_lovasz")},
             {"total", step.loss.total}};
    if (iteration % cfg.eval_interval == 0 || t + 1 == cfg.iter_num) {
      const auto v = record_eval();
      rec["val_miou"] = v ? Json(*v) : Json(nullptr);
    }
    log.append(rec);
  }
  if (cfg.iter_num == 0) record_eval();
  out.params = params;
  return out;
}

}  // namespace landcover
