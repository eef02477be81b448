#include "landcover/selftrain.hpp"

#include <cmath>

#include "landcover/checkpoint.hpp"
#include "landcover/errors.hpp"

namespace landcover {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTagSource = 11;
constexpr std::uint64_t kTagTarget = 12;
constexpr std::uint64_t kTagAugment = 13;

}  // namespace

void TeacherStudentState::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("EMA alpha must lie in [0,1)");
  if (!teacher.same_layout(student)) throw ValidationError("teacher and student layouts differ");
  if (iteration < 0) throw ValidationError("iteration must be >= 0");
}

TeacherStudentState ema_update(const TeacherStudentState& state) {
  state.validate();
  TeacherStudentState out = state;
  for (auto& [name, arr] : out.teacher.arrays()) {
    const auto& s = state.student.at(name).values;
    for (std::size_t i = 0; i < arr.values.size(); ++i) {
      arr.values[i] = state.alpha * arr.values[i] + (1.0 - state.alpha) * s[i];
    }
  }
  ++out.iteration;
  return out;
}

double confidence_weight(const ProbMap& probs, double tau) {
  const std::size_t n = static_cast<std::size_t>(probs.height()) * probs.width();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = probs.pixel(i);
    if (*std::max_element(p.begin(), p.end()) >= tau) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

PseudoLabelBatch pseudo_from_probs(std::span<const ProbMap> probs, const TaxonomyPtr& taxonomy,
                                   double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("confidence threshold must lie in (0,1)");
  PseudoLabelBatch out;
  out.threshold = tau;
  for (const auto& p : probs) {
    out.masks.push_back(argmax_classes(p, taxonomy));
    out.weights.push_back(confidence_weight(p, tau));
  }
  return out;
}

PseudoLabelBatch generate_pseudo(const SegmentationNet& net, const ParameterSet& teacher,
                                 std::span<const RasterImage> images,
                                 const TaxonomyPtr& taxonomy, double tau) {
  const auto logits = net.forward(teacher, images);
  const auto probs = softmax_probs(logits);
  return pseudo_from_probs(probs, taxonomy, tau);
}

void Stage1Config::validate() const {
  augment.validate();
  if (!(ema_alpha >= 0.0 && ema_alpha < 1.0)) throw ValidationError("stage1.ema_alpha must lie in [0,1)");
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("stage1.tau must lie in (0,1)");
  optimizer.validate();
  if (iter_num < 0) throw ValidationError("stage1.iter_num must be >= 0");
  if (batch_size < 1) throw ValidationError("stage1.batch_size must be >= 1");
  if (image_size < 0) throw ValidationError("stage1.image_size must be >= 0");
  if (eval_interval < 1) throw ValidationError("stage1.eval_interval must be >= 1");
}

AugmentPipelineConfig Stage1Config::effective_augment() const {
  AugmentPipelineConfig a = augment;
  if (image_size > 0) a.resized_crop.out_height = a.resized_crop.out_width = image_size;
  return a;
}

Stage1StepResult stage1_step(const SegmentationNet& net, const TeacherStudentState& state,
                             const OptimizerState& optimizer, const Stage1Batch& batch,
                             const Stage1Config& cfg, Rng& rng) {
  if (batch.src_images.size() != batch.src_labels.size() || batch.src_images.empty() ||
      batch.tgt_images.empty()) {
    throw ValidationError("stage-1 batch needs labelled source and unlabelled target images");
  }
  const auto aug = cfg.effective_augment();
  const TaxonomyPtr& taxonomy = batch.src_labels.front().taxonomy();

  std::vector<RasterImage> images;
  std::vector<LabelMask> src_labels;
  for (std::size_t i = 0; i < batch.src_images.size(); ++i) {
    auto a = augment_pair(batch.src_images[i], batch.src_labels[i], aug, rng, cfg.raa);
    images.push_back(std::move(a.image));
    src_labels.push_back(std::move(a.mask));
  }

  const auto pseudo = generate_pseudo(net, state.teacher, batch.tgt_images, taxonomy, cfg.tau);
  std::vector<LabelMask> tgt_labels;
  for (std::size_t i = 0; i < batch.tgt_images.size(); ++i) {
    auto a = augment_pair(batch.tgt_images[i], pseudo.masks[i], aug, rng, cfg.raa_on_target);
    images.push_back(std::move(a.image));
    tgt_labels.push_back(std::move(a.mask));
  }

  auto fwd = net.forward_train(state.student, images);
  const auto probs = softmax_probs(fwd.logits);
  const std::size_t ns = src_labels.size();
  const std::span<const ProbMap> all(probs);
  auto loss = stage1_loss(all.subspan(0, ns), src_labels, all.subspan(ns), tgt_labels,
                          pseudo.weights);
  check_finite(loss.value, state.iteration, "stage 1");

  std::vector<DenseArray3> grads = std::move(loss.src_grad_logits);
  for (auto& g : loss.tgt_grad_logits) grads.push_back(std::move(g));
  const auto param_grads = net.backward(state.student, fwd.trace, grads);
  auto update = adamw_step(state.student, param_grads, optimizer, cfg.optimizer);

  TeacherStudentState next = state;
  next.student = std::move(update.params);
  next = ema_update(next);

  double mean_lambda = 0.0;
  for (double w : pseudo.weights) mean_lambda += w;
  mean_lambda /= static_cast<double>(pseudo.weights.size());
  return {std::move(next), std::move(update.state), std::move(loss.value), mean_lambda};
}

Stage1Data stage1_data(const Dataset& source, const Dataset& target) {
  if (!(*source.taxonomy() == *target.taxonomy())) {
    throw ConfigError("source and target datasets use different class taxonomies");
  }
  Stage1Data d;
  d.taxonomy = source.taxonomy();
  for (const auto& s : source.samples("train")) {
    if (!s.optical || !(s.labels || s.labels_clean)) {
      throw ConfigError("source sample '" + s.stem + "' lacks an optical image or labels");
    }
    d.src_images.push_back(*s.optical);
    d.src_labels.push_back(s.labels ? *s.labels : *s.labels_clean);
  }
  for (const auto& s : target.samples("train")) {
    if (!s.optical) throw ConfigError("target sample '" + s.stem + "' lacks an optical image");
    d.tgt_images.push_back(*s.optical);
  }
  for (const auto& s : target.samples("val")) {
    if (!s.optical || !s.labels_clean) continue;
    d.val_images.push_back(*s.optical);
    d.val_labels.push_back(*s.labels_clean);
  }
  if (d.src_images.empty()) throw ConfigError("source train split is empty");
  if (d.tgt_images.empty()) throw ConfigError("target train split is empty");
  return d;
}

TrainOutcome run_stage1(const ModelConfig& model, const Stage1Config& cfg, const Stage1Data& data,
                        const fs::path& out_dir, const std::string& config_hash) {
  cfg.validate();
  if (model.in_channels != 3) throw ConfigError("stage 1 trains on 3-channel optical images");
  if (model.num_classes != data.taxonomy->num_classes()) {
    throw ConfigError("model.num_classes does not match the dataset taxonomy");
  }
  if (data.src_images.empty() || data.tgt_images.empty()) {
    throw ConfigError("stage 1 needs non-empty source and target training sets");
  }
  fs::create_directories(out_dir);
  const SegmentationNet net(model);
  ParameterSet init = init_params(model);
  TeacherStudentState state{init, init, cfg.ema_alpha, 0};
  OptimizerState opt = OptimizerState::for_params(init);

  EpochSampler src_sampler(data.src_images.size(), derive_rng(cfg.seed, {kTagSource}));
  EpochSampler tgt_sampler(data.tgt_images.size(), derive_rng(cfg.seed, {kTagTarget}));
  Rng aug_rng = derive_rng(cfg.seed, {kTagAugment, cfg.augment.seed});

  TrainOutcome out;
  out.metrics_log = out_dir / "metrics.jsonl";
  out.checkpoint = out_dir / "checkpoint";
  MetricsLog log(out.metrics_log);

  auto save = [&](const fs::path& dir) {
    save_checkpoint(dir, Checkpoint{model, data.taxonomy, state.iteration, config_hash,
                                    state.student, {{"stage", "1"}}});
  };
  auto validate_now = [&]() -> std::optional<double> {
    if (data.val_images.empty()) return std::nullopt;
    const auto cm = evaluate(net, state.student, data.val_images, data.val_labels, cfg.eval_tile);
    if (cm.total() == 0) return std::nullopt;
    return miou(cm).miou;
  };

  for (std::int64_t t = 0; t < cfg.iter_num; ++t) {
    std::vector<RasterImage> src_imgs, tgt_imgs;
    std::vector<LabelMask> src_lbls;
    for (auto i : src_sampler.next(cfg.batch_size)) {
      src_imgs.push_back(data.src_images[i]);
      src_lbls.push_back(data.src_labels[i]);
    }
    for (auto i : tgt_sampler.next(cfg.batch_size)) tgt_imgs.push_back(data.tgt_images[i]);

    auto step = stage1_step(net, state, opt, {src_imgs, src_lbls, tgt_imgs}, cfg, aug_rng);
    state = std::move(step.state);
    opt = std::move(step.optimizer);

    Json rec{{"iter", state.iteration},
             {"L_S", step.loss.per_term.at("L_S")},
             {"L_T", step.loss.per_term.at("L_T")},
             {"mean_lambda", step.mean_lambda}};
    const bool eval_step = state.iteration % cfg.eval_interval == 0 || t + 1 == cfg.iter_num;
    if (eval_step) {
      const auto v = validate_now();
      rec["val_miou"] = v ? Json(*v) : Json(nullptr);
      out.final_val_miou = v;
      if (v && (!out.best_val_miou || *v > *out.best_val_miou)) out.best_val_miou = v;
      save(out.checkpoint);
    }
    log.append(rec);
  }
  if (cfg.iter_num == 0) {
    out.final_val_miou = out.best_val_miou = validate_now();
    save(out.checkpoint);
  }
  out.best_checkpoint = out.checkpoint;
  out.params = state.student;
  return out;
}

}  // namespace landcover
