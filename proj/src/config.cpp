#include "landcover/config.hpp"

#include "landcover/errors.hpp"
#include "landcover/io.hpp"

namespace landcover {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <typename F>
void as_config_error(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

void parse_raa(const Json& node, const std::string& path, RaaConfig& raa) {
  StrictObject obj(node, path);
  obj.read("r1", raa.r1);
  obj.read("r2", raa.r2);
  obj.read("apply_prob", raa.apply_prob);
  obj.finish();
}

void parse_augment(const Json& node, const std::string& path, AugmentPipelineConfig& a) {
  StrictObject obj(node, path);
  if (const Json* rc = obj.child("resized_crop")) {
    StrictObject c(*rc, obj.qualified("resized_crop"));
    c.read("scale_min", a.resized_crop.scale_min);
    c.read("scale_max", a.resized_crop.scale_max);
    c.finish();
  }
  obj.read("hflip_prob", a.hflip_prob);
  obj.read("vflip_prob", a.vflip_prob);
  obj.read("rotate_prob", a.rotate_prob);
  obj.read("free_rotation", a.free_rotation);
  obj.read("max_rotation_deg", a.max_rotation_deg);
  if (const Json* cj = obj.child("color_jitter")) {
    StrictObject c(*cj, obj.qualified("color_jitter"));
    c.read("brightness", a.color_jitter.brightness);
    c.read("contrast", a.color_jitter.contrast);
    c.read("saturation", a.color_jitter.saturation);
    c.finish();
  }
  if (const Json* raa = obj.child("raa")) parse_raa(*raa, obj.qualified("raa"), a.raa);
  obj.read("seed", a.seed);
  obj.finish();
  as_config_error(path, [&] { a.validate(); });
}

void read_optimizer(StrictObject& obj, OptimizerConfig& o, std::int64_t iter_num) {
  obj.read("lr", o.lr);
  obj.read("weight_decay", o.weight_decay);
  obj.read("poly_power", o.poly_power);
  o.total_steps = iter_num;
}

void read_tile(StrictObject& obj, std::optional<TileConfig>& tile) {
  int size = 0, context = -1;
  double overlap = 0.5;
  obj.read("tile_size", size);
  obj.read("tile_overlap", overlap);
  obj.read("tile_context", context);
  if (size > 0) tile = TileConfig{size, overlap, context};
}

}  // namespace

RunConfig parse_run_config(const Json& document, const fs::path& base_dir) {
  RunConfig cfg;
  cfg.document = document;
  StrictObject root(document, "");
  root.read("name", cfg.name);

  if (const Json* d = root.child("data")) {
    StrictObject obj(*d, "data");
    std::string source, target, run_root = "runs";
    obj.read("source", source);
    obj.read("target", target);
    obj.read("run_root", run_root);
    obj.finish();
    cfg.data = {resolve(base_dir, source), resolve(base_dir, target), resolve(base_dir, run_root)};
  } else {
    cfg.data.run_root = resolve(base_dir, "runs");
  }

  if (const Json* s = root.child("synth")) {
    StrictObject obj(*s, "synth");
    if (const Json* src = obj.child("source")) cfg.synth_source = synth_config_from_json(*src, "synth.source");
    if (const Json* tgt = obj.child("target")) cfg.synth_target = synth_config_from_json(*tgt, "synth.target");
    obj.finish();
  }

  if (const Json* m = root.child("model")) {
    StrictObject obj(*m, "model");
    obj.read("width", cfg.model.width);
    obj.read("depth", cfg.model.depth);
    obj.read("norm_groups", cfg.model.norm_groups);
    obj.read("seed", cfg.model.seed);
    obj.finish();
  }
  as_config_error("model", [&] { cfg.model.validate(); });

  AugmentPipelineConfig augment;
  if (const Json* a = root.child("augment")) parse_augment(*a, "augment", augment);

  SceConfig sce;
  double lovasz_weight = 1.0;
  LovaszClassMode lovasz_mode = LovaszClassMode::present;
  if (const Json* l = root.child("loss")) {
    StrictObject obj(*l, "loss");
    obj.read("ce_weight", sce.weight_ce);
    obj.read("sce_weight", sce.weight_sce);
    obj.read("sce_epsilon", sce.epsilon);
    obj.read("lovasz_weight", lovasz_weight);
    std::string mode;
    if (obj.read("lovasz_classes", mode)) {
      if (mode == "present") lovasz_mode = LovaszClassMode::present;
      else if (mode == "all") lovasz_mode = LovaszClassMode::all;
      else throw ConfigError("config key 'loss.lovasz_classes' must be present or all");
    }
    obj.finish();
  }

  auto& s1 = cfg.stage1;
  s1.augment = augment;
  if (const Json* n = root.child("stage1")) {
    StrictObject obj(*n, "stage1");
    obj.read("iter_num", s1.iter_num);
    obj.read("batch_size", s1.batch_size);
    obj.read("image_size", s1.image_size);
    obj.read("ema_alpha", s1.ema_alpha);
    obj.read("tau", s1.tau);
    obj.read("raa", s1.raa);
    obj.read("raa_on_target", s1.raa_on_target);
    obj.read("eval_interval", s1.eval_interval);
    obj.read("seed", s1.seed);
    read_optimizer(obj, s1.optimizer, s1.iter_num);
    obj.finish();
  }
  s1.optimizer.total_steps = s1.iter_num;

  auto& s2 = cfg.stage2;
  s2.augment = augment;
  s2.sce = sce;
  s2.lovasz_weight = lovasz_weight;
  s2.lovasz_mode = lovasz_mode;
  if (const Json* n = root.child("stage2")) {
    StrictObject obj(*n, "stage2");
    obj.read("iter_num", s2.iter_num);
    obj.read("batch_size", s2.batch_size);
    obj.read("image_size", s2.image_size);
    std::string source, pseudo_dir;
    if (obj.read("label_source", source)) s2.label_source = parse_label_source(source);
    if (obj.read("pseudo_dir", pseudo_dir)) s2.pseudo_dir = resolve(base_dir, pseudo_dir);
    obj.read("eval_interval", s2.eval_interval);
    obj.read("seed", s2.seed);
    read_optimizer(obj, s2.optimizer, s2.iter_num);
    obj.finish();
  }
  s2.optimizer.total_steps = s2.iter_num;

  if (const Json* e = root.child("eval")) {
    StrictObject obj(*e, "eval");
    obj.read("split", cfg.eval.split);
    read_tile(obj, cfg.eval.tile);
    std::string mode;
    if (obj.read("ensemble_mode", mode)) {
      if (mode == "probability") cfg.eval.ensemble_mode = EnsembleMode::probability;
      else if (mode == "logit") cfg.eval.ensemble_mode = EnsembleMode::logit;
      else throw ConfigError("config key 'eval.ensemble_mode' must be probability or logit");
    }
    obj.finish();
  }
  if (cfg.eval.tile) as_config_error("eval", [&] { cfg.eval.tile->validate(cfg.model); });
  s1.eval_tile = s2.eval_tile = cfg.eval.tile;

  if (const Json* a = root.child("ablation")) {
    StrictObject obj(*a, "ablation");
    int stage = 2;
    obj.read("stage", stage);
    const Json* matrix = obj.child("matrix");
    obj.finish();
    if (stage != 1 && stage != 2) throw ConfigError("config key 'ablation.stage' must be 1 or 2");
    if (!matrix || !matrix->is_object() || matrix->empty()) {
      throw ConfigError("config key 'ablation.matrix' must map keys to value lists");
    }
    for (auto it = matrix->begin(); it != matrix->end(); ++it) {
      if (!it->is_array() || it->empty()) {
        throw ConfigError("config key 'ablation.matrix." + it.key() + "' must be a non-empty list");
      }
    }
    cfg.ablation = *a;
  }
  root.finish();

  as_config_error("stage1", [&] { s1.validate(); });
  as_config_error("stage2", [&] { s2.validate(); });
  return cfg;
}

Json apply_overrides(Json document, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + item + "' must look like key.path=value");
    }
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(text);
    } catch (const Json::parse_error&) {
      value = text;
    }
    Json* node = &document;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      if (!node->is_object()) throw ConfigError("override '" + key + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = Json::object();
      start = dot + 1;
    }
  }
  return document;
}

RunConfig load_run_config(const fs::path& file, const std::vector<std::string>& overrides) {
  if (!fs::exists(file)) throw ConfigError("config file '" + file.string() + "' not found");
  Json doc;
  try {
    doc = Json::parse(io::read_text(file));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file '" + file.string() + "' is not valid JSON: " + e.what());
  }
  doc = apply_overrides(std::move(doc), overrides);
  return parse_run_config(doc, fs::absolute(file).parent_path());
}

std::string config_hash(const RunConfig& cfg) { return io::fnv1a_hex(cfg.document.dump()); }

}  // namespace landcover
