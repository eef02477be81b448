#include "landcover/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "landcover/checkpoint.hpp"
#include "landcover/config.hpp"
#include "landcover/errors.hpp"
#include "landcover/io.hpp"
#include "landcover/metrics.hpp"

namespace landcover {

namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path config;
  std::vector<std::string> overrides;
  int stage = 0;
  fs::path run_dir;
  fs::path pseudo_dir;
  fs::path checkpoint;
  fs::path dataset;
  fs::path out;
  std::string split = "val";
  std::string only;
  bool probs = false;
  int tile_size = 0;
  double tile_overlap = 0.5;
  int tile_context = -1;
  double tau = 0.0;
  std::vector<fs::path> inputs;
  std::string mode;
  fs::path pred;
  fs::path report;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return ss.str();
}

RunConfig load_config(const Options& o) {
  RunConfig cfg = load_run_config(o.config, o.overrides);
  if (const char* root = std::getenv(kRunRootEnv); root && *root) cfg.data.run_root = root;
  return cfg;
}

fs::path make_run_dir(const RunConfig& cfg, const std::string& kind, const fs::path& explicit_dir) {
  fs::path dir = explicit_dir;
  if (dir.empty()) {
    dir = cfg.data.run_root / (cfg.name + "-" + kind + "-" + config_hash(cfg) + "-" + timestamp());
  }
  fs::create_directories(dir);
  return dir;
}

void dump_config(const RunConfig& cfg, const fs::path& dir) {
  Json doc = cfg.document;
  doc["data"]["source"] = cfg.data.source.string();
  doc["data"]["target"] = cfg.data.target.string();
  doc["data"]["run_root"] = cfg.data.run_root.string();
  if (!cfg.stage2.pseudo_dir.empty()) doc["stage2"]["pseudo_dir"] = cfg.stage2.pseudo_dir.string();
  io::write_text(dir / "config.json", doc.dump(2) + "\n");
}

fs::path require_path(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " is not configured");
  return p;
}

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << 100.0 * *v;
  return ss.str();
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const RunConfig cfg = load_config(o);
  bool any = false;
  auto gen = [&](const std::optional<SynthConfig>& synth, const fs::path& root, const char* label) {
    if (!o.only.empty() && o.only != label) return;
    if (!synth) return;
    any = true;
    const auto spec = generate_synthetic(*synth, require_path(root, std::string("data.") + label));
    out << label << ": " << spec.root.string() << '\n';
    out << "  classes: " << spec.taxonomy->num_classes() << " (";
    for (int c = 0; c < spec.taxonomy->num_classes(); ++c) {
      out << (c ? ", " : "") << spec.taxonomy->names()[c];
    }
    out << ")\n  size: " << synth->height << "x" << synth->width << '\n';
    for (const auto& [split, stems] : spec.splits) out << "  " << split << ": " << stems.size() << " images\n";
  };
  gen(cfg.synth_source, cfg.data.source, "source");
  gen(cfg.synth_target, cfg.data.target, "target");
  if (!any) throw ConfigError("config has no synth section to generate");
  return kExitOk;
}

TrainOutcome train_stage(const RunConfig& cfg, int stage, const fs::path& dir) {
  const std::string hash = config_hash(cfg);
  ModelConfig model = cfg.model;
  if (stage == 1) {
    const Dataset source = load_dataset(require_path(cfg.data.source, "data.source"));
    const Dataset target = load_dataset(require_path(cfg.data.target, "data.target"));
    const auto data = stage1_data(source, target);
    model.in_channels = 3;
    model.num_classes = data.taxonomy->num_classes();
    return run_stage1(model, cfg.stage1, data, dir, hash);
  }
  const Dataset target = load_dataset(require_path(cfg.data.target, "data.target"));
  if (cfg.stage2.label_source != LabelSource::official && cfg.stage2.pseudo_dir.empty()) {
    throw ConfigError("stage2.label_source=" + std::string(to_string(cfg.stage2.label_source)) +
                      " needs pseudo-labels: run export-pseudo and pass --pseudo-dir");
  }
  const auto data = stage2_data(target, cfg.stage2.label_source, cfg.stage2.pseudo_dir);
  model.in_channels = 1;
  model.num_classes = data.taxonomy->num_classes();
  return run_stage2(model, cfg.stage2, data, dir, hash);
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig cfg = load_config(o);
  if (!o.pseudo_dir.empty()) cfg.stage2.pseudo_dir = fs::absolute(o.pseudo_dir);
  const fs::path dir = make_run_dir(cfg, "stage" + std::to_string(o.stage), o.run_dir);
  dump_config(cfg, dir);
  const auto result = train_stage(cfg, o.stage, dir);
  out << "run directory: " << dir.string() << '\n';
  out << "checkpoint: " << result.checkpoint.string() << '\n';
  if (o.stage == 2) out << "best checkpoint: " << result.best_checkpoint.string() << '\n';
  out << "final val mIoU(%): " << format_optional(result.final_val_miou) << '\n';
  out << "best val mIoU(%): " << format_optional(result.best_val_miou) << '\n';
  return kExitOk;
}

std::optional<TileConfig> tile_from(const Options& o, const std::optional<TileConfig>& fallback) {
  if (o.tile_size > 0) return TileConfig{o.tile_size, o.tile_overlap, o.tile_context};
  return fallback;
}

int cmd_export_pseudo(const Options& o, std::ostream& out) {
  std::optional<RunConfig> cfg;
  if (!o.config.empty()) cfg = load_config(o);
  fs::path root = o.dataset;
  if (root.empty() && cfg) root = cfg->data.target;
  require_path(root, "dataset (--dataset or data.target)");
  const double tau = o.tau > 0.0 ? o.tau : cfg ? cfg->stage1.tau : kDefaultConfidenceThreshold;

  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(root);
  if (!(*ckpt.taxonomy == *ds.taxonomy())) {
    throw ConfigError("checkpoint taxonomy does not match dataset '" + root.string() + "'");
  }
  if (ckpt.model.in_channels != 3) throw ConfigError("export-pseudo needs an optical (3-channel) checkpoint");
  const SegmentationNet net(ckpt.model);
  const auto tile = tile_from(o, cfg ? cfg->eval.tile : std::nullopt);
  if (tile) tile->validate(ckpt.model);

  fs::create_directories(o.out);
  Json weights = Json::object();
  std::size_t count = 0;
  for (const char* split : kSplits) {
    const auto& samples = ds.samples(split);
    if (samples.empty()) continue;
    fs::create_directories(o.out / split);
    for (const auto& s : samples) {
      if (!s.optical) throw ConfigError("sample '" + s.stem + "' has no optical image");
      const ProbMap probs = predict(net, ckpt.params, *s.optical, tile);
      const auto batch = pseudo_from_probs(std::span(&probs, 1), ds.taxonomy(), tau);
      io::write_labels(o.out / split / (s.stem + ".png"), batch.masks.front());
      weights[std::string(split) + "/" + s.stem] = batch.weights.front();
      ++count;
    }
  }
  Json manifest{{"checkpoint", fs::absolute(o.checkpoint).string()},
                {"dataset", fs::absolute(root).string()},
                {"threshold", tau},
                {"taxonomy", taxonomy_to_json(*ds.taxonomy())},
                {"lambda", weights}};
  io::write_text(o.out / "manifest.json", manifest.dump(2) + "\n");
  out << "exported " << count << " pseudo-label masks to " << o.out.string() << '\n';
  return kExitOk;
}

int cmd_predict(const Options& o, std::ostream& out) {
  std::optional<RunConfig> cfg;
  if (!o.config.empty()) cfg = load_config(o);
  fs::path root = o.dataset;
  if (root.empty() && cfg) root = cfg->data.target;
  require_path(root, "dataset (--dataset or data.target)");

  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const Dataset ds = load_dataset(root, ckpt.taxonomy);
  const SegmentationNet net(ckpt.model);
  const bool sar = ckpt.model.in_channels == 1;
  const auto tile = tile_from(o, cfg ? cfg->eval.tile : std::nullopt);
  if (tile) tile->validate(ckpt.model);

  fs::create_directories(o.out);
  io::write_text(o.out / "taxonomy.json", taxonomy_to_json(*ckpt.taxonomy).dump(2) + "\n");
  std::size_t count = 0;
  for (const auto& s : ds.samples(o.split)) {
    const auto& image = sar ? s.sar : s.optical;
    if (!image) {
      throw ConfigError("sample '" + s.stem + "' lacks the " + std::string(sar ? "SAR" : "optical") +
                        " image the checkpoint expects");
    }
    const ProbMap probs = predict(net, ckpt.params, *image, tile);
    io::write_labels(o.out / (s.stem + ".png"), argmax_classes(probs, ckpt.taxonomy));
    if (o.probs) {
      DenseArray3 arr(probs.height(), probs.width(), probs.num_classes());
      std::copy(probs.values().begin(), probs.values().end(), arr.values.begin());
      io::write_npy(o.out / (s.stem + ".npy"), arr);
    }
    ++count;
  }
  out << "predicted " << count << " images from split '" << o.split << "' into " << o.out.string() << '\n';
  return kExitOk;
}

TaxonomyPtr read_prediction_taxonomy(const fs::path& dir) {
  const auto path = dir / "taxonomy.json";
  if (!fs::exists(path)) throw IoError("'" + path.string() + "' not found; is this a predict output?");
  return taxonomy_from_json(Json::parse(io::read_text(path)), path.string());
}

int cmd_ensemble(const Options& o, std::ostream& out) {
  if (o.inputs.empty()) throw ConfigError("ensemble needs at least one --inputs directory");
  EnsembleMode mode = EnsembleMode::probability;
  if (!o.mode.empty()) {
    if (o.mode == "logit") mode = EnsembleMode::logit;
    else if (o.mode != "probability") throw ConfigError("--mode must be probability or logit");
  }
  const TaxonomyPtr taxonomy = read_prediction_taxonomy(o.inputs.front());
  for (const auto& dir : o.inputs) {
    const auto t = read_prediction_taxonomy(dir);
    if (t->num_classes() != taxonomy->num_classes()) {
      throw ValidationError("cannot ensemble predictions with differing class counts (" +
                            std::to_string(taxonomy->num_classes()) + " vs " +
                            std::to_string(t->num_classes()) + ")");
    }
    if (!(*t == *taxonomy)) throw ValidationError("ensemble inputs use different taxonomies");
  }
  auto stems_of = [](const fs::path& dir) {
    std::set<std::string> stems;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".npy") stems.insert(e.path().stem().string());
    }
    return stems;
  };
  const auto stems = stems_of(o.inputs.front());
  if (stems.empty()) throw IoError("no probability maps (.npy) in '" + o.inputs.front().string() + "'; run predict --probs");
  for (const auto& dir : o.inputs) {
    if (stems_of(dir) != stems) {
      throw IoError("'" + dir.string() + "' does not hold the same predictions as '" +
                    o.inputs.front().string() + "'");
    }
  }
  fs::create_directories(o.out);
  io::write_text(o.out / "taxonomy.json", taxonomy_to_json(*taxonomy).dump(2) + "\n");
  for (const auto& stem : stems) {
    std::vector<ProbMap> maps;
    for (const auto& dir : o.inputs) {
      DenseArray3 a = io::read_npy(dir / (stem + ".npy"));
      maps.emplace_back(a.height, a.width, a.channels, std::move(a.values));
    }
    const ProbMap avg = ensemble(maps, mode);
    io::write_labels(o.out / (stem + ".png"), argmax_classes(avg, taxonomy));
    DenseArray3 arr(avg.height(), avg.width(), avg.num_classes());
    std::copy(avg.values().begin(), avg.values().end(), arr.values.begin());
    io::write_npy(o.out / (stem + ".npy"), arr);
  }
  out << "ensembled " << o.inputs.size() << " models over " << stems.size() << " images into "
      << o.out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const Dataset ds = load_dataset(o.dataset);
  const TaxonomyPtr taxonomy = ds.taxonomy();
  if (fs::exists(o.pred / "taxonomy.json") && !(*read_prediction_taxonomy(o.pred) == *taxonomy)) {
    throw ConfigError("prediction taxonomy does not match dataset '" + o.dataset.string() + "'");
  }
  ConfusionMatrix cm(taxonomy->num_classes());
  std::vector<std::string> missing;
  std::size_t count = 0;
  for (const auto& s : ds.samples(o.split)) {
    if (!s.labels_clean) continue;
    const auto path = o.pred / (s.stem + ".png");
    if (!fs::exists(path)) {
      missing.push_back(path.string());
      continue;
    }
    cm.add(*s.labels_clean, io::read_labels(path, taxonomy));
    ++count;
  }
  if (!missing.empty()) {
    std::string msg = "missing predictions:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  const auto result = miou(cm);
  const std::string report = format_report(
      result, *taxonomy, "evaluation: " + o.pred.string() + " (" + o.split + ", " +
                             std::to_string(count) + " images)");
  out << report;
  if (!o.report.empty()) io::write_text(o.report, report);
  return kExitOk;
}

// Cartesian product of the ablation matrix, keys in sorted order.
std::vector<std::vector<std::string>> expand_matrix(const Json& matrix,
                                                    std::vector<std::string>& keys) {
  std::vector<std::vector<std::string>> rows{{}};
  for (auto it = matrix.begin(); it != matrix.end(); ++it) {
    keys.push_back(it.key());
    std::vector<std::vector<std::string>> next;
    for (const auto& row : rows) {
      for (const auto& v : *it) {
        auto r = row;
        r.push_back(it.key() + "=" + v.dump());
        next.push_back(std::move(r));
      }
    }
    rows = std::move(next);
  }
  return rows;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const RunConfig base = load_config(o);
  if (base.ablation.is_null()) throw ConfigError("config has no ablation section");
  const int stage = base.ablation.value("stage", 2);
  std::vector<std::string> keys;
  const auto rows = expand_matrix(base.ablation.at("matrix"), keys);
  const fs::path dir = make_run_dir(base, "ablate", o.run_dir);
  dump_config(base, dir);

  std::ostringstream table;
  for (const auto& k : keys) table << k << '\t';
  table << "final_miou\tbest_miou\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto overrides = o.overrides;
    overrides.insert(overrides.end(), rows[i].begin(), rows[i].end());
    Options run_opts = o;
    run_opts.overrides = overrides;
    RunConfig cfg = load_config(run_opts);
    cfg.ablation = Json();
    if (!o.pseudo_dir.empty()) cfg.stage2.pseudo_dir = fs::absolute(o.pseudo_dir);
    const fs::path run_dir = dir / ("run" + std::to_string(i));
    fs::create_directories(run_dir);
    dump_config(cfg, run_dir);
    const auto result = train_stage(cfg, stage, run_dir);
    for (const auto& r : rows[i]) table << r.substr(r.find('=') + 1) << '\t';
    table << format_optional(result.final_val_miou) << '\t' << format_optional(result.best_val_miou)
          << '\n';
  }
  io::write_text(dir / "results.tsv", table.str());
  out << "ablation (stage " << stage << ", " << rows.size() << " runs) in " << dir.string() << '\n'
      << table.str();
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage optical-to-SAR land-cover segmentation"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("-c,--config", o.config, "JSON run configuration");
    if (required) opt->required();
    cmd->add_option("--set", o.overrides, "Override a config value, e.g. stage1.iter_num=10");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic datasets from the synth section");
  add_config(gen, true);
  gen->add_option("--only", o.only, "Generate only 'source' or 'target'")
      ->check(CLI::IsMember({"source", "target"}));

  auto* train = app.add_subcommand("train", "Train stage 1 (optical self-training) or stage 2 (SAR)");
  add_config(train, true);
  train->add_option("--stage", o.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--run-dir", o.run_dir, "Output directory (default: generated under run_root)");
  train->add_option("--pseudo-dir", o.pseudo_dir, "export-pseudo output used by stage 2");

  auto* exp = app.add_subcommand("export-pseudo", "Write pseudo-label masks from a stage-1 checkpoint");
  add_config(exp, false);
  exp->add_option("--checkpoint", o.checkpoint, "Stage-1 checkpoint directory")->required();
  exp->add_option("--dataset", o.dataset, "Dataset root (default: data.target)");
  exp->add_option("--out", o.out, "Output directory")->required();
  exp->add_option("--tau", o.tau, "Confidence threshold for the recorded image weights");
  exp->add_option("--tile-size", o.tile_size, "Sliding-window tile size");
  exp->add_option("--tile-overlap", o.tile_overlap, "Tile overlap fraction");
  exp->add_option("--tile-context", o.tile_context, "Context pixels around each tile (-1: size/4)");

  auto* pred = app.add_subcommand("predict", "Predict class masks for a dataset split");
  add_config(pred, false);
  pred->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  pred->add_option("--dataset", o.dataset, "Dataset root (default: data.target)");
  pred->add_option("--split", o.split, "Split to predict");
  pred->add_option("--out", o.out, "Output directory")->required();
  pred->add_flag("--probs", o.probs, "Also write per-class probabilities (.npy)");
  pred->add_option("--tile-size", o.tile_size, "Sliding-window tile size");
  pred->add_option("--tile-overlap", o.tile_overlap, "Tile overlap fraction");
  pred->add_option("--tile-context", o.tile_context, "Context pixels around each tile (-1: size/4)");

  auto* ens = app.add_subcommand("ensemble", "Average probability maps of several predict runs");
  ens->add_option("--inputs", o.inputs, "predict --probs output directories")->required();
  ens->add_option("--out", o.out, "Output directory")->required();
  ens->add_option("--mode", o.mode, "probability (default) or logit");

  auto* ev = app.add_subcommand("eval", "Per-class IoU of predicted masks against clean labels");
  ev->add_option("--pred", o.pred, "Directory of predicted masks")->required();
  ev->add_option("--dataset", o.dataset, "Dataset root")->required();
  ev->add_option("--split", o.split, "Split to evaluate");
  ev->add_option("--report", o.report, "Also write the report to this file");

  auto* abl = app.add_subcommand("ablate", "Run every combination of the ablation matrix");
  add_config(abl, true);
  abl->add_option("--run-dir", o.run_dir, "Output directory");
  abl->add_option("--pseudo-dir", o.pseudo_dir, "export-pseudo output used by stage 2 runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*train) return cmd_train(o, out);
    if (*exp) return cmd_export_pseudo(o, out);
    if (*pred) return cmd_predict(o, out);
    if (*ens) return cmd_ensemble(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*abl) return cmd_ablate(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace landcover
