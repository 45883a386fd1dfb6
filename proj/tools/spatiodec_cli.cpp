#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "spatiodec/grad_suite.hpp"
#include "spatiodec/masks.hpp"
#include "spatiodec/parallel.hpp"
#include "spatiodec/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spatiodec;

namespace {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  bool extents_given = false;
};

struct Overrides {
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--batch-size", batch_size, "Batch size");
    cmd->add_option("--lr", lr, "Initial learning rate");
    cmd->add_option("--seed", seed, "Seed for initialization and sampling");
    cmd->add_option("--precision", precision, "single or double")->check(CLI::IsMember({"single", "double"}));
  }
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json(const json& j, const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw ExportError("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

RunConfig load_config(const std::optional<fs::path>& path, const Overrides& o) {
  RunConfig rc;
  json train_j = json::object();
  if (path) {
    const json j = read_json(*path);
    if (!j.is_object()) throw ConfigError(path->string() + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() != "model" && it.key() != "train") {
        throw ConfigError(path->string() + ": unknown section '" + it.key() + "'");
      }
    }
    if (j.contains("model")) {
      rc.model = j["model"].get<ModelConfig>();
      rc.extents_given = j["model"].contains("extents");
    }
    if (j.contains("train")) train_j = j["train"];
  }
  if (o.epochs) train_j["epochs"] = *o.epochs;
  if (o.batch_size) train_j["batch_size"] = *o.batch_size;
  if (o.lr) train_j["lr"] = *o.lr;
  if (o.seed) {
    train_j["seed"] = *o.seed;
    rc.model.seed = *o.seed;
  }
  if (o.precision) train_j["precision"] = *o.precision;
  rc.train = train_j.get<TrainConfig>();
  return rc;
}

json echo(const RunConfig& rc) { return json{{"model", rc.model}, {"train", rc.train}}; }

fs::path require_dir(const fs::path& p, const char* what) {
  if (!fs::is_directory(p)) throw Error(std::string(what) + " directory '" + p.string() + "' does not exist");
  return p;
}

fs::path require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw Error(std::string(what) + " '" + p.string() + "' does not exist");
  return p;
}

Extents3 data_extents(const DatasetManifest& m, const fs::path& root) {
  if (m.entries.empty()) throw FormatError("manifest in '" + root.string() + "' has no entries");
  const auto v = read_volume(root / m.entries.front().path);
  return {v.extent(1), v.extent(2), v.extent(3)};
}

void fit_extents(RunConfig& rc, const Extents3& e) {
  if (rc.extents_given && !(rc.model.extents == e)) {
    throw ConfigError("configured extents " + rc.model.extents.str() + " differ from data extents " + e.str());
  }
  rc.model.extents = e;
}

json split_json(const SplitPlan& p) {
  return json{{"fold_index", p.fold_index}, {"num_folds", p.num_folds},
              {"train", p.train},           {"val", p.val},
              {"test", p.test}};
}

void print_epoch(const EpochRecord& r, std::size_t total) {
  std::printf("epoch %zu/%zu  train %.5f  val %.5f  lr %.3g\n", r.epoch, total, r.train_loss, r.val_loss, r.lr);
  std::fflush(stdout);
}

void print_report(const EvalReport& r) {
  std::size_t trace = 0;
  for (std::size_t i = 0; i < r.confusion.size(); ++i) trace += r.confusion[i][i];
  std::printf("accuracy %.4f (%zu/%zu instances)\n", r.accuracy, trace, r.instances);
  std::printf("confusion (rows true, columns predicted):\n");
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    std::printf("  %-12s", r.class_names[i].c_str());
    for (auto v : r.confusion[i]) std::printf(" %4zu", v);
    std::printf("\n");
  }
}

// Config beside a checkpoint, if any, under explicit --config.
RunConfig config_for_ckpt(const fs::path& ckpt, const std::optional<fs::path>& explicit_cfg, const Overrides& o) {
  std::optional<fs::path> cfg = explicit_cfg;
  if (!cfg && fs::is_regular_file(ckpt.parent_path() / "config.json")) cfg = ckpt.parent_path() / "config.json";
  RunConfig rc = load_config(cfg, o);
  rc.model = read_checkpoint_config(ckpt);
  return rc;
}

// --- subcommands ---------------------------------------------------------------

template <typename T>
EvalReport train_fold(RunConfig rc, const fs::path& data, std::size_t fold, const fs::path& out) {
  const DatasetManifest m = read_manifest(data);
  fit_extents(rc, data_extents(m, data));
  const SplitPlan split = make_splits(m, rc.train.num_folds, fold, rc.train.split_seed);
  fs::create_directories(out);
  write_json(echo(rc), out / "config.json");
  write_json(split_json(split), out / "split.json");
  Model<T> model = Model<T>::build(rc.model);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(model, m, data, split, rc.train,
                              [&](const EpochRecord& e) { print_epoch(e, rc.train.epochs); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(model, out / "model.sd4d");
  write_history_csv(r.history, out / "history.csv");
  std::printf("best epoch %zu (val %.5f), %.1f s; wrote %s\n", r.best_epoch, r.best_val_loss, secs,
              (out / "model.sd4d").string().c_str());
  if (rc.model.head != HeadKind::classify) return {};
  EvalReport rep = evaluate(model, m, data, split, rc.train);
  rep.loss_curve = r.history;
  write_json(rep, out / "eval.json");
  std::printf("fold %zu test ", fold);
  print_report(rep);
  return rep;
}

template <typename T>
int cmd_eval(const RunConfig& rc, const fs::path& ckpt, const fs::path& data, std::size_t fold,
             const std::optional<fs::path>& out) {
  const DatasetManifest m = read_manifest(data);
  Model<T> model = load_checkpoint<T>(ckpt);
  const SplitPlan split = make_splits(m, rc.train.num_folds, fold, rc.train.split_seed);
  TrainConfig tc = rc.train;
  tc.window = model.config().frames;
  EvalReport rep = evaluate(model, m, data, split, tc);
  if (fs::is_regular_file(ckpt.parent_path() / "history.csv")) {
    rep.loss_curve = read_history_csv(ckpt.parent_path() / "history.csv");
  }
  print_report(rep);
  if (out) write_json(rep, *out);
  return 0;
}

template <typename T>
int cmd_transfer(const RunConfig& rc, const fs::path& ckpt, const fs::path& data, const HeadSpec& head,
                 std::size_t fold, const fs::path& out) {
  const DatasetManifest m = read_manifest(data);
  const SplitPlan split = make_splits(m, rc.train.num_folds, fold, rc.train.split_seed);
  fs::create_directories(out);
  TrainConfig tc = rc.train;
  tc.window = rc.model.frames;
  json cfg = echo(rc);
  cfg["transfer"] = {{"source", ckpt.string()}, {"head", head.kind == HeadKind::regress ? "regress"
                                                                 : "classify:" + std::to_string(head.classes)}};
  write_json(cfg, out / "config.json");
  write_json(split_json(split), out / "split.json");
  auto r = transfer_fit<T>(ckpt, m, data, split, head, tc, [&](const EpochRecord& e) { print_epoch(e, tc.epochs); });
  save_checkpoint(r.model, out / "model.sd4d");
  write_history_csv(r.training.history, out / "history.csv");
  json report;
  if (r.report) {
    r.report->loss_curve = r.training.history;
    report = *r.report;
    print_report(*r.report);
  } else {
    report = json{{"spearman", *r.correlation}};
    std::printf("spearman r_s %.4f  p_perm %.4g  n %zu\n", r.correlation->r_s, r.correlation->p_perm,
                r.correlation->n);
  }
  write_json(report, out / "report.json");
  return 0;
}

template <typename T>
int cmd_masks(const RunConfig& rc, const fs::path& ckpt, const fs::path& data, const std::string& stage,
              std::size_t fold, const fs::path& out) {
  const auto stages = parse_stage_filter(stage);
  const DatasetManifest m = read_manifest(data);
  Model<T> model = load_checkpoint<T>(ckpt);
  const SplitPlan split = make_splits(m, rc.train.num_folds, fold, rc.train.split_seed);
  TrainConfig tc = rc.train;
  tc.window = model.config().frames;
  const auto masks = extract_masks(model, m, data, split, stages, tc);
  json index = json::array();
  for (const auto& mv : masks) {
    const auto f = export_mask(mv, out);
    index.push_back({{"stage", mv.stage}, {"channel", mv.channel}, {"class", mv.class_label},
                     {"sidecar", f.sidecar.filename().string()}});
  }
  write_json(index, out / "masks.json");
  std::printf("wrote %zu masks to %s\n", masks.size(), out.string().c_str());
  return 0;
}

int cmd_gradcheck(const std::string& op) {
  const auto results = run_grad_suite(op);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.worst <= kGradTolerance;
    ok = ok && pass;
    std::printf("%-18s shapes %zu  worst %.3e  %s\n", r.op.c_str(), r.shapes, r.worst, pass ? "ok" : "FAIL");
  }
  if (!ok) std::fprintf(stderr, "spatiodec: gradient check exceeded %.0e\n", kGradTolerance);
  return ok ? 0 : 1;
}

template <typename T>
int cmd_crossval(const RunConfig& rc, const fs::path& data, std::size_t folds, const fs::path& out) {
  RunConfig c = rc;
  c.train.num_folds = folds;
  std::vector<double> acc;
  for (std::size_t k = 0; k < folds; ++k) {
    std::printf("== fold %zu/%zu\n", k + 1, folds);
    acc.push_back(train_fold<T>(c, data, k, out / ("fold" + std::to_string(k))).accuracy);
  }
  double mean = 0;
  for (double a : acc) mean += a / folds;
  double var = 0;
  for (double a : acc) var += (a - mean) * (a - mean) / (folds - 1);
  const double sd = std::sqrt(var);
  char line[96];
  std::snprintf(line, sizeof line, "%.1f±%.1f%%", 100 * mean, 100 * sd);
  write_json({{"folds", folds}, {"accuracy", acc}, {"mean", mean}, {"sd", sd}, {"summary", line}},
             out / "crossval.json");
  std::printf("crossval accuracy %s over %zu folds (mean %.4f, sd %.4f)\n", line, folds, mean, sd);
  return 0;
}

template <typename Fn>
int dispatch(Precision p, Fn&& fn) {
  return p == Precision::double_ ? fn(double{}) : fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal 4D convolutional decoder"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (SPATIODEC_THREADS when unset)");

  std::optional<fs::path> config, out_file;
  fs::path data, out, ckpt, spec;
  std::size_t fold = 0, folds = 5;
  std::string head, stage = "all", op;
  std::optional<std::uint64_t> gen_seed;
  Overrides ov;

  auto* gen = app.add_subcommand("phantom-gen", "Generate a synthetic phantom dataset");
  gen->add_option("--spec", spec, "Phantom spec JSON")->required();
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  auto* tr = app.add_subcommand("train", "Train one cross-validation fold");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "Run config JSON");
  tr->add_option("--fold", fold, "Fold index")->required();
  tr->add_option("--out", out, "Output directory")->required();
  ov.attach(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a fold's test subjects");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--fold", fold, "Fold index")->required();
  ev->add_option("--config", config, "Run config JSON (default: config.json beside the checkpoint)");
  ev->add_option("--out", out_file, "Write the report JSON here");

  auto* tf = app.add_subcommand("transfer", "Fine-tune a pretrained body with a new head");
  tf->add_option("--ckpt", ckpt, "Source checkpoint")->required();
  tf->add_option("--data", data, "Target dataset directory")->required();
  tf->add_option("--head", head, "classify:N or regress")->required();
  tf->add_option("--fold", fold, "Fold index");
  tf->add_option("--config", config, "Run config JSON (train section used)");
  tf->add_option("--out", out, "Output directory")->default_val("transfer_out");
  ov.attach(tf);

  auto* mk = app.add_subcommand("masks", "Export class-averaged attention masks");
  mk->add_option("--ckpt", ckpt, "Checkpoint")->required();
  mk->add_option("--data", data, "Dataset directory")->required();
  mk->add_option("--stage", stage, "1..4 or all")->required()->check(CLI::IsMember({"1", "2", "3", "4", "all"}));
  mk->add_option("--out", out, "Output directory")->required();
  mk->add_option("--fold", fold, "Fold index");
  mk->add_option("--config", config, "Run config JSON (default: config.json beside the checkpoint)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--op", op, "Single op to check");

  auto* cv = app.add_subcommand("crossval", "Train and evaluate every fold");
  cv->add_option("--folds", folds, "Number of folds")->default_val(5)->check(CLI::Range(2, 100));
  cv->add_option("--data", data, "Dataset directory")->required();
  cv->add_option("--config", config, "Run config JSON");
  cv->add_option("--out", out, "Output directory")->required();
  ov.attach(cv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "spatiodec: usage: " << e.what() << " (see --help)\n";
    return 2;
  }

  try {
    configure_threads(threads);
    if (gen->parsed()) {
      PhantomSpec ps = read_json(require_file(spec, "spec file")).get<PhantomSpec>();
      if (gen_seed) ps.seed = *gen_seed;
      const auto m = phantom_generate(ps, out);
      write_json(json(ps), out / "phantom_spec.json");
      std::printf("wrote %zu blocks for %zu subjects to %s\n", m.entries.size(), m.subjects().size(),
                  out.string().c_str());
      return 0;
    }
    if (tr->parsed()) {
      require_dir(data, "data");
      if (config) require_file(*config, "config file");
      const RunConfig rc = load_config(config, ov);
      return dispatch(rc.train.precision, [&](auto t) {
        train_fold<decltype(t)>(rc, data, fold, out);
        return 0;
      });
    }
    if (ev->parsed()) {
      require_dir(data, "data");
      require_file(ckpt, "checkpoint");
      const RunConfig rc = config_for_ckpt(ckpt, config, {});
      return dispatch(rc.train.precision, [&](auto t) { return cmd_eval<decltype(t)>(rc, ckpt, data, fold, out_file); });
    }
    if (tf->parsed()) {
      require_dir(data, "data");
      require_file(ckpt, "checkpoint");
      const HeadSpec hs = parse_head_spec(head);
      RunConfig rc = load_config(config, ov);
      rc.model = read_checkpoint_config(ckpt);
      return dispatch(rc.train.precision,
                      [&](auto t) { return cmd_transfer<decltype(t)>(rc, ckpt, data, hs, fold, out); });
    }
    if (mk->parsed()) {
      require_dir(data, "data");
      require_file(ckpt, "checkpoint");
      const RunConfig rc = config_for_ckpt(ckpt, config, {});
      return dispatch(rc.train.precision,
                      [&](auto t) { return cmd_masks<decltype(t)>(rc, ckpt, data, stage, fold, out); });
    }
    if (gc->parsed()) return cmd_gradcheck(op);
    if (cv->parsed()) {
      require_dir(data, "data");
      if (config) require_file(*config, "config file");
      const RunConfig rc = load_config(config, ov);
      return dispatch(rc.train.precision, [&](auto t) { return cmd_crossval<decltype(t)>(rc, data, folds, out); });
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "spatiodec: error: " << msg << '\n';
    return 1;
  }
  return 2;
}
