#include "spatiodec/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "spatiodec/parallel.hpp"

namespace spatiodec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// optimizer and schedule

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Tensor<T>::zeros(p->shape()));
      state.v.push_back(Tensor<T>::zeros(p->shape()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state has a different layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || state.m[i].shape() != params[i]->shape()) {
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i) + ": " +
                       shape_str(params[i]->shape()) + " vs " + shape_str(grads[i]->shape()));
    }
  }
  ++state.step;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i]->ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t k = 0; k < params[i]->numel(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = b1 * static_cast<double>(m[k]) + (1 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - lr * (mk / c1) / (std::sqrt(vk / c2) + state.epsilon));
    }
  }
}

double LrSchedule::update(double val_loss) {
  if (!std::isfinite(val_loss)) throw TrainingDivergedError("validation loss is not finite");
  if (val_loss < best - min_delta) {
    best = val_loss;
    since_improvement = 0;
  } else if (++since_improvement >= patience) {
    lr /= decay_factor;
    since_improvement = 0;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// configuration

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (eval_stride < 1) throw ConfigError("eval_stride must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(decay_factor > 1)) throw ConfigError("decay_factor must be > 1");
  if (min_delta < 0) throw ConfigError("min_delta must be >= 0");
  if (num_folds < 2) throw ConfigError("num_folds must be >= 2");
  if (permutations < 1) throw ConfigError("permutations must be >= 1");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},   {"epochs", c.epochs},
           {"window", c.window},           {"eval_stride", c.eval_stride},
           {"lr", c.lr},                   {"patience", c.patience},
           {"decay_factor", c.decay_factor}, {"min_delta", c.min_delta},
           {"num_folds", c.num_folds},     {"seed", c.seed},
           {"split_seed", c.split_seed},
           {"precision", c.precision == Precision::single ? "single" : "double"},
           {"permutations", c.permutations}};
}

void from_json(const json& j, TrainConfig& c) {
  static const std::set<std::string> known = {"batch_size", "epochs",    "window",    "eval_stride",
                                              "lr",         "patience",  "decay_factor", "min_delta",
                                              "num_folds",  "seed",      "split_seed",      "precision", "permutations"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown train config key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) j.at(key).get_to(dst);
    };
    get("batch_size", c.batch_size);
    get("epochs", c.epochs);
    get("window", c.window);
    get("eval_stride", c.eval_stride);
    get("lr", c.lr);
    get("patience", c.patience);
    get("decay_factor", c.decay_factor);
    get("min_delta", c.min_delta);
    get("num_folds", c.num_folds);
    get("seed", c.seed);
    get("split_seed", c.split_seed);
    get("permutations", c.permutations);
    if (j.contains("precision")) {
      const auto p = j.at("precision").get<std::string>();
      if (p == "single") c.precision = Precision::single;
      else if (p == "double") c.precision = Precision::double_;
      else throw ConfigError("precision must be 'single' or 'double', got '" + p + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// data plumbing

namespace {

struct Block {
  Tensor<float> volume;
  std::size_t entry = 0;
  double target = 0;  // class index or trait value
};

double target_of(const ManifestEntry& e, const ModelConfig& mc) {
  if (mc.head == HeadKind::classify) {
    if (!e.class_label) throw LabelError("entry " + e.path + " has no class_label");
    if (*e.class_label < 0 || static_cast<std::size_t>(*e.class_label) >= mc.num_classes) {
      throw LabelError("entry " + e.path + " label " + std::to_string(*e.class_label) + " outside [0, " +
                       std::to_string(mc.num_classes) + ")");
    }
    return *e.class_label;
  }
  if (!e.trait_value) throw LabelError("entry " + e.path + " has no trait_value");
  return *e.trait_value;
}

std::vector<Block> load_blocks(const DatasetManifest& m, const fs::path& root,
                               const std::vector<std::string>& subjects, const ModelConfig& mc,
                               std::size_t window) {
  const auto idx = entries_for(m, subjects);
  std::vector<Block> blocks(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    blocks[i].entry = idx[i];
    blocks[i].target = target_of(m.entries[idx[i]], mc);
  }
  parallel_for(idx.size(), [&](std::size_t i) {
    const ManifestEntry& e = m.entries[idx[i]];
    Tensor<float> v = read_volume(root / e.path);
    const Shape want{e.block_length, mc.extents.h, mc.extents.w, mc.extents.d};
    if (v.shape() != want) {
      throw ShapeError(e.path + ": volume " + shape_str(v.shape()) + " does not match expected " +
                       shape_str(want));
    }
    if (e.block_length < window) {
      throw ShapeError(e.path + ": block of " + std::to_string(e.block_length) +
                       " frames is shorter than window " + std::to_string(window));
    }
    blocks[i].volume = std::move(v);
  });
  return blocks;
}

void check_fit(const ModelConfig& mc, const TrainConfig& cfg) {
  cfg.validate();
  if (mc.frames != cfg.window) {
    throw ConfigError("model expects " + std::to_string(mc.frames) + "-frame windows but window is " +
                      std::to_string(cfg.window));
  }
}

struct Pick {
  std::size_t block;
  std::size_t start;
};

template <typename T>
Tensor<T> make_batch(const std::vector<Block>& blocks, const std::vector<Pick>& picks, std::size_t L) {
  const Shape& s = blocks.at(picks.at(0).block).volume.shape();
  const std::size_t each = L * s[1] * s[2] * s[3];
  Tensor<T> batch({picks.size(), 1, L, s[1], s[2], s[3]});
  if constexpr (std::is_same_v<T, float>) {
    for (std::size_t i = 0; i < picks.size(); ++i) {
      copy_window(blocks[picks[i].block].volume, picks[i].start, L, batch.ptr() + i * each);
    }
  } else {
    std::vector<float> tmp(each);
    for (std::size_t i = 0; i < picks.size(); ++i) {
      copy_window(blocks[picks[i].block].volume, picks[i].start, L, tmp.data());
      std::copy(tmp.begin(), tmp.end(), batch.ptr() + i * each);
    }
  }
  return batch;
}

template <typename T>
Tensor<T> convert(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    Tensor<T> out(t.shape());
    std::copy(t.data().begin(), t.data().end(), out.ptr());
    return out;
  }
}

template <typename T>
Var<T> loss_for(const Var<T>& out, const std::vector<Block>& blocks, const std::vector<Pick>& picks,
                HeadKind head) {
  if (head == HeadKind::classify) {
    std::vector<int> labels;
    for (const auto& p : picks) labels.push_back(static_cast<int>(blocks[p.block].target));
    return softmax_ce(out, std::span<const int>(labels));
  }
  Tensor<T> target({picks.size(), 1});
  for (std::size_t i = 0; i < picks.size(); ++i) target[i] = static_cast<T>(blocks[picks[i].block].target);
  return mse(out, out.tape().constant(std::move(target)));
}

template <typename T>
double validation_loss(Model<T>& model, const std::vector<Block>& blocks, const TrainConfig& cfg) {
  long double total = 0;
  for (std::size_t s = 0; s < blocks.size(); s += cfg.batch_size) {
    std::vector<Pick> picks;
    for (std::size_t i = s; i < std::min(blocks.size(), s + cfg.batch_size); ++i) {
      picks.push_back({i, (blocks[i].volume.extent(0) - cfg.window) / 2});
    }
    Tape<T> tape(false);
    ParamBinder<T> bind(tape);
    Var<T> out = model.forward(tape.constant(make_batch<T>(blocks, picks, cfg.window)), bind, Mode::infer);
    total += static_cast<long double>(loss_for(out, blocks, picks, model.config().head).value()[0]) *
             picks.size();
  }
  return static_cast<double>(total / blocks.size());
}

}  // namespace

template <typename T>
TrainResult train(Model<T>& model, const DatasetManifest& manifest, const fs::path& root,
                  const SplitPlan& split, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  check_fit(model.config(), cfg);
  audit_split(split);
  if (split.val.empty()) throw SplitError("validation split is empty");
  const auto train_blocks = load_blocks(manifest, root, split.train, model.config(), cfg.window);
  const auto val_blocks = load_blocks(manifest, root, split.val, model.config(), cfg.window);
  if (train_blocks.size() < cfg.batch_size) {
    throw ConfigError("only " + std::to_string(train_blocks.size()) + " training blocks for batch size " +
                      std::to_string(cfg.batch_size));
  }
  if (val_blocks.empty()) throw SplitError("validation split has no blocks");

  auto params = model.trainable();
  std::vector<Tensor<T>> grads;
  std::vector<Tensor<T>*> values;
  std::vector<const Tensor<T>*> grad_ptrs;
  for (auto& [name, t] : params) {
    grads.push_back(Tensor<T>::zeros(t->shape()));
    values.push_back(t);
  }
  for (auto& g : grads) grad_ptrs.push_back(&g);

  AdamState<T> adam;
  LrSchedule sched;
  sched.lr = cfg.lr;
  sched.decay_factor = cfg.decay_factor;
  sched.patience = cfg.patience;
  sched.min_delta = cfg.min_delta;
  Rng rng(cfg.seed ^ 0x74a1d5c3e9b2f067ULL);

  TrainResult result;
  std::vector<Tensor<T>> best;
  const std::size_t nb = train_blocks.size() / cfg.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_blocks.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Pick> picks;
    for (std::size_t b : order) {
      std::uniform_int_distribution<std::size_t> start(0, train_blocks[b].volume.extent(0) - cfg.window);
      picks.push_back({b, start(rng)});
    }
    long double epoch_loss = 0;
    const double lr = sched.lr;
    for (std::size_t step = 0; step < nb; ++step) {
      const std::vector<Pick> batch(picks.begin() + static_cast<long>(step * cfg.batch_size),
                                    picks.begin() + static_cast<long>((step + 1) * cfg.batch_size));
      for (auto& g : grads) g.fill(T{0});
      Tape<T> tape;
      ParamBinder<T> bind(tape);
      for (std::size_t i = 0; i < values.size(); ++i) bind.route(values[i], &grads[i]);
      Var<T> out = model.forward(tape.constant(make_batch<T>(train_blocks, batch, cfg.window)), bind,
                                 Mode::train);
      Var<T> loss = loss_for(out, train_blocks, batch, model.config().head);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw TrainingDivergedError("training loss diverged at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      adam_step(values, grad_ptrs, adam, lr);
      epoch_loss += lv;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = static_cast<double>(epoch_loss / nb);
    rec.val_loss = validation_loss(model, val_blocks, cfg);
    rec.lr = lr;
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingDivergedError("validation loss diverged at epoch " + std::to_string(epoch));
    }
    sched.update(rec.val_loss);
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best.clear();
      for (auto& [name, t] : model.named_tensors()) best.push_back(*t);
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  auto all = model.named_tensors();
  for (std::size_t i = 0; i < all.size(); ++i) *all[i].second = best[i];
  return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ExportError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr\n" << std::setprecision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << '\n';
}

std::vector<EpochRecord> read_history_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    EpochRecord r;
    if (!(ss >> r.epoch >> r.train_loss >> r.val_loss >> r.lr)) throw FormatError(path.string() + ": bad row");
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// evaluation

void to_json(json& j, const EvalReport& r) {
  json curve = json::array();
  for (const auto& e : r.loss_curve) {
    curve.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
  }
  j = json{{"class_names", r.class_names},
           {"confusion", r.confusion},
           {"accuracy", r.accuracy},
           {"per_class_accuracy", r.per_class_accuracy},
           {"instances", r.instances},
           {"loss_curve", curve}};
}

EvalReport make_report(std::vector<std::vector<std::size_t>> confusion, std::vector<std::string> class_names) {
  EvalReport r;
  r.class_names = std::move(class_names);
  r.confusion = std::move(confusion);
  std::size_t trace = 0;
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    const auto& row = r.confusion[i];
    const std::size_t total = std::accumulate(row.begin(), row.end(), std::size_t{0});
    r.instances += total;
    trace += row.at(i);
    r.per_class_accuracy.push_back(total ? static_cast<double>(row[i]) / total : 0.0);
  }
  if (r.instances == 0) throw EvalError("no test instances");
  r.accuracy = static_cast<double>(trace) / r.instances;
  return r;
}

template <typename T>
EvalReport evaluate(Model<T>& model, const DatasetManifest& manifest, const fs::path& root,
                    const SplitPlan& split, const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  check_fit(mc, cfg);
  audit_split(split);
  if (mc.head != HeadKind::classify) throw EvalError("evaluate needs a classification head");
  if (split.test.empty()) throw EvalError("test split is empty");
  const auto blocks = load_blocks(manifest, root, split.test, mc, cfg.window);
  if (blocks.empty()) throw EvalError("test split has no blocks");
  std::vector<std::vector<std::size_t>> confusion(mc.num_classes, std::vector<std::size_t>(mc.num_classes, 0));
  for (const auto& b : blocks) {
    const Vote v = model.predict_instance(convert<T>(segment_windows(b.volume, cfg.window, cfg.eval_stride)));
    ++confusion[static_cast<std::size_t>(b.target)][v.label];
  }
  std::vector<std::string> names = manifest.class_names;
  names.resize(mc.num_classes);
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (names[c].empty()) names[c] = "class" + std::to_string(c);
  }
  return make_report(std::move(confusion), std::move(names));
}

template <typename T>
std::vector<BlockScore> predict_scores(Model<T>& model, const DatasetManifest& manifest, const fs::path& root,
                                       const SplitPlan& split, const TrainConfig& cfg) {
  const ModelConfig& mc = model.config();
  check_fit(mc, cfg);
  audit_split(split);
  if (mc.head != HeadKind::regress) throw EvalError("predict_scores needs a regression head");
  const auto blocks = load_blocks(manifest, root, split.test, mc, cfg.window);
  if (blocks.empty()) throw EvalError("test split has no blocks");
  std::vector<BlockScore> out;
  for (const auto& b : blocks) {
    const auto r = model.forward(convert<T>(segment_windows(b.volume, cfg.window, cfg.eval_stride)), Mode::infer);
    long double s = 0;
    for (std::size_t i = 0; i < r.output.numel(); ++i) s += r.output[i];
    out.push_back({manifest.entries[b.entry].subject_id, static_cast<double>(s / r.output.numel()), b.target});
  }
  return out;
}

// ---------------------------------------------------------------------------
// spearman

void to_json(json& j, const SpearmanResult& r) { j = json{{"r_s", r.r_s}, {"p_perm", r.p_perm}, {"n", r.n}}; }

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

bool constant(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& pred, const std::vector<double>& obs,
                        std::size_t num_permutations, std::uint64_t seed) {
  if (pred.size() != obs.size()) throw ContractError("spearman: inputs differ in length");
  if (pred.size() < 3) throw ContractError("spearman needs at least 3 pairs");
  for (double v : pred) {
    if (!std::isfinite(v)) throw ContractError("spearman: non-finite prediction");
  }
  for (double v : obs) {
    if (!std::isfinite(v)) throw ContractError("spearman: non-finite observation");
  }
  if (constant(pred) || constant(obs)) throw UndefinedCorrelationError("spearman: constant input");
  const auto rp = average_ranks(pred);
  auto ro = average_ranks(obs);
  SpearmanResult r;
  r.n = pred.size();
  r.r_s = pearson(rp, ro);
  Rng rng(seed);
  std::size_t hits = 0;
  const double threshold = std::abs(r.r_s) - 1e-12;
  for (std::size_t i = 0; i < num_permutations; ++i) {
    std::shuffle(ro.begin(), ro.end(), rng);
    hits += std::abs(pearson(rp, ro)) >= threshold;
  }
  r.p_perm = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(num_permutations));
  return r;
}

// ---------------------------------------------------------------------------
// transfer

HeadSpec parse_head_spec(const std::string& s) {
  if (s == "regress") return {HeadKind::regress, 1};
  const std::string prefix = "classify:";
  if (s.rfind(prefix, 0) == 0) {
    const std::string n = s.substr(prefix.size());
    if (!n.empty() && std::all_of(n.begin(), n.end(), ::isdigit)) {
      const std::size_t c = std::stoul(n);
      if (c >= 2) return {HeadKind::classify, c};
    }
  }
  throw ConfigError("head must be 'classify:N' with N >= 2 or 'regress', got '" + s + "'");
}

template <typename T>
Model<T> prepare_transfer(const fs::path& source_ckpt, const HeadSpec& head, const Extents3& target_extents,
                          std::uint64_t seed) {
  ModelConfig cfg = read_checkpoint_config(source_ckpt);
  cfg.head = head.kind;
  if (head.kind == HeadKind::classify) cfg.num_classes = head.classes;
  cfg.extents = target_extents;
  cfg.seed = seed;
  try {
    shape_audit(cfg);
  } catch (const ConfigError& e) {
    throw TransferError(std::string("target extents do not fit the source body: ") + e.what());
  }
  Model<T> m = Model<T>::build(cfg);
  load_body(m, source_ckpt, true);
  m.reinit_head(seed ^ 0x5eedf00dULL);
  return m;
}

template <typename T>
TransferResult<T> transfer_fit(const fs::path& source_ckpt, const DatasetManifest& manifest, const fs::path& root,
                               const SplitPlan& split, const HeadSpec& head, const TrainConfig& cfg,
                               const EpochCallback& on_epoch) {
  if (manifest.entries.empty()) throw TransferError("target manifest has no entries");
  const Tensor<float> probe = read_volume(root / manifest.entries.front().path);
  const Extents3 extents{probe.extent(1), probe.extent(2), probe.extent(3)};
  TransferResult<T> r{prepare_transfer<T>(source_ckpt, head, extents, cfg.seed), {}, {}, {}};
  if (r.model.config().frames != cfg.window) {
    throw TransferError("source body expects " + std::to_string(r.model.config().frames) +
                        "-frame windows, transfer window is " + std::to_string(cfg.window));
  }
  r.training = train(r.model, manifest, root, split, cfg, on_epoch);
  if (head.kind == HeadKind::classify) {
    r.report = evaluate(r.model, manifest, root, split, cfg);
  } else {
    const auto scores = predict_scores(r.model, manifest, root, split, cfg);
    std::vector<double> pred, obs;
    for (const auto& s : scores) {
      pred.push_back(s.predicted);
      obs.push_back(s.observed);
    }
    r.correlation = spearman(pred, obs, cfg.permutations, cfg.seed);
  }
  return r;
}

#define SPATIODEC_INSTANTIATE(T)                                                                          \
  template void adam_step<T>(const std::vector<Tensor<T>*>&, const std::vector<const Tensor<T>*>&,        \
                             AdamState<T>&, double);                                                      \
  template TrainResult train<T>(Model<T>&, const DatasetManifest&, const fs::path&, const SplitPlan&,     \
                                const TrainConfig&, const EpochCallback&);                                \
  template EvalReport evaluate<T>(Model<T>&, const DatasetManifest&, const fs::path&, const SplitPlan&,   \
                                  const TrainConfig&);                                                    \
  template std::vector<BlockScore> predict_scores<T>(Model<T>&, const DatasetManifest&, const fs::path&,  \
                                                     const SplitPlan&, const TrainConfig&);               \
  template Model<T> prepare_transfer<T>(const fs::path&, const HeadSpec&, const Extents3&, std::uint64_t); \
  template TransferResult<T> transfer_fit<T>(const fs::path&, const DatasetManifest&, const fs::path&,    \
                                             const SplitPlan&, const HeadSpec&, const TrainConfig&,       \
                                             const EpochCallback&);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)
#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec
