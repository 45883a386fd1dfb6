#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "spatiodec/conv4d.hpp"
#include "spatiodec/grad_suite.hpp"
#include "spatiodec/masks.hpp"
#include "spatiodec/nn.hpp"
#include "spatiodec/ops.hpp"
#include "spatiodec/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spatiodec;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  json j;
  in >> j;
  return j;
}

const fs::path kConfigs = SPATIODEC_CONFIG_DIR;

// --- shared desk state --------------------------------------------------------------

struct Trained {
  Model<float> model;
  EvalReport report;
  TrainResult training;
  double seconds = 0;
};

class Desk {
 public:
  explicit Desk(fs::path work) : work_(std::move(work)) {}

  const PhantomSpec& spec() {
    ensure_data();
    return spec_;
  }
  const fs::path& data() {
    ensure_data();
    return data_;
  }
  const DatasetManifest& manifest() {
    ensure_data();
    return manifest_;
  }
  SplitPlan split() { return make_splits(manifest(), train_cfg().num_folds, 0, train_cfg().split_seed); }

  ModelConfig model_cfg() const { return read_json(kConfigs / "desk.json")["model"].get<ModelConfig>(); }
  TrainConfig train_cfg() const { return read_json(kConfigs / "desk.json")["train"].get<TrainConfig>(); }

  Trained& attention_model() {
    if (!att_) att_ = fit(model_cfg(), data(), manifest(), split(), train_cfg());
    return *att_;
  }

  fs::path attention_ckpt() {
    const fs::path p = work_ / "desk_att.sd4d";
    if (!fs::exists(p)) save_checkpoint(attention_model().model, p);
    return p;
  }

  static Trained fit(const ModelConfig& mc, const fs::path& data, const DatasetManifest& m, const SplitPlan& split,
                     const TrainConfig& tc) {
    Clock clock;
    Trained t{Model<float>::build(mc), {}, {}, 0};
    t.training = train(t.model, m, data, split, tc);
    t.report = evaluate(t.model, m, data, split, tc);
    t.seconds = clock.seconds();
    return t;
  }

  const fs::path& work() const { return work_; }

 private:
  void ensure_data() {
    if (!manifest_.entries.empty()) return;
    spec_ = read_json(kConfigs / "phantom_desk.json").get<PhantomSpec>();
    data_ = work_ / "desk";
    fs::remove_all(data_);
    manifest_ = phantom_generate(spec_, data_);
  }

  fs::path work_;
  PhantomSpec spec_;
  fs::path data_;
  DatasetManifest manifest_;
  std::optional<Trained> att_;
};

// --- criteria ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  Clock clock;
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> ext(3, 8), ch(1, 4), pick(0, 2), two(1, 2), batch(1, 2);
  double worst = 0;
  std::set<std::size_t> kts, sts, sss;
  for (int trial = 0; trial < 20; ++trial) {
    // cover every k_t and both strides in the first rounds
    const std::size_t kt = trial < 3 ? std::array<std::size_t, 3>{1, 3, 5}[trial]
                                     : std::array<std::size_t, 3>{1, 3, 5}[pick(rng)];
    const std::size_t st = trial < 4 ? 1 + trial % 2 : two(rng);
    const std::size_t ss = trial < 4 ? 1 + (trial / 2) % 2 : two(rng);
    const std::size_t cin = ch(rng), cout = ch(rng);
    const std::size_t l = std::min<std::size_t>(8, kt + ext(rng) - 3);
    const Shape xs{batch(rng), cin, l, ext(rng), ext(rng), ext(rng)};
    const auto x = Tensor<double>::randn(xs, 1000 + trial);
    const Conv4DKernel<double> k{Tensor<double>::randn({cout, cin, kt, 3, 3, 3}, 2000 + trial),
                                 Tensor<double>::randn({cout}, 3000 + trial)};
    worst = std::max(worst, max_abs_diff(conv4d(x, k, {st, ss}), conv4d_oracle(x, k, {st, ss})));
    kts.insert(kt);
    sts.insert(st);
    sss.insert(ss);
  }
  const double secs = clock.seconds();
  const bool covered = kts.size() == 3 && sts.size() == 2 && sss.size() == 2;
  return {worst <= 1e-10 && secs < 30 && covered,
          fmt("max |conv4d - oracle| %.2e over 20 configs (tol 1e-10), %.2f s (limit 30 s)", worst, secs)};
}

Tensor<double> frame_of(const Tensor<double>& x, std::size_t t) {
  const Shape& s = x.shape();
  Tensor<double> f({s[0], s[1], s[3], s[4], s[5]});
  const std::size_t vol = s[3] * s[4] * s[5];
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      std::copy(x.ptr() + ((n * s[1] + c) * s[2] + t) * vol, x.ptr() + ((n * s[1] + c) * s[2] + t + 1) * vol,
                f.ptr() + (n * s[1] + c) * vol);
  return f;
}

Outcome degenerate_identities() {
  bool frame_ok = true, ident_ok = true, zero_ok = true;
  std::size_t frames_checked = 0;
  for (std::size_t ss : {1, 2}) {
    for (std::size_t st : {1, 2}) {
      const auto x = Tensor<double>::randn({2, 2, 6, 5, 7, 6}, 10 + ss * 2 + st);
      const Conv4DKernel<double> k{Tensor<double>::randn({3, 2, 1, 3, 3, 3}, 20 + ss),
                                   Tensor<double>::randn({3}, 30 + ss)};
      const auto y = conv4d(x, k, {st, ss});
      const Conv3DParams<double> p{k.weights.reshape({3, 2, 3, 3, 3}), k.bias, ss, Padding::same_zero};
      for (std::size_t t = 0; t < y.extent(2); ++t) {
        frame_ok = frame_ok && bitwise_equal(frame_of(y, t), conv3d(frame_of(x, t * st), p));
        ++frames_checked;
      }
    }
  }
  // centre-tap identity on odd extents; output voxel o reads input voxel s*o
  for (std::size_t ss : {1, 2}) {
    for (std::size_t st : {1, 2}) {
      const auto x = Tensor<double>::randn({1, 1, 7, 7, 5, 9}, 40 + ss + st);
      Conv4DKernel<double> id{Tensor<double>({1, 1, 1, 3, 3, 3}), Tensor<double>({1})};
      id.weights.at({0, 0, 0, 1, 1, 1}) = 1.0;
      const auto y = conv4d(x, id, {st, ss});
      for (std::size_t t = 0; t < y.extent(2); ++t)
        for (std::size_t h = 0; h < y.extent(3); ++h)
          for (std::size_t w = 0; w < y.extent(4); ++w)
            for (std::size_t d = 0; d < y.extent(5); ++d)
              ident_ok = ident_ok && y.at({0, 0, t, h, w, d}) == x.at({0, 0, t * st, h * ss, w * ss, d * ss});
    }
  }
  const auto x = Tensor<double>::randn({2, 3, 7, 5, 6, 4}, 50);
  const Conv4DKernel<double> zero{Tensor<double>({4, 3, 3, 3, 3, 3}),
                                  Tensor<double>({4}, std::vector<double>{0.25, -1.5, 3.0, 0.0})};
  for (std::size_t ss : {1, 2}) {
    const auto z = conv4d(x, zero, {2, ss});
    const std::size_t per = z.numel() / (2 * 4);
    for (std::size_t i = 0; i < z.numel(); ++i) zero_ok = zero_ok && z[i] == zero.bias[(i / per) % 4];
  }
  return {frame_ok && ident_ok && zero_ok,
          fmt("k_t=1 frame-wise conv3d bitwise %s (%zu frames), identity kernels %s, zero kernels give bias %s",
              frame_ok ? "yes" : "NO", frames_checked, ident_ok ? "yes" : "NO", zero_ok ? "yes" : "NO")};
}

Outcome gradient_suite() {
  Clock clock;
  const auto results = run_grad_suite();
  double worst = 0;
  std::string worst_op;
  bool shapes_ok = true;
  for (const auto& r : results) {
    if (r.worst > worst) {
      worst = r.worst;
      worst_op = r.op;
    }
    shapes_ok = shapes_ok && r.shapes >= 3;
  }
  const double secs = clock.seconds();
  return {worst <= 1e-4 && shapes_ok && secs < 300,
          fmt("%zu ops x >=3 shapes, worst relative error %.2e (%s), tol 1e-4, %.1f s (limit 300 s)", results.size(),
              worst, worst_op.c_str(), secs)};
}

Outcome attention_invariants() {
  struct Case {
    std::size_t cin, cout, stride, depth, units;
    Shape x;
  };
  const Case cases[] = {{2, 3, 1, 1, 2, {2, 2, 6, 5, 4}},
                        {2, 4, 2, 1, 2, {2, 2, 7, 6, 5}},
                        {3, 3, 1, 2, 1, {2, 3, 8, 8, 9}},
                        {1, 2, 2, 2, 2, {3, 1, 9, 8, 8}}};
  bool range_ok = true, zero_ok = true, ratio_ok = true, record_ok = true;
  double amin = 1, amax = 0, rmin = 2, rmax = 1;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < std::size(cases); ++i) {
    const Case& c = cases[i];
    Rng rng(100 + i);
    auto p = make_attention_module<double>(i + 1, c.cin, c.cout, c.stride, c.depth, c.units, rng);
    const auto x = Tensor<double>::randn(c.x, 200 + i);
    for (int warm = 0; warm < 30; ++warm) attention_module(x, p, Mode::train);
    Tape<double> tape(false);
    ParamBinder<double> bind(tape);
    const auto m = main_branch(tape.constant(x), p, bind, Mode::infer).value();

    std::vector<AttentionRecord<double>> sink;
    const auto y = attention_module(x, p, Mode::infer);
    const auto y_rec = attention_module(x, p, Mode::infer, &sink);
    record_ok = record_ok && bitwise_equal(y, y_rec) && sink.size() == 1;
    for (double a : sink.at(0).A.values()) {
      range_ok = range_ok && a > 0 && a < 1;
      amin = std::min(amin, a);
      amax = std::max(amax, a);
    }
    AttentionHooks<double> zero;
    zero.constant_mask = 0.0;
    zero_ok = zero_ok && bitwise_equal(attention_module(x, p, Mode::infer, nullptr, zero), m);
    for (std::size_t k = 0; k < y.numel(); ++k) {
      if (m[k] == 0.0) continue;
      const double r = y[k] / m[k];
      ratio_ok = ratio_ok && r > 1 && r < 2;
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      ++nonzero;
    }
    auto q = p;
    std::vector<AttentionRecord<double>> s2;
    record_ok = record_ok && bitwise_equal(attention_module(x, p, Mode::train), attention_module(x, q, Mode::train, &s2));
  }
  return {range_ok && zero_ok && ratio_ok && record_ok && nonzero > 0,
          fmt("A in [%.3g, %.3g] strictly inside (0,1): %s; A=0 hook bitwise M: %s; y/M in [%.6g, %.6g] over %zu "
              "voxels: %s; recording bitwise neutral: %s",
              amin, amax, range_ok ? "yes" : "NO", zero_ok ? "yes" : "NO", rmin, rmax, nonzero,
              ratio_ok ? "yes" : "NO", record_ok ? "yes" : "NO")};
}

Outcome learnability(Desk& desk) {
  Trained& t = desk.attention_model();
  const double first_val = t.training.history.front().val_loss, last_val = t.training.history.back().val_loss;

  PhantomSpec null_spec = desk.spec();
  null_spec.snr = 0;
  null_spec.blocks_per_subject_per_class = 3;
  const fs::path null_dir = desk.work() / "desk_null";
  fs::remove_all(null_dir);
  const auto null_manifest = phantom_generate(null_spec, null_dir);
  TrainConfig null_cfg = desk.train_cfg();
  null_cfg.epochs = 20;
  const auto null_split = make_splits(null_manifest, null_cfg.num_folds, 0, null_cfg.split_seed);
  const Trained n = Desk::fit(desk.model_cfg(), null_dir, null_manifest, null_split, null_cfg);
  const double chance = 1.0 / 7;
  const bool acc_ok = t.report.accuracy >= 0.95;
  const bool null_ok = std::abs(n.report.accuracy - chance) <= 0.1;
  return {acc_ok && null_ok && last_val < first_val,
          fmt("voted test accuracy %.4f on %zu instances (need >= 0.95), %.0f s for %zu epochs (target < 1200 s); "
              "val loss %.4f -> %.4f; snr=0 control %.4f on %zu instances (need %.3f +- 0.1)",
              t.report.accuracy, t.report.instances, t.seconds, t.training.history.size(), first_val, last_val,
              n.report.accuracy, n.report.instances, chance)};
}

Outcome variant_ordering(Desk& desk) {
  Trained& att = desk.attention_model();
  ModelConfig plain_cfg = desk.model_cfg();
  plain_cfg.variant = Variant::resnet4d;
  const Trained plain = Desk::fit(plain_cfg, desk.data(), desk.manifest(), desk.split(), desk.train_cfg());

  const PhantomSpec tspec = read_json(kConfigs / "phantom_temporal.json").get<PhantomSpec>();
  const fs::path tdir = desk.work() / "temporal";
  fs::remove_all(tdir);
  const auto tman = phantom_generate(tspec, tdir);
  const TrainConfig tc = desk.train_cfg();
  const auto tsplit = make_splits(tman, tc.num_folds, 0, tc.split_seed);
  ModelConfig k5 = plain_cfg;
  k5.num_classes = tspec.num_classes;
  k5.kernel_t = 5;
  ModelConfig k1 = k5;
  k1.kernel_t = 1;
  const Trained long_k = Desk::fit(k5, tdir, tman, tsplit, tc);
  const Trained short_k = Desk::fit(k1, tdir, tman, tsplit, tc);
  const bool att_ok = att.report.accuracy >= plain.report.accuracy - 0.02;
  const bool kernel_ok = long_k.report.accuracy >= short_k.report.accuracy;
  return {att_ok && kernel_ok,
          fmt("resnet4d_att %.4f vs resnet4d %.4f (need att >= plain - 0.02); temporal-only set (%zu classes, "
              "%zu instances): k_t=5 %.4f vs k_t=1 %.4f (need >=), best val loss %.4f vs %.4f",
              att.report.accuracy, plain.report.accuracy, tspec.num_classes, long_k.report.instances,
              long_k.report.accuracy, short_k.report.accuracy, long_k.training.best_val_loss,
              short_k.training.best_val_loss)};
}

Outcome mask_concentration(Desk& desk) {
  Trained& t = desk.attention_model();
  const auto regions = phantom_regions(desk.spec());
  const Extents3 e = desk.spec().extents;
  const auto masks = extract_masks(t.model, desk.manifest(), desk.data(), desk.split(), {3}, desk.train_cfg());
  const std::size_t C = regions.size(), vol = e.volume();
  std::map<std::size_t, std::vector<const MaskVolume*>> by_channel;
  for (const auto& mv : masks) by_channel[mv.channel].push_back(&mv);
  // channel mean of A_k, and channel mean of |A_kc - mean_j A_jc|
  std::vector<std::vector<double>> mean(C, std::vector<double>(vol, 0.0)), dev = mean;
  for (const auto& [ch, per_class] : by_channel) {
    std::vector<double> grand(vol, 0.0);
    for (const auto* mv : per_class)
      for (std::size_t i = 0; i < vol; ++i) grand[i] += mv->a_mean[i] / C;
    for (const auto* mv : per_class) {
      for (std::size_t i = 0; i < vol; ++i) {
        mean[mv->class_label][i] += mv->a_mean[i] / by_channel.size();
        dev[mv->class_label][i] += std::abs(mv->a_mean[i] - grand[i]) / by_channel.size();
      }
    }
  }
  std::size_t concentrated = 0, contrast = 0;
  std::string per_class;
  for (std::size_t k = 0; k < C; ++k) {
    double in = 0, out = 0, cin = 0, cout = 0;
    std::size_t nin = 0, nout = 0;
    for (std::size_t h = 0; h < e.h; ++h)
      for (std::size_t w = 0; w < e.w; ++w)
        for (std::size_t d = 0; d < e.d; ++d) {
          const auto& r = regions[k];
          const double dist2 = std::pow(h - r.center[0], 2) + std::pow(w - r.center[1], 2) + std::pow(d - r.center[2], 2);
          const std::size_t i = (h * e.w + w) * e.d + d;
                    if (dist2 <= r.radius * r.radius) {
            in += mean[k][i];
            cin += dev[k][i];
            ++nin;
          } else {
            out += mean[k][i];
            cout += dev[k][i];
            ++nout;
          }
        }
    const bool hit = in / nin > out / nout;
    concentrated += hit;
    contrast += cin / nin > cout / nout;
    per_class += fmt(" %zu:%.3f/%.3f", k, in / nin, out / nout);
  }
  return {concentrated >= 6,
          fmt("stage-3 channel-mean A_mean inside > outside for %zu/%zu classes (need >= 6) [in/out%s]; "
              "diagnostic, channel-mean |A_kc - class average| inside > outside for %zu/%zu",
              concentrated, C, per_class.c_str(), contrast, C)};
}

Outcome transfer(Desk& desk) {
  const fs::path ckpt = desk.attention_ckpt();
  const PhantomSpec tspec = read_json(kConfigs / "phantom_trait.json").get<PhantomSpec>();
  const fs::path dir = desk.work() / "trait";
  fs::remove_all(dir);
  const auto man = phantom_generate(tspec, dir);
  const TrainConfig tc = desk.train_cfg();
  const auto split = make_splits(man, tc.num_folds, 0, tc.split_seed);

  Model<float>& src = desk.attention_model().model;
  auto fresh = prepare_transfer<float>(ckpt, {HeadKind::regress, 1}, tspec.extents, tc.seed);
  auto a = src.named_tensors(), b = fresh.named_tensors();
  bool body_equal = a.size() == b.size(), head_differs = false;
  for (std::size_t i = 0; body_equal && i < a.size(); ++i) {
    if (Model<float>::is_head_tensor(a[i].first)) {
      head_differs = head_differs || !bitwise_equal(*a[i].second, *b[i].second);
    } else {
      body_equal = a[i].first == b[i].first && bitwise_equal(*a[i].second, *b[i].second);
    }
  }
  const auto r = transfer_fit<float>(ckpt, man, dir, split, {HeadKind::regress, 1}, tc);
  const SpearmanResult& s = *r.correlation;
  return {body_equal && head_differs && s.r_s > 0 && s.p_perm < 0.05,
          fmt("held-out Spearman r_s %.4f, p_perm %.4g over %zu test blocks (need r_s > 0, p < 0.05); body bitwise "
              "equal after load: %s; head differs: %s",
              s.r_s, s.p_perm, s.n, body_equal ? "yes" : "NO", head_differs ? "yes" : "NO")};
}

Outcome protocol(Desk& desk) {
  // LR trace over a synthetic loss sequence
  LrSchedule sched;
  std::vector<double> losses;
  for (int i = 0; i < 8; ++i) losses.push_back(2.0 - 0.1 * i);
  for (int i = 0; i < 40; ++i) losses.push_back(1.3);
  for (int i = 0; i < 6; ++i) losses.push_back(1.0 - 0.1 * i);
  for (int i = 0; i < 20; ++i) losses.push_back(0.5 + 0.5e-4 * (i % 2));
  std::vector<double> lr{sched.lr};
  for (double l : losses) lr.push_back(sched.update(l));
  std::vector<std::size_t> decays;
  bool lr_ok = true;
  for (std::size_t i = 1; i < lr.size(); ++i) {
    if (lr[i] > lr[i - 1]) lr_ok = false;
    if (lr[i] < lr[i - 1]) {
      decays.push_back(i);
      lr_ok = lr_ok && std::abs(lr[i - 1] / lr[i] - 5.0) < 1e-12;
    }
  }
  // last improvement after loss #8, then decays 15 and 30 epochs later, one
  // 15 epochs after the drop that ends at loss #54
  lr_ok = lr_ok && decays == std::vector<std::size_t>{23, 38, 69};

  // subject-disjoint 70/10/20 splits
  bool split_ok = true;
  auto check_splits = [&](const DatasetManifest& m) {
    const double n = static_cast<double>(m.subjects().size());
    std::set<std::string> tests;
    for (std::size_t k = 0; k < 5; ++k) {
      const auto p = make_splits(m, 5, k, 0);
      audit_split(p);
      split_ok = split_ok && std::abs(p.train.size() - 0.7 * n) <= 1 && std::abs(p.val.size() - 0.1 * n) <= 1 &&
                 std::abs(p.test.size() - 0.2 * n) <= 1 && p.train.size() + p.val.size() + p.test.size() == n;
      tests.insert(p.test.begin(), p.test.end());
    }
    split_ok = split_ok && tests.size() == m.subjects().size();
  };
  check_splits(desk.manifest());
  for (std::size_t n = 10; n <= 60; ++n) {
    DatasetManifest m;
    m.class_names = {"a"};
    for (std::size_t s = 0; s < n; ++s) m.entries.push_back({"x", "s" + std::to_string(s), 0, {}, 20});
    check_splits(m);
  }

  // bitwise reproducible loss history
  TrainConfig short_cfg = desk.train_cfg();
  short_cfg.epochs = 2;
  auto m1 = Model<float>::build(desk.model_cfg());
  auto m2 = Model<float>::build(desk.model_cfg());
  const auto h1 = train(m1, desk.manifest(), desk.data(), desk.split(), short_cfg).history;
  const auto h2 = train(m2, desk.manifest(), desk.data(), desk.split(), short_cfg).history;
  bool repro = h1.size() == h2.size();
  for (std::size_t i = 0; repro && i < h1.size(); ++i) {
    repro = h1[i].train_loss == h2[i].train_loss && h1[i].val_loss == h2[i].val_loss && h1[i].lr == h2[i].lr;
  }

  // checkpoint round trip
  const fs::path ck = desk.work() / "roundtrip.sd4d";
  save_checkpoint(m1, ck);
  auto back = load_checkpoint<float>(ck);
  const auto x = Tensor<float>::randn({3, 1, 15, 16, 20, 18}, 5);
  const bool ck_ok = bitwise_equal(m1.forward(x, Mode::infer).output, back.forward(x, Mode::infer).output);

  return {lr_ok && split_ok && repro && ck_ok,
          fmt("lr decays exactly /5 at epochs %s: %s; 5-fold splits disjoint 70/10/20 +-1 (N=20 and N=10..60): %s; "
              "loss history bitwise reproducible: %s; checkpoint round trip bitwise: %s",
              [&] {
                std::string s;
                for (auto d : decays) s += (s.empty() ? "" : ",") + std::to_string(d);
                return s;
              }()
                  .c_str(),
              lr_ok ? "yes" : "NO", split_ok ? "yes" : "NO", repro ? "yes" : "NO", ck_ok ? "yes" : "NO")};
}

double rank_pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& x) {
    std::vector<long double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      long double less = 0, equal = 0;
      for (double y : x) {
        less += y < x[i];
        equal += y == x[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const long double n = a.size();
  long double ma = 0, mb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

Outcome spearman_oracle() {
  Rng rng(31);
  std::uniform_int_distribution<int> len(3, 60), level(0, 4);
  std::normal_distribution<double> z;
  double worst = 0, worst_mono = 0;
  std::size_t tied = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = trial % 2 == 0 ? level(rng) : z(rng);
      b[i] = trial % 5 < 2 ? level(rng) : 0.5 * a[i] + z(rng);
    }
    a[0] = -10;
    b[1] = 10;
    tied += std::set<double>(a.begin(), a.end()).size() < n || std::set<double>(b.begin(), b.end()).size() < n;
    const double r = spearman(a, b, 0).r_s;
    worst = std::max(worst, std::abs(r - rank_pearson_oracle(a, b)));
    std::vector<double> a3(a), be(b);
    for (auto& v : a3) v = v * v * v;
    for (auto& v : be) v = std::exp(0.3 * v) - 4;
    worst_mono = std::max({worst_mono, std::abs(spearman(a3, b, 0).r_s - r), std::abs(spearman(a, be, 0).r_s - r)});
  }
  return {worst <= 1e-12 && worst_mono <= 1e-12 && tied > 0,
          fmt("50 random vectors (%zu with ties): max |spearman - oracle| %.2e (tol 1e-12); monotone transform "
              "change %.2e",
              tied, worst, worst_mono)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string only;
  fs::path work = fs::temp_directory_path() / "spatiodec_acceptance";
  app.add_option("--only", only, "Comma-separated criterion numbers");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (!tok.empty()) selected.insert(std::stoi(tok));
  }
  fs::create_directories(work);
  Desk desk(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle equivalence", oracle_equivalence},
      {"degenerate identities", degenerate_identities},
      {"gradient suite", gradient_suite},
      {"attention invariants", attention_invariants},
      {"desk learnability", [&] { return learnability(desk); }},
      {"variant ordering", [&] { return variant_ordering(desk); }},
      {"mask concentration", [&] { return mask_concentration(desk); }},
      {"transfer", [&] { return transfer(desk); }},
      {"protocol conformance", [&] { return protocol(desk); }},
      {"spearman oracle", spearman_oracle},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    Clock clock;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d %-22s %s  %s (%.1f s)\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), clock.seconds());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
