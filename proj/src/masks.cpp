#include "spatiodec/masks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace spatiodec {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::size_t> parse_stage_filter(const std::string& s) {
  if (s == "all") return {1, 2, 3, 4};
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '4') return {static_cast<std::size_t>(s[0] - '0')};
  throw ConfigError("stage must be 1..4 or 'all', got '" + s + "'");
}

template <typename T>
std::vector<MaskVolume> extract_masks(Model<T>& model, const DatasetManifest& manifest, const fs::path& root,
                                      const SplitPlan& split, const std::vector<std::size_t>& stages,
                                      const TrainConfig& cfg, const AttentionHooks<T>& hooks) {
  const ModelConfig& mc = model.config();
  if (!mc.has_attention()) throw NoAttentionError("variant " + to_string(mc.variant) + " has no attention masks");
  if (mc.head != HeadKind::classify) throw EvalError("mask extraction needs a classification model");
  if (mc.frames != cfg.window) throw ConfigError("window does not match the model's frame count");
  audit_split(split);
  for (std::size_t s : stages) {
    if (s < 1 || s > 4) throw ConfigError("stage index " + std::to_string(s) + " outside 1..4");
  }
  const auto idx = entries_for(manifest, split.test);
  if (idx.empty()) throw EvalError("test split has no blocks");

  struct Acc {
    std::vector<long double> a, logit;
    Shape shape;
    std::size_t count = 0;
  };
  std::map<std::pair<std::size_t, std::size_t>, Acc> acc;  // (stage, class)
  for (std::size_t i : idx) {
    const ManifestEntry& e = manifest.entries[i];
    if (!e.class_label || *e.class_label < 0 || static_cast<std::size_t>(*e.class_label) >= mc.num_classes) {
      throw LabelError("entry " + e.path + " has no usable class_label");
    }
    const std::size_t k = static_cast<std::size_t>(*e.class_label);
    const Tensor<float> windows = segment_windows(read_volume(root / e.path), cfg.window, cfg.eval_stride);
    const std::size_t nw = windows.extent(0), each = windows.numel() / nw;
    for (std::size_t s0 = 0; s0 < nw; s0 += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, nw - s0);
      Shape bs = windows.shape();
      bs[0] = n;
      Tensor<T> batch(bs);
      std::copy(windows.ptr() + s0 * each, windows.ptr() + (s0 + n) * each, batch.ptr());
      const auto r = model.forward(batch, Mode::infer, true, hooks);
      for (const auto& rec : r.records) {
        if (std::find(stages.begin(), stages.end(), rec.stage) == stages.end()) continue;
        Acc& a = acc[{rec.stage, k}];
        const std::size_t per = rec.A.numel() / n;
        if (a.a.empty()) {
          a.a.assign(per, 0.0L);
          a.logit.assign(per, 0.0L);
          a.shape = Shape(rec.A.shape().begin() + 1, rec.A.shape().end());
        }
        for (std::size_t w = 0; w < n; ++w) {
          for (std::size_t j = 0; j < per; ++j) {
            a.a[j] += rec.A[w * per + j];
            a.logit[j] += rec.pre_gate[w * per + j];
          }
        }
        a.count += n;
      }
    }
  }

  std::vector<MaskVolume> out;
  for (auto& [key, a] : acc) {
    Shape s{1};
    s.insert(s.end(), a.shape.begin(), a.shape.end());
    Tensor<double> am(s), lm(s);
    for (std::size_t j = 0; j < a.a.size(); ++j) {
      am[j] = static_cast<double>(a.a[j] / a.count);
      lm[j] = static_cast<double>(a.logit[j] / a.count);
    }
    const Tensor<double> au = trilinear_upsample(am, mc.extents);
    const Tensor<double> lu = trilinear_upsample(lm, mc.extents);
    const std::size_t vol = mc.extents.volume();
    for (std::size_t c = 0; c < a.shape[0]; ++c) {
      MaskVolume mv;
      mv.stage = key.first;
      mv.class_label = key.second;
      mv.channel = c;
      mv.sample_count = a.count;
      mv.a_mean = Tensor<double>({mc.extents.h, mc.extents.w, mc.extents.d});
      mv.logit_mean = Tensor<double>({mc.extents.h, mc.extents.w, mc.extents.d});
      std::copy(au.ptr() + c * vol, au.ptr() + (c + 1) * vol, mv.a_mean.ptr());
      std::copy(lu.ptr() + c * vol, lu.ptr() + (c + 1) * vol, mv.logit_mean.ptr());
      out.push_back(std::move(mv));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const MaskVolume& x, const MaskVolume& y) {
    return std::tie(x.stage, x.channel, x.class_label) < std::tie(y.stage, y.channel, y.class_label);
  });
  return out;
}

namespace {

Tensor<float> to_f32(const Tensor<double>& t) {
  Tensor<float> out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

void write_raw(const Tensor<float>& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ExportError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
  if (!out) throw ExportError("failed writing " + path.string());
}

std::pair<double, double> extrema(const Tensor<float>& t) {
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  return {*lo, *hi};
}

}  // namespace

Montage make_montage(const Tensor<float>& volume, double lo, double hi) {
  if (volume.rank() != 3) throw ShapeError("montage needs [H, W, D], got " + shape_str(volume.shape()));
  const std::size_t H = volume.extent(0), W = volume.extent(1), D = volume.extent(2);
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(D))));
  const std::size_t rows = (D + cols - 1) / cols;
  Montage m;
  m.width = cols * W;
  m.height = rows * H;
  m.pixels.assign(m.width * m.height, 0);
  const double span = hi - lo;
  for (std::size_t d = 0; d < D; ++d) {
    const std::size_t r0 = (d / cols) * H, c0 = (d % cols) * W;
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        const double v = volume[(h * W + w) * D + d];
        const double u = span > 0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
        m.pixels[(r0 + h) * m.width + c0 + w] = static_cast<unsigned char>(std::lround(255.0 * u));
      }
    }
  }
  return m;
}

Montage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  Montage m;
  int maxval = 0;
  in >> magic >> m.width >> m.height >> maxval;
  if (!in || magic != "P5" || maxval != 255) throw FormatError(path.string() + ": not an 8-bit P5 image");
  in.get();
  m.pixels.resize(m.width * m.height);
  in.read(reinterpret_cast<char*>(m.pixels.data()), static_cast<std::streamsize>(m.pixels.size()));
  if (!in) throw FormatError(path.string() + ": truncated image");
  return m;
}

MaskFiles export_mask(const MaskVolume& mv, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ExportError("cannot create " + out_dir.string() + ": " + ec.message());
  char stem[64];
  std::snprintf(stem, sizeof stem, "mask_s%zu_c%02zu_k%zu", mv.stage, mv.channel, mv.class_label);
  MaskFiles f{out_dir / (std::string(stem) + ".f32"), out_dir / (std::string(stem) + ".logit.f32"),
              out_dir / (std::string(stem) + ".json"), out_dir / (std::string(stem) + ".pgm")};
  const Tensor<float> a = to_f32(mv.a_mean), l = to_f32(mv.logit_mean);
  write_raw(a, f.raw);
  write_raw(l, f.logit_raw);
  const auto [amin, amax] = extrema(a);
  const auto [lmin, lmax] = extrema(l);
  const json side{{"shape", a.shape()},
                  {"dtype", "float32"},
                  {"byte_order", "little"},
                  {"stage", mv.stage},
                  {"channel", mv.channel},
                  {"class", mv.class_label},
                  {"sample_count", mv.sample_count},
                  {"min", amin},
                  {"max", amax},
                  {"logit_min", lmin},
                  {"logit_max", lmax},
                  {"raw", f.raw.filename().string()},
                  {"logit_raw", f.logit_raw.filename().string()},
                  {"montage", f.montage.filename().string()}};
  {
    std::ofstream out(f.sidecar, std::ios::trunc);
    if (!out) throw ExportError("cannot write " + f.sidecar.string());
    out << side.dump(2) << '\n';
  }
  const Montage m = make_montage(a, amin, amax);
  std::ofstream out(f.montage, std::ios::binary | std::ios::trunc);
  if (!out) throw ExportError("cannot write " + f.montage.string());
  out << "P5\n" << m.width << ' ' << m.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(m.pixels.data()), static_cast<std::streamsize>(m.pixels.size()));
  if (!out) throw ExportError("failed writing " + f.montage.string());
  return f;
}

Tensor<float> read_raw_f32(const fs::path& path, const Shape& shape) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Tensor<float> t(shape);
  in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
  if (in.gcount() != static_cast<std::streamsize>(t.numel() * 4) || in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": size does not match " + shape_str(shape));
  }
  return t;
}

template std::vector<MaskVolume> extract_masks<float>(Model<float>&, const DatasetManifest&, const fs::path&,
                                                      const SplitPlan&, const std::vector<std::size_t>&,
                                                      const TrainConfig&, const AttentionHooks<float>&);
template std::vector<MaskVolume> extract_masks<double>(Model<double>&, const DatasetManifest&, const fs::path&,
                                                       const SplitPlan&, const std::vector<std::size_t>&,
                                                       const TrainConfig&, const AttentionHooks<double>&);

}  // namespace spatiodec
