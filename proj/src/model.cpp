#include "spatiodec/model.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>
#include <set>

#include "spatiodec/ops.hpp"

namespace spatiodec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and volume I/O assume a little-endian host");

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::resnet4d_att: return "resnet4d_att";
    case Variant::resnet4d: return "resnet4d";
    case Variant::resnet3d_att: return "resnet3d_att";
  }
  return "?";
}

std::string to_string(HeadKind h) { return h == HeadKind::classify ? "classify" : "regress"; }

Variant parse_variant(const std::string& s) {
  if (s == "resnet4d_att") return Variant::resnet4d_att;
  if (s == "resnet4d") return Variant::resnet4d;
  if (s == "resnet3d_att") return Variant::resnet3d_att;
  throw ConfigError("unknown variant '" + s + "'");
}

HeadKind parse_head(const std::string& s) {
  if (s == "classify") return HeadKind::classify;
  if (s == "regress") return HeadKind::regress;
  throw ConfigError("unknown head '" + s + "'");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"variant", to_string(c.variant)},
           {"stem_channels", c.stem_channels},
           {"kernel_t", c.kernel_t},
           {"kernel_s", c.kernel_s},
           {"temporal_stride", c.conv4d.temporal_stride},
           {"spatial_stride", c.conv4d.spatial_stride},
           {"stage_channels", c.stage_channels},
           {"stage_strides", c.stage_strides},
           {"pool_depths", c.pool_depths},
           {"res_units", c.res_units},
           {"num_classes", c.num_classes},
           {"head", to_string(c.head)},
           {"frames", c.frames},
           {"extents", {c.extents.h, c.extents.w, c.extents.d}},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  static const std::set<std::string> known = {
      "variant", "stem_channels", "kernel_t", "kernel_s", "temporal_stride",
      "spatial_stride", "stage_channels", "stage_strides", "pool_depths", "res_units",
      "num_classes", "head", "frames", "extents", "seed"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError("unknown model config key '" + it.key() + "'");
  }
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("head")) c.head = parse_head(j.at("head").get<std::string>());
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) j.at(key).get_to(dst);
    };
    get("stem_channels", c.stem_channels);
    get("kernel_t", c.kernel_t);
    get("kernel_s", c.kernel_s);
    get("temporal_stride", c.conv4d.temporal_stride);
    get("spatial_stride", c.conv4d.spatial_stride);
    get("stage_channels", c.stage_channels);
    get("stage_strides", c.stage_strides);
    get("pool_depths", c.pool_depths);
    get("res_units", c.res_units);
    get("num_classes", c.num_classes);
    get("frames", c.frames);
    get("seed", c.seed);
    if (j.contains("extents")) {
      auto e = j.at("extents").get<std::array<std::size_t, 3>>();
      c.extents = {e[0], e[1], e[2]};
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

namespace {

std::size_t flat_channels(const ModelConfig& c) {
  return c.stem_channels * conv4d_out_frames(c.frames, c.kernel_t, c.conv4d.temporal_stride);
}

void validate(const ModelConfig& c) {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be >= 1");
  };
  positive(c.stem_channels, "stem_channels");
  positive(c.kernel_t, "kernel_t");
  positive(c.res_units, "res_units");
  positive(c.num_classes, "num_classes");
  positive(c.frames, "frames");
  positive(c.conv4d.temporal_stride, "temporal_stride");
  positive(c.conv4d.spatial_stride, "spatial_stride");
  positive(c.extents.h, "extents");
  positive(c.extents.w, "extents");
  positive(c.extents.d, "extents");
  if (c.kernel_s % 2 == 0) throw ConfigError("kernel_s must be odd");
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string stage = "stage " + std::to_string(k + 1);
    if (c.stage_channels[k] == 0) throw ConfigError(stage + ": channels must be >= 1");
    if (c.stage_strides[k] != 1 && c.stage_strides[k] != 2) {
      throw ConfigError(stage + ": stride must be 1 or 2");
    }
    if (c.pool_depths[k] == 0) throw ConfigError(stage + ": pooling depth must be >= 1");
  }
}

Extents3 strided(const Extents3& e, std::size_t s) {
  return {ceil_div(e.h, s), ceil_div(e.w, s), ceil_div(e.d, s)};
}

std::size_t res_unit_params(std::size_t cin, std::size_t cout, std::size_t stride) {
  std::size_t n = 2 * cin + 27 * cin * cout + 2 * cout + 27 * cout * cout + cout;
  if (cin != cout || stride != 1) n += cin * cout + cout;
  return n;
}

}  // namespace

std::vector<LayerShape> shape_audit(const ModelConfig& c, std::size_t n) {
  validate(c);
  std::vector<LayerShape> out;
  const Extents3 in = c.extents;
  out.push_back({"input", {n, 1, c.frames, in.h, in.w, in.d}});
  if (c.frames < c.kernel_t) {
    throw ConfigError("stem: " + std::to_string(c.frames) + " frames shorter than kernel_t " +
                      std::to_string(c.kernel_t));
  }
  const std::size_t frames_out = conv4d_out_frames(c.frames, c.kernel_t, c.conv4d.temporal_stride);
  Extents3 e = strided(in, c.conv4d.spatial_stride);
  const std::size_t cf = c.stem_channels * frames_out;
  if (c.variant == Variant::resnet3d_att) {
    out.push_back({"stem", {n, cf, e.h, e.w, e.d}});
  } else {
    out.push_back({"stem", {n, c.stem_channels, frames_out, e.h, e.w, e.d}});
    out.push_back({"flatten", {n, cf, e.h, e.w, e.d}});
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (c.has_attention()) {
      try {
        check_branch_depth(e, c.pool_depths[k], k + 1);
      } catch (const DepthError& err) {
        throw ConfigError(err.what());
      }
    }
    e = strided(e, c.stage_strides[k]);
    out.push_back({"stage" + std::to_string(k + 1), {n, c.stage_channels[k], e.h, e.w, e.d}});
  }
  out.push_back({"pool", {n, c.stage_channels[3]}});
  out.push_back({"head", {n, c.head_outputs()}});
  return out;
}

std::size_t parameter_count(const ModelConfig& c) {
  shape_audit(c);
  const std::size_t k3 = c.kernel_s * c.kernel_s * c.kernel_s;
  const std::size_t cf = flat_channels(c);
  std::size_t total = c.variant == Variant::resnet3d_att ? cf * c.frames * k3 + cf
                                                          : c.stem_channels * c.kernel_t * k3 + c.stem_channels;
  std::size_t cin = cf;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t co = c.stage_channels[k];
    const std::size_t p = c.pool_depths[k];
    total += res_unit_params(cin, co, c.stage_strides[k]);
    total += (c.res_units - 1) * res_unit_params(co, co, 1);
    if (c.has_attention()) {
      total += res_unit_params(cin, co, 1) + (p - 1) * res_unit_params(co, co, 1);
      total += p * res_unit_params(co, co, 1);
      total += (p - 1) * res_unit_params(co, co, 1);
      total += co * co + co;
    }
    cin = co;
  }
  total += 2 * cin;
  total += c.head_outputs() * cin + c.head_outputs();
  return total;
}

Vote vote(const std::vector<std::vector<double>>& window_probs) {
  if (window_probs.empty()) throw EvalError("cannot vote over an empty instance");
  const std::size_t C = window_probs.front().size();
  Vote v;
  v.summed_probs.assign(C, 0.0);
  std::vector<std::size_t> counts(C, 0);
  for (const auto& p : window_probs) {
    if (p.size() != C) throw ShapeError("vote: windows disagree on class count");
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    v.window_labels.push_back(best);
    ++counts[best];
    for (std::size_t k = 0; k < C; ++k) v.summed_probs[k] += p[k];
  }
  for (std::size_t k = 1; k < C; ++k) {
    const std::size_t b = v.label;
    if (counts[k] > counts[b] || (counts[k] == counts[b] && v.summed_probs[k] > v.summed_probs[b])) {
      v.label = k;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg) {
  shape_audit(cfg);
  Model m;
  m.cfg_ = cfg;
  Rng rng(cfg.seed);
  const std::size_t ks = cfg.kernel_s, k3 = ks * ks * ks;
  const std::size_t cf = flat_channels(cfg);
  if (cfg.variant == Variant::resnet3d_att) {
    m.stem3d_.weights = he_normal<T>({cf, cfg.frames, ks, ks, ks}, cfg.frames * k3, rng);
    m.stem3d_.bias = Tensor<T>::zeros({cf});
    m.stem3d_.spatial_stride = cfg.conv4d.spatial_stride;
  } else {
    m.stem4d_.weights =
        he_normal<T>({cfg.stem_channels, 1, cfg.kernel_t, ks, ks, ks}, cfg.kernel_t * k3, rng);
    m.stem4d_.bias = Tensor<T>::zeros({cfg.stem_channels});
  }
  std::size_t cin = cf;
  for (std::size_t k = 0; k < 4; ++k) {
    auto stage = make_attention_module<T>(k + 1, cin, cfg.stage_channels[k], cfg.stage_strides[k],
                                          cfg.pool_depths[k], cfg.res_units, rng);
    if (!cfg.has_attention()) {
      stage.att_down.clear();
      stage.att_up.clear();
      stage.shortcuts.clear();
    }
    m.stages_.push_back(std::move(stage));
    cin = cfg.stage_channels[k];
  }
  m.final_norm_ = NormParams<T>::identity(cin);
  m.reinit_head(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  return m;
}

template <typename T>
void Model<T>::reinit_head(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t c = cfg_.stage_channels[3];
  head_w_ = he_normal<T>({cfg_.head_outputs(), c}, c, rng);
  head_b_ = Tensor<T>::zeros({cfg_.head_outputs()});
}

template <typename T>
template <typename Fn>
void Model<T>::visit(Fn&& fn) {
  if (cfg_.variant == Variant::resnet3d_att) {
    fn("stem.weight", stem3d_.weights, TensorRole::trainable);
    fn("stem.bias", stem3d_.bias, TensorRole::trainable);
  } else {
    fn("stem.weight", stem4d_.weights, TensorRole::trainable);
    fn("stem.bias", stem4d_.bias, TensorRole::trainable);
  }
  for (auto& s : stages_) {
    visit_tensors(s, "stage" + std::to_string(s.stage) + "/", fn, cfg_.has_attention());
  }
  fn("final_norm.gamma", final_norm_.gamma, TensorRole::trainable);
  fn("final_norm.beta", final_norm_.beta, TensorRole::trainable);
  fn("final_norm.running_mean", final_norm_.running_mean, TensorRole::running_stat);
  fn("final_norm.running_var", final_norm_.running_var, TensorRole::running_stat);
  fn("head.weight", head_w_, TensorRole::trainable);
  fn("head.bias", head_b_, TensorRole::trainable);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::named_tensors(bool include_running) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  visit([&](const std::string& name, Tensor<T>& t, TensorRole role) {
    if (include_running || role == TensorRole::trainable) out.emplace_back(name, &t);
  });
  return out;
}

template <typename T>
Var<T> Model<T>::forward(const Var<T>& batch, const ParamBinder<T>& bind, Mode mode,
                         std::vector<AttentionRecord<T>>* records,
                         const AttentionHooks<T>& hooks) {
  const Shape& s = batch.shape();
  const Shape want{cfg_.frames, cfg_.extents.h, cfg_.extents.w, cfg_.extents.d};
  if (s.size() != 6 || s[1] != 1 || Shape(s.begin() + 2, s.end()) != want) {
    throw ShapeError("model expects [n, 1, " + std::to_string(cfg_.frames) + ", " +
                     cfg_.extents.str() + "] input, got " + shape_str(s));
  }
  Var<T> h;
  if (cfg_.variant == Variant::resnet3d_att) {
    Var<T> x = reshape(batch, {s[0], s[2], s[3], s[4], s[5]});
    h = conv3d(x, bind(stem3d_.weights), bind(stem3d_.bias), stem3d_.spatial_stride,
               Padding::same_zero);
  } else {
    h = temporal_flatten(conv4d(batch, bind(stem4d_.weights), bind(stem4d_.bias), cfg_.conv4d));
  }
  for (auto& stage : stages_) {
    h = attention_module(h, stage, bind, mode, records, hooks, cfg_.has_attention());
  }
  NormState<T> st{&final_norm_.running_mean, &final_norm_.running_var, final_norm_.momentum,
                  final_norm_.epsilon};
  h = relu(batch_norm(h, bind(final_norm_.gamma), bind(final_norm_.beta), st, mode));
  return dense(global_avg_pool(h), bind(head_w_), bind(head_b_));
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& batch, Mode mode, bool record_masks,
                                   const AttentionHooks<T>& hooks) {
  Tape<T> tape(false);
  ParamBinder<T> bind(tape);
  ForwardResult<T> r;
  r.output = forward(tape.constant(batch), bind, mode, record_masks ? &r.records : nullptr, hooks)
                 .value();
  return r;
}

template <typename T>
Vote Model<T>::predict_instance(const Tensor<T>& windows) {
  if (windows.rank() != 6 || windows.extent(0) == 0) {
    throw EvalError("predict_instance needs windows [k, 1, l, H, W, D] with k >= 1");
  }
  const Tensor<T> probs = softmax_rows(forward(windows, Mode::infer).output);
  const std::size_t k = probs.extent(0), C = probs.extent(1);
  std::vector<std::vector<double>> rows(k, std::vector<double>(C));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = 0; c < C; ++c) rows[i][c] = probs[i * C + c];
  }
  return vote(rows);
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {

constexpr char kMagic[4] = {'S', 'D', '4', 'D'};

template <typename T>
const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

struct IndexEntry {
  std::string dtype;
  Shape shape;
  std::size_t offset = 0;
  std::size_t nbytes = 0;
};

struct ParsedCheckpoint {
  ModelConfig config;
  std::map<std::string, IndexEntry> entries;
  std::vector<char> blob;
};

ParsedCheckpoint parse_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "corrupt checkpoint " + path.string();
  if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw CheckpointError(where + ": bad magic");
  }
  std::uint32_t version = 0;
  std::uint64_t index_len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&index_len, bytes.data() + 8, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (index_len > bytes.size() - 16) throw CheckpointError(where + ": truncated index");
  ParsedCheckpoint pc;
  try {
    const json idx = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(index_len));
    pc.config = idx.at("config").get<ModelConfig>();
    for (const auto& t : idx.at("tensors")) {
      IndexEntry e{t.at("dtype").get<std::string>(), t.at("shape").get<Shape>(),
                   t.at("offset").get<std::size_t>(), t.at("nbytes").get<std::size_t>()};
      pc.entries[t.at("name").get<std::string>()] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(where + ": unreadable index (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError(where + ": " + e.what());
  }
  pc.blob.assign(bytes.begin() + 16 + static_cast<long>(index_len), bytes.end());
  for (const auto& [name, e] : pc.entries) {
    const std::size_t width = e.dtype == "f32" ? 4 : e.dtype == "f64" ? 8 : 0;
    if (width == 0) throw CheckpointError(where + ": tensor " + name + " has dtype " + e.dtype);
    if (e.nbytes != width * shape_numel(e.shape) || e.offset + e.nbytes > pc.blob.size()) {
      throw CheckpointError(where + ": tensor " + name + " truncated");
    }
  }
  return pc;
}

template <typename T>
void copy_entry(const ParsedCheckpoint& pc, const IndexEntry& e, Tensor<T>& dst) {
  const char* src = pc.blob.data() + e.offset;
  const std::size_t n = dst.numel();
  if (e.dtype == dtype_name<T>()) {
    std::memcpy(dst.ptr(), src, n * sizeof(T));
  } else if (e.dtype == "f32") {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, src + 4 * i, 4);
      dst[i] = static_cast<T>(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, src + 8 * i, 8);
      dst[i] = static_cast<T>(v);
    }
  }
}

}  // namespace

template <typename T>
void save_checkpoint(Model<T>& m, const std::filesystem::path& path) {
  json tensors = json::array();
  std::size_t offset = 0;
  auto named = m.named_tensors();
  for (auto& [name, t] : named) {
    const std::size_t nbytes = t->numel() * sizeof(T);
    tensors.push_back({{"name", name}, {"dtype", dtype_name<T>()}, {"shape", t->shape()},
                       {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string index = json{{"config", m.config()}, {"tensors", tensors}}.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = index.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(index.data(), static_cast<std::streamsize>(index.size()));
  for (auto& [name, t] : named) {
    out.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(t->numel() * sizeof(T)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  return parse_checkpoint(path).config;
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  const ParsedCheckpoint pc = parse_checkpoint(path);
  Model<T> m = Model<T>::build(pc.config);
  for (auto& [name, t] : m.named_tensors()) {
    auto it = pc.entries.find(name);
    if (it == pc.entries.end()) throw CheckpointError("checkpoint is missing tensor " + name);
    if (it->second.shape != t->shape()) {
      throw CheckpointError("tensor " + name + " has shape " + shape_str(it->second.shape) +
                            ", model expects " + shape_str(t->shape()));
    }
    copy_entry(pc, it->second, *t);
  }
  return m;
}

template <typename T>
void load_body(Model<T>& m, const std::filesystem::path& path, bool allow_head_reinit) {
  const ParsedCheckpoint pc = parse_checkpoint(path);
  for (auto& [name, t] : m.named_tensors()) {
    auto it = pc.entries.find(name);
    const bool fits = it != pc.entries.end() && it->second.shape == t->shape();
    if (Model<T>::is_head_tensor(name)) {
      if (fits) {
        copy_entry(pc, it->second, *t);
      } else if (!allow_head_reinit) {
        throw CheckpointError("head tensor " + name + " does not match the checkpoint");
      }
      continue;
    }
    if (it == pc.entries.end()) throw TransferError("source checkpoint has no tensor " + name);
    if (!fits) {
      throw TransferError("tensor " + name + ": source shape " + shape_str(it->second.shape) +
                          " vs target " + shape_str(t->shape()));
    }
    copy_entry(pc, it->second, *t);
  }
}

#define SPATIODEC_INSTANTIATE(T)                                                        \
  template class Model<T>;                                                              \
  template void save_checkpoint(Model<T>&, const std::filesystem::path&);               \
  template Model<T> load_checkpoint<T>(const std::filesystem::path&);                   \
  template void load_body(Model<T>&, const std::filesystem::path&, bool);

SPATIODEC_INSTANTIATE(float)
SPATIODEC_INSTANTIATE(double)

#undef SPATIODEC_INSTANTIATE

}  // namespace spatiodec
