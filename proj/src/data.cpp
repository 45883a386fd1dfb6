#include "spatiodec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "spatiodec/parallel.hpp"

namespace spatiodec {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// volumes

namespace {

constexpr char kVolumeMagic[4] = {'V', '4', 'D', '1'};
constexpr std::uint32_t kDtypeF32 = 0;

}  // namespace

void write_volume(const Tensor<float>& t, const fs::path& path) {
  if (t.rank() != 4) throw ShapeError("volume must be [l, H, W, D], got " + shape_str(t.shape()));
  if (!t.all_finite()) throw FormatError("refusing to write non-finite values to " + path.string());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kVolumeMagic, 4);
  const std::uint32_t header[5] = {kDtypeF32, static_cast<std::uint32_t>(t.extent(0)),
                                   static_cast<std::uint32_t>(t.extent(1)),
                                   static_cast<std::uint32_t>(t.extent(2)),
                                   static_cast<std::uint32_t>(t.extent(3))};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
  if (!out) throw FormatError("failed writing " + path.string());
}

Tensor<float> read_volume(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open volume " + path.string());
  char magic[4];
  std::uint32_t header[5];
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kVolumeMagic)) {
    throw FormatError(path.string() + ": not a V4D1 volume");
  }
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in) throw FormatError(path.string() + ": truncated header");
  if (header[0] != kDtypeF32) throw FormatError(path.string() + ": unsupported dtype code");
  Shape shape{header[1], header[2], header[3], header[4]};
  if (shape_numel(shape) == 0) throw FormatError(path.string() + ": zero extent");
  Tensor<float> t(shape);
  in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
  if (in.gcount() != static_cast<std::streamsize>(t.numel() * 4)) {
    throw FormatError(path.string() + ": truncated payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  if (!t.all_finite()) throw FormatError(path.string() + ": non-finite payload");
  return t;
}

// ---------------------------------------------------------------------------
// manifest

std::vector<std::string> DatasetManifest::subjects() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.subject_id);
  return {s.begin(), s.end()};
}

void to_json(json& j, const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je{{"path", e.path}, {"subject_id", e.subject_id}, {"block_length", e.block_length}};
    if (e.class_label) je["class_label"] = *e.class_label;
    if (e.trait_value) je["trait_value"] = *e.trait_value;
    entries.push_back(std::move(je));
  }
  j = json{{"schema_version", m.schema_version},
           {"task", m.task},
           {"class_names", m.class_names},
           {"entries", entries}};
}

void from_json(const json& j, DatasetManifest& m) {
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kManifestSchema) {
      throw FormatError("manifest schema " + std::to_string(m.schema_version) + " unsupported");
    }
    m.task = j.value("task", std::string("classify"));
    if (m.task != "classify" && m.task != "regress") throw FormatError("manifest task '" + m.task + "'");
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.entries.clear();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.path = je.at("path").get<std::string>();
      e.subject_id = je.at("subject_id").get<std::string>();
      e.block_length = je.at("block_length").get<std::size_t>();
      if (je.contains("class_label")) e.class_label = je.at("class_label").get<int>();
      if (je.contains("trait_value")) e.trait_value = je.at("trait_value").get<double>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  const int C = static_cast<int>(m.class_names.size());
  for (const auto& e : m.entries) {
    if (e.subject_id.empty()) throw FormatError("manifest entry " + e.path + " has no subject_id");
    if (e.block_length == 0) throw FormatError("manifest entry " + e.path + " has zero block_length");
    const bool label_ok = e.class_label && *e.class_label >= 0 && *e.class_label < C;
    const bool trait_ok = e.trait_value && std::isfinite(*e.trait_value);
    if (!label_ok && !trait_ok) {
      throw FormatError("manifest entry " + e.path + " needs a class_label in [0, " +
                        std::to_string(C) + ") or a finite trait_value");
    }
  }
}

DatasetManifest read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  return j.get<DatasetManifest>();
}

void write_manifest(const DatasetManifest& m, const fs::path& root) {
  fs::create_directories(root);
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (root / "manifest.json").string());
  out << json(m).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// phantom spec

void to_json(json& j, const PhantomSpec& s) {
  json regions = json::array();
  for (const auto& r : s.regions) regions.push_back({{"center", r.center}, {"radius", r.radius}});
  j = json{{"num_classes", s.num_classes},
           {"num_subjects", s.num_subjects},
           {"blocks_per_subject_per_class", s.blocks_per_subject_per_class},
           {"extents", {s.extents.h, s.extents.w, s.extents.d}},
           {"block_lengths", s.block_lengths},
           {"regions", regions},
           {"hrf", {{"peak_time", s.hrf_peak}, {"undershoot", s.hrf_undershoot}}},
           {"snr", s.snr},
           {"subject_jitter", s.subject_jitter},
           {"trait_coupling", s.trait_coupling},
           {"trait_class", s.trait_class},
           {"class_periods", s.class_periods},
           {"class_names", s.class_names},
           {"seed", s.seed}};
}

void from_json(const json& j, PhantomSpec& s) {
  static const std::set<std::string> known = {
      "num_classes", "num_subjects", "blocks_per_subject_per_class", "extents", "block_lengths",
      "regions", "hrf", "snr", "subject_jitter", "trait_coupling", "trait_class", "class_periods",
      "class_names", "seed"};
  if (!j.is_object()) throw SpecError("phantom spec must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw SpecError("unknown phantom spec key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) j.at(key).get_to(dst);
    };
    get("num_classes", s.num_classes);
    get("num_subjects", s.num_subjects);
    get("blocks_per_subject_per_class", s.blocks_per_subject_per_class);
    if (j.contains("extents")) {
      auto e = j.at("extents").get<std::array<std::size_t, 3>>();
      s.extents = {e[0], e[1], e[2]};
    }
    if (j.contains("block_lengths")) {
      const auto& b = j.at("block_lengths");
      s.block_lengths = b.is_array() ? b.get<std::vector<std::size_t>>()
                                     : std::vector<std::size_t>{b.get<std::size_t>()};
    }
    if (j.contains("regions")) {
      s.regions.clear();
      for (const auto& r : j.at("regions")) {
        s.regions.push_back({r.at("center").get<std::array<double, 3>>(), r.value("radius", 2.5)});
      }
    }
    if (j.contains("hrf")) {
      s.hrf_peak = j.at("hrf").value("peak_time", s.hrf_peak);
      s.hrf_undershoot = j.at("hrf").value("undershoot", s.hrf_undershoot);
    }
    get("snr", s.snr);
    get("subject_jitter", s.subject_jitter);
    get("trait_coupling", s.trait_coupling);
    get("trait_class", s.trait_class);
    get("class_periods", s.class_periods);
    get("class_names", s.class_names);
    get("seed", s.seed);
  } catch (const json::exception& e) {
    throw SpecError(std::string("phantom spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// phantom generation

namespace {

const std::vector<std::string> kTaskNames = {"emotion", "gambling", "language", "motor",
                                             "relational", "social", "wm"};

std::size_t block_length_of(const PhantomSpec& s, std::size_t c) {
  return s.block_lengths.size() == 1 ? s.block_lengths[0] : s.block_lengths[c];
}

void validate(const PhantomSpec& s) {
  if (s.num_classes == 0 || s.num_subjects == 0 || s.blocks_per_subject_per_class == 0) {
    throw SpecError("phantom spec needs at least one class, subject and block");
  }
  if (s.block_lengths.size() != 1 && s.block_lengths.size() < s.num_classes) {
    throw SpecError("block_lengths must hold one value or one per class");
  }
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    if (block_length_of(s, c) == 0) throw SpecError("block length must be >= 1");
  }
  if (!std::isfinite(s.snr) || s.snr < 0) throw SpecError("snr must be finite and >= 0");
  if (s.subject_jitter < 0) throw SpecError("subject_jitter must be >= 0");
  if (s.hrf_peak <= 0) throw SpecError("hrf peak_time must be > 0");
  if (s.trait_class >= s.num_classes) throw SpecError("trait_class out of range");
  if (!s.class_periods.empty() && s.class_periods.size() != s.num_classes) {
    throw SpecError("class_periods must be empty or one per class");
  }
  if (!s.class_names.empty() && s.class_names.size() != s.num_classes) {
    throw SpecError("class_names must be empty or one per class");
  }
  if (!s.regions.empty() && s.regions.size() != s.num_classes) {
    throw SpecError("regions must be empty or one per class");
  }
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::seed_seq seq(parts.begin(), parts.end());
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

std::array<double, 3> subject_offset(const PhantomSpec& s, std::size_t subject) {
  Rng rng(mix_seed({s.seed, subject, 0x6a17}));
  std::uniform_real_distribution<double> u(-s.subject_jitter, s.subject_jitter);
  const double a = u(rng), b = u(rng), c = u(rng);
  return {a, b, c};
}

std::string subject_name(std::size_t s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub-%02zu", s);
  return buf;
}

double gamma_pdf(double t, double shape) {
  if (t <= 0) return 0.0;
  return std::exp((shape - 1) * std::log(t) - t - std::lgamma(shape));
}

}  // namespace

std::vector<PhantomRegion> phantom_regions(const PhantomSpec& spec) {
  validate(spec);
  std::vector<PhantomRegion> regions = spec.regions;
  if (regions.empty()) {
    if (spec.num_classes > 8) throw SpecError("default region layout holds at most 8 classes");
    const Extents3& e = spec.extents;
    auto at = [](std::size_t extent, int side) {
      const double mid = (static_cast<double>(extent) - 1) / 2;
      return mid + side * mid / 2;
    };
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const int sh = (c & 1) ? 1 : -1, sw = (c & 2) ? 1 : -1, sd = (c & 4) ? 1 : -1;
      regions.push_back({{at(e.h, sh), at(e.w, sw), at(e.d, sd)}, 2.5});
    }
  }
  for (std::size_t c = 0; c < regions.size(); ++c) {
    const auto& r = regions[c];
    if (r.radius <= 0) throw SpecError("region radius must be > 0");
    const double reach = r.radius + spec.subject_jitter;
    for (std::size_t a = 0; a < 3; ++a) {
      const double hi = static_cast<double>(spec.extents[a]) - 1;
      if (r.center[a] - reach < 0 || r.center[a] + reach > hi) {
        throw SpecError("region of class " + std::to_string(c) + " escapes the volume along axis " +
                        std::to_string(a));
      }
    }
  }
  return regions;
}

std::vector<double> hrf_kernel(double peak, double undershoot, std::size_t length) {
  const double a1 = peak + 1;      // gamma mode at `peak`
  const double a2 = 3 * peak + 1;  // undershoot mode at 3 * peak
  const double m1 = gamma_pdf(a1 - 1, a1), m2 = gamma_pdf(a2 - 1, a2);
  std::vector<double> h(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double x = static_cast<double>(t);
    h[t] = gamma_pdf(x, a1) / m1 - undershoot * gamma_pdf(x, a2) / m2;
  }
  const double top = *std::max_element(h.begin(), h.end());
  if (top > 0) {
    for (auto& v : h) v /= top;
  }
  return h;
}

std::vector<double> phantom_response(const PhantomSpec& spec, std::size_t c, std::size_t length) {
  const std::size_t period = spec.class_periods.empty() ? 0 : spec.class_periods.at(c);
  const std::vector<double> h = hrf_kernel(spec.hrf_peak, spec.hrf_undershoot, length);
  std::vector<double> r(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t tau = 0; tau <= t; ++tau) {
      const bool on = period == 0 || (tau % period) < (period + 1) / 2;
      if (on) r[t] += h[t - tau];
    }
  }
  const double top = *std::max_element(r.begin(), r.end());
  if (top > 0) {
    for (auto& v : r) v /= top;
  }
  return r;
}

std::vector<double> phantom_traits(const PhantomSpec& spec) {
  Rng rng(mix_seed({spec.seed, 0x7a17}));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> t(spec.num_subjects);
  for (auto& v : t) v = u(rng);
  return t;
}

DatasetManifest phantom_generate(const PhantomSpec& spec, const fs::path& out_dir) {
  const std::vector<PhantomRegion> regions = phantom_regions(spec);
  const std::vector<double> traits = phantom_traits(spec);
  const Extents3 e = spec.extents;
  const std::size_t vol = e.volume();
  std::error_code ec;
  fs::create_directories(out_dir / "volumes", ec);
  if (ec) throw SpecError("cannot create " + (out_dir / "volumes").string() + ": " + ec.message());

  DatasetManifest m;
  m.class_names = spec.class_names;
  if (m.class_names.empty()) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      m.class_names.push_back(spec.num_classes == kTaskNames.size() ? kTaskNames[c]
                                                                    : "class" + std::to_string(c));
    }
  }
  struct Job {
    std::size_t subject, cls, block;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < spec.num_subjects; ++s) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      for (std::size_t b = 0; b < spec.blocks_per_subject_per_class; ++b) {
        jobs.push_back({s, c, b});
        ManifestEntry entry;
        char name[64];
        std::snprintf(name, sizeof name, "volumes/%s_cls-%zu_blk-%zu.v4d", subject_name(s).c_str(), c, b);
        entry.path = name;
        entry.subject_id = subject_name(s);
        entry.class_label = static_cast<int>(c);
        entry.trait_value = traits[s];
        entry.block_length = block_length_of(spec, c);
        m.entries.push_back(std::move(entry));
      }
    }
  }
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const std::size_t lb = block_length_of(spec, job.cls);
    const std::vector<double> g = phantom_response(spec, job.cls, lb);
    double amp = spec.snr;
    if (job.cls == spec.trait_class) amp *= 1 + spec.trait_coupling * traits[job.subject];
    const auto off = subject_offset(spec, job.subject);
    const PhantomRegion& r = regions[job.cls];
    const double ch = r.center[0] + off[0], cw = r.center[1] + off[1], cd = r.center[2] + off[2];
    std::vector<std::size_t> inside;
    for (std::size_t h = 0; h < e.h; ++h) {
      for (std::size_t w = 0; w < e.w; ++w) {
        for (std::size_t d = 0; d < e.d; ++d) {
          const double dh = h - ch, dw = w - cw, dd = d - cd;
          if (dh * dh + dw * dw + dd * dd <= r.radius * r.radius) inside.push_back((h * e.w + w) * e.d + d);
        }
      }
    }
    Rng rng(mix_seed({spec.seed, job.subject, job.cls, job.block, 0x9015e}));
    std::normal_distribution<double> noise(0.0, 1.0);
    Tensor<float> t({lb, e.h, e.w, e.d});
    for (auto& v : t.data()) v = static_cast<float>(noise(rng));
    for (std::size_t f = 0; f < lb; ++f) {
      const double s = amp * g[f];
      for (std::size_t v : inside) t[f * vol + v] += static_cast<float>(s);
    }
    write_volume(t, out_dir / m.entries[i].path);
  });
  write_manifest(m, out_dir);
  return m;
}

// ---------------------------------------------------------------------------
// windows and splits

void copy_window(const Tensor<float>& block, std::size_t start, std::size_t L, float* dst) {
  const std::size_t frame = block.numel() / block.extent(0);
  if (start + L > block.extent(0)) throw ShapeError("window runs past the block end");
  std::memcpy(dst, block.ptr() + start * frame, L * frame * sizeof(float));
}

Tensor<float> segment_windows(const Tensor<float>& block, std::size_t L, std::size_t stride) {
  if (block.rank() != 4) throw ShapeError("block must be [l_b, H, W, D], got " + shape_str(block.shape()));
  if (stride == 0) throw ShapeError("window stride must be >= 1");
  if (L == 0) throw ShapeError("window length must be >= 1");
  const std::size_t lb = block.extent(0);
  if (lb < L) {
    throw ShapeError("block of " + std::to_string(lb) + " frames is shorter than window " + std::to_string(L));
  }
  const std::size_t k = (lb - L) / stride + 1;
  Tensor<float> out({k, 1, L, block.extent(1), block.extent(2), block.extent(3)});
  const std::size_t each = out.numel() / k;
  for (std::size_t i = 0; i < k; ++i) copy_window(block, i * stride, L, out.ptr() + i * each);
  return out;
}

SplitPlan make_splits(const DatasetManifest& m, std::size_t num_folds, std::size_t fold_index,
                      std::uint64_t seed) {
  if (num_folds < 2) throw SplitError("need at least 2 folds");
  if (fold_index >= num_folds) {
    throw SplitError("fold index " + std::to_string(fold_index) + " outside [0, " + std::to_string(num_folds) + ")");
  }
  std::vector<std::string> subjects = m.subjects();
  if (subjects.size() < 2 * num_folds) {
    throw SplitError("need at least " + std::to_string(2 * num_folds) + " subjects, have " +
                     std::to_string(subjects.size()));
  }
  Rng rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const std::size_t n = subjects.size();
  auto fold = [&](std::size_t f) {
    return std::vector<std::string>(subjects.begin() + static_cast<long>(f * n / num_folds),
                                    subjects.begin() + static_cast<long>((f + 1) * n / num_folds));
  };
  SplitPlan p;
  p.fold_index = fold_index;
  p.num_folds = num_folds;
  p.test = fold(fold_index);
  const std::size_t next = (fold_index + 1) % num_folds;
  const auto nf = fold(next);
  // Validation takes about half of the next fold, sized so that the val and
  // train shares both land within one subject of their nominal fractions.
  const double dn = static_cast<double>(n), folds = static_cast<double>(num_folds);
  const double val_target = 0.5 / folds * dn;
  const double keep = dn - static_cast<double>(p.test.size()) - (1.0 - 1.5 / folds) * dn;
  const double lo = std::max(val_target, keep) - 1, hi = std::min(val_target, keep) + 1;
  const double pick = std::clamp(std::round(val_target), std::ceil(lo), std::floor(hi));
  const std::size_t n_val = std::min(nf.size(), static_cast<std::size_t>(std::max(pick, 0.0)));
  p.val.assign(nf.begin(), nf.begin() + static_cast<long>(n_val));
  for (std::size_t f = 0; f < num_folds; ++f) {
    if (f == fold_index) continue;
    const auto members = fold(f);
    const std::size_t skip = f == next ? n_val : 0;
    p.train.insert(p.train.end(), members.begin() + static_cast<long>(skip), members.end());
  }
  audit_split(p);
  return p;
}

void audit_split(const SplitPlan& p) {
  std::map<std::string, int> seen;
  for (const auto* set : {&p.train, &p.val, &p.test}) {
    for (const auto& s : *set) {
      if (++seen[s] > 1) throw SplitError("subject " + s + " appears in more than one split");
    }
  }
}

std::vector<std::size_t> entries_for(const DatasetManifest& m, const std::vector<std::string>& subjects) {
  const std::set<std::string> want(subjects.begin(), subjects.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (want.count(m.entries[i].subject_id)) idx.push_back(i);
  }
  return idx;
}

}  // namespace spatiodec
