#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spatiodec/geometry.hpp"
#include "spatiodec/tensor.hpp"

namespace spatiodec {

// --- V4D1 volumes: [l, H, W, D] f32, time slowest --------------------------

void write_volume(const Tensor<float>& t, const std::filesystem::path& path);
Tensor<float> read_volume(const std::filesystem::path& path);

// --- manifest ----------------------------------------------------------------

inline constexpr int kManifestSchema = 1;

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  std::string subject_id;
  std::optional<int> class_label;
  std::optional<double> trait_value;
  std::size_t block_length = 0;
};

struct DatasetManifest {
  int schema_version = kManifestSchema;
  std::string task = "classify";  // or "regress"
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;

  std::vector<std::string> subjects() const;  // sorted, unique
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Reads `<root>/manifest.json` and checks entry invariants.
DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& root);

// --- phantoms ------------------------------------------------------------------

struct PhantomRegion {
  std::array<double, 3> center{0, 0, 0};
  double radius = 2.5;
};

struct PhantomSpec {
  std::size_t num_classes = 7;
  std::size_t num_subjects = 20;
  std::size_t blocks_per_subject_per_class = 1;
  Extents3 extents{16, 20, 18};
  std::vector<std::size_t> block_lengths{26, 39, 29, 17, 23, 32, 39};  // per class
  std::vector<PhantomRegion> regions;  // per class; empty selects the default layout
  double hrf_peak = 3.0;               // frames
  double hrf_undershoot = 0.35;
  double snr = 2.0;
  double subject_jitter = 1.0;  // voxels, per axis
  double trait_coupling = 0.0;
  std::size_t trait_class = 0;
  // Per-class on/off period (frames) of the stimulus inside a block; 0 keeps
  // the stimulus on for the whole block.
  std::vector<std::size_t> class_periods;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

// Region layout actually used (explicit regions or the default grid).
std::vector<PhantomRegion> phantom_regions(const PhantomSpec& spec);

// Difference-of-gammas response sampled at integer frames, peak scaled to 1.
std::vector<double> hrf_kernel(double peak, double undershoot, std::size_t length);

/// Expected noiseless time course of class `c` over `length` frames:
/// stimulus boxcar convolved with the response, scaled to a maximum of 1.
std::vector<double> phantom_response(const PhantomSpec& spec, std::size_t c, std::size_t length);

/// Latent trait of each subject, uniform in [-1, 1].
std::vector<double> phantom_traits(const PhantomSpec& spec);

DatasetManifest phantom_generate(const PhantomSpec& spec, const std::filesystem::path& out_dir);

// --- windows and splits ---------------------------------------------------------

/// [l_b, H, W, D] -> [k, 1, L, H, W, D], k = floor((l_b - L) / stride) + 1.
Tensor<float> segment_windows(const Tensor<float>& block, std::size_t L, std::size_t stride);

// One window starting at frame `start`, shaped [1, L, H, W, D].
void copy_window(const Tensor<float>& block, std::size_t start, std::size_t L, float* dst);

struct SplitPlan {
  std::size_t fold_index = 0;
  std::size_t num_folds = 5;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

SplitPlan make_splits(const DatasetManifest& m, std::size_t num_folds, std::size_t fold_index,
                      std::uint64_t seed);

// Raises SplitError if any subject appears in two roles.
void audit_split(const SplitPlan& plan);

// Indices of manifest entries whose subject is in `subjects`.
std::vector<std::size_t> entries_for(const DatasetManifest& m,
                                     const std::vector<std::string>& subjects);

}  // namespace spatiodec
