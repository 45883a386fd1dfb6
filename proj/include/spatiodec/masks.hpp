#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "spatiodec/training.hpp"

namespace spatiodec {

/// Class-averaged attention of one channel at one stage, upsampled to the
/// input volume.
struct MaskVolume {
  std::size_t stage = 0;  // 1-based
  std::size_t channel = 0;
  std::size_t class_label = 0;
  Tensor<double> a_mean;      // [H, W, D]
  Tensor<double> logit_mean;  // [H, W, D]
  std::size_t sample_count = 0;
};

// "all" or a single stage "1".."4".
std::vector<std::size_t> parse_stage_filter(const std::string& s);

/// Inference over every test window; one MaskVolume per (stage, channel,
/// class) that has at least one window.
template <typename T>
std::vector<MaskVolume> extract_masks(Model<T>& model, const DatasetManifest& manifest,
                                      const std::filesystem::path& root, const SplitPlan& split,
                                      const std::vector<std::size_t>& stages, const TrainConfig& cfg,
                                      const AttentionHooks<T>& hooks = {});

struct MaskFiles {
  std::filesystem::path raw;
  std::filesystem::path logit_raw;
  std::filesystem::path sidecar;
  std::filesystem::path montage;
};

// Raw little-endian f32 [H, W, D] for A and the logit, a JSON sidecar and a
// PGM montage of the axial slices of A.
MaskFiles export_mask(const MaskVolume& mv, const std::filesystem::path& out_dir);

Tensor<float> read_raw_f32(const std::filesystem::path& path, const Shape& shape);

struct Montage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;  // row-major, height x width
};

// Slices along the last axis tiled ceil(sqrt(D)) per row, mapped linearly
// from [lo, hi] to [0, 255].
Montage make_montage(const Tensor<float>& volume, double lo, double hi);
Montage read_pgm(const std::filesystem::path& path);

}  // namespace spatiodec
