#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spatiodec/attention.hpp"
#include "spatiodec/conv4d.hpp"

namespace spatiodec {

enum class Variant { resnet4d_att, resnet4d, resnet3d_att };
enum class HeadKind { classify, regress };

std::string to_string(Variant v);
std::string to_string(HeadKind h);
Variant parse_variant(const std::string& s);
HeadKind parse_head(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::resnet4d_att;
  std::size_t stem_channels = 8;
  std::size_t kernel_t = 5;
  std::size_t kernel_s = 3;
  Conv4DConfig conv4d{2, 2};
  std::array<std::size_t, 4> stage_channels{8, 16, 16, 32};
  std::array<std::size_t, 4> stage_strides{1, 1, 2, 1};
  std::array<std::size_t, 4> pool_depths{1, 1, 1, 1};
  std::size_t res_units = 2;
  std::size_t num_classes = 7;
  HeadKind head = HeadKind::classify;
  std::size_t frames = 15;
  Extents3 extents{16, 20, 18};
  std::uint64_t seed = 0;

  bool has_attention() const { return variant != Variant::resnet4d; }
  std::size_t head_outputs() const { return head == HeadKind::classify ? num_classes : 1; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing keys keep their defaults; bad values raise ConfigError.
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LayerShape {
  std::string layer;
  Shape shape;
};

/// Dry-run shape propagation for a batch of `n`; allocates no parameters.
/// Raises ConfigError naming the first layer whose extents do not fit.
std::vector<LayerShape> shape_audit(const ModelConfig& cfg, std::size_t n = 1);

// Trainable scalar count, from the configuration alone.
std::size_t parameter_count(const ModelConfig& cfg);

template <typename T>
struct ForwardResult {
  Tensor<T> output;  // [n, classes] logits or [n, 1] scores
  std::vector<AttentionRecord<T>> records;
};

struct Vote {
  std::size_t label = 0;
  std::vector<std::size_t> window_labels;
  std::vector<double> summed_probs;
};

/// Majority vote over per-window argmax; ties go to the larger summed
/// probability, then the lower class index.
Vote vote(const std::vector<std::vector<double>>& window_probs);

template <typename T>
class Model {
 public:
  static Model build(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  Var<T> forward(const Var<T>& batch, const ParamBinder<T>& bind, Mode mode,
                 std::vector<AttentionRecord<T>>* records = nullptr,
                 const AttentionHooks<T>& hooks = {});
  ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, bool record_masks = false,
                           const AttentionHooks<T>& hooks = {});

  // Inference-mode vote over windows [k, 1, l, H, W, D].
  Vote predict_instance(const Tensor<T>& windows);

  /// Every tensor with its stable name, in checkpoint order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(bool include_running = true);
  std::vector<std::pair<std::string, Tensor<T>*>> trainable() { return named_tensors(false); }

  static bool is_head_tensor(const std::string& name) { return name.rfind("head.", 0) == 0; }

  // Replaces the dense head with fresh weights drawn from `seed`.
  void reinit_head(std::uint64_t seed);

 private:
  template <typename Fn>
  void visit(Fn&& fn);

  ModelConfig cfg_;
  Conv4DKernel<T> stem4d_;
  Conv3DParams<T> stem3d_;
  std::vector<AttentionModuleParams<T>> stages_;
  NormParams<T> final_norm_;
  Tensor<T> head_w_;
  Tensor<T> head_b_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(Model<T>& m, const std::filesystem::path& path);

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

/// Loads every non-head tensor of the checkpoint into `m`. Head tensors are
/// loaded too when their shapes agree; otherwise, with `allow_head_reinit`,
/// the head keeps its current values. Body mismatches raise TransferError.
template <typename T>
void load_body(Model<T>& m, const std::filesystem::path& path, bool allow_head_reinit);

// Configuration stored in a checkpoint's index.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace spatiodec
