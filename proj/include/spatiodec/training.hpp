#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spatiodec/data.hpp"
#include "spatiodec/model.hpp"

namespace spatiodec {

// --- optimizer ---------------------------------------------------------------

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Moments are created on the first call.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
               AdamState<T>& state, double lr);

/// Divides the rate by `decay_factor` once `patience` epochs pass without the
/// validation loss dropping below best - min_delta.
struct LrSchedule {
  double lr = 1e-4;
  double decay_factor = 5.0;
  std::size_t patience = 15;
  double min_delta = 1e-4;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;

  double update(double val_loss);
};

// --- configuration --------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  std::size_t window = 15;
  std::size_t eval_stride = 3;
  double lr = 1e-4;
  std::size_t patience = 15;
  double decay_factor = 5.0;
  double min_delta = 1e-4;
  std::size_t num_folds = 5;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
  Precision precision = Precision::single;
  std::size_t permutations = 10000;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// --- loops ------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on the split's train subjects and leaves the model holding the
/// weights of the epoch with the lowest validation loss.
template <typename T>
TrainResult train(Model<T>& model, const DatasetManifest& manifest, const std::filesystem::path& root,
                  const SplitPlan& split, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> confusion;  // rows true, columns predicted
  double accuracy = 0;
  std::vector<double> per_class_accuracy;
  std::size_t instances = 0;
  std::vector<EpochRecord> loss_curve;
};

void to_json(nlohmann::json& j, const EvalReport& r);

EvalReport make_report(std::vector<std::vector<std::size_t>> confusion,
                       std::vector<std::string> class_names);

/// Votes over stride-`eval_stride` windows of every test block.
template <typename T>
EvalReport evaluate(Model<T>& model, const DatasetManifest& manifest, const std::filesystem::path& root,
                    const SplitPlan& split, const TrainConfig& cfg);

struct BlockScore {
  std::string subject_id;
  double predicted = 0;
  double observed = 0;
};

// Regression head: mean output over the windows of each test block.
template <typename T>
std::vector<BlockScore> predict_scores(Model<T>& model, const DatasetManifest& manifest,
                                       const std::filesystem::path& root, const SplitPlan& split,
                                       const TrainConfig& cfg);

// --- metrics ------------------------------------------------------------------------

struct SpearmanResult {
  double r_s = 0;
  double p_perm = 1;
  std::size_t n = 0;
};

void to_json(nlohmann::json& j, const SpearmanResult& r);

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& x);

SpearmanResult spearman(const std::vector<double>& pred, const std::vector<double>& obs,
                        std::size_t num_permutations = 10000, std::uint64_t seed = 0);

// --- transfer -----------------------------------------------------------------------

struct HeadSpec {
  HeadKind kind = HeadKind::classify;
  std::size_t classes = 0;
};

// "classify:N" or "regress".
HeadSpec parse_head_spec(const std::string& s);

/// Source body with a freshly initialized head for the target task.
template <typename T>
Model<T> prepare_transfer(const std::filesystem::path& source_ckpt, const HeadSpec& head,
                          const Extents3& target_extents, std::uint64_t seed);

template <typename T>
struct TransferResult {
  Model<T> model;
  TrainResult training;
  std::optional<EvalReport> report;
  std::optional<SpearmanResult> correlation;
};

template <typename T>
TransferResult<T> transfer_fit(const std::filesystem::path& source_ckpt, const DatasetManifest& manifest,
                               const std::filesystem::path& root, const SplitPlan& split,
                               const HeadSpec& head, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {});

}  // namespace spatiodec
