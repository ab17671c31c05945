// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "echoreg/data.hpp"
#include "echoreg/eval.hpp"
#include "echoreg/models.hpp"

namespace echoreg::train {

using eval::EpochRecord;
using eval::History;

inline constexpr double kDefaultRegularization = 1e-4;
inline constexpr double kDefaultClipNorm = 1.0;

struct ExperimentConfig {
  /// Architecture, including the head dropout rate.
  models::ModelConfig model;
  double initial_lr = 1e-3;
  std::size_t decay_period = 10;
  double decay_factor = 2.0;
  std::size_t max_epochs = 50;
  std::size_t patience = 20;
  std::size_t batch_size = 2;
  std::optional<double> clip_norm;
  double l1 = 0.0;
  double l2 = 0.0;
  double weight_decay = 0.0;
  /// Fit the output affine to the training labels so the network regresses
  /// standardized targets; losses stay in label units.
  bool standardize_targets = true;
  std::uint64_t seed = 0;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Family-specific learning rate, dropout and batch size.
ExperimentConfig defaults_for(models::Family family,
                              models::CellKind cell = models::CellKind::kGru);

/// Throws ConfigError naming the offending key.
void validate(const ExperimentConfig& config);

/// Independent streams derived from config.seed.
enum class Stream : std::uint64_t { kShuffle = 1, kDropout = 2, kInit = 3 };
std::uint64_t stream_seed(const ExperimentConfig& config, Stream stream);

/// mean((p - t)^2) + l1 sum|w| + l2 sum w^2 over regularized parameters.
Var training_loss(const Var& predictions, const Tensor& targets,
                  std::span<const layers::ParameterRef> parameters, double l1, double l2);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update of every parameter, followed by
/// w -= lr * weight_decay * w. Throws NumericError naming the parameter when
/// a gradient is not finite; nothing is modified in that case.
void adam_step(std::span<const layers::ParameterRef> parameters, std::span<const Tensor> grads,
               AdamState& state, double lr, double weight_decay = 0.0);

/// initial_lr * decay_factor^(-floor(epoch / decay_period)).
double lr_at_epoch(const ExperimentConfig& config, std::size_t epoch);

/// Scales all gradients by max_norm / g when the global L2 norm g exceeds
/// max_norm. Returns g.
double clip_gradients(std::span<Tensor> grads, double max_norm);

/// Stops once `patience` epochs pass without a strictly smaller metric.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records the metric of `epoch`; returns true when training should halt.
  bool observe(std::size_t epoch, double metric);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
  bool seen_ = false;
  bool improved_ = false;
};

/// Per-clip network inputs in model declaration order.
using ClipInputs = std::vector<Tensor>;

/// Frames, frame differences or triplicated frames per input declaration.
ClipInputs prepare_inputs(const models::Model& model, const data::VideoClip& clip);

/// Stacks the selected clips along a new leading batch axis.
std::vector<Var> assemble_batch(std::span<const ClipInputs> clips,
                                std::span<const std::size_t> indices);

/// Inference-mode predictions in label units.
std::vector<double> predict(models::Model& model, std::span<const ClipInputs> inputs,
                            std::size_t batch_size);

enum class FitStatus { kCompleted, kEarlyStopped, kDiverged };
std::string to_string(FitStatus s);

struct FitResult {
  History history;
  FitStatus status = FitStatus::kCompleted;
  std::string diagnostic;
};

/// Called after every epoch with the record just appended.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Shuffled mini-batch training with per-epoch validation and early
/// stopping. On return the model holds the parameters and normalization
/// statistics of the best validation epoch.
FitResult fit(models::Model& model, std::span<const data::VideoClip> train_set,
              std::span<const data::VideoClip> val_set, const ExperimentConfig& config,
              const EpochCallback& on_epoch = {});

/// Copies of every parameter and buffer value.
struct Snapshot {
  std::vector<Tensor> parameters;
  std::vector<Tensor> buffers;
};
Snapshot take_snapshot(models::Model& model);
void restore_snapshot(models::Model& model, const Snapshot& snapshot);

}  // namespace echoreg::train
