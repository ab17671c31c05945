// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <stdexcept>

#include "echoreg/errors.hpp"
#include "echoreg/rng.hpp"
#include "echoreg/train.hpp"

namespace echoreg::train {

using models::Family;

ExperimentConfig defaults_for(Family family, models::CellKind cell) {
  ExperimentConfig c;
  c.model.family = family;
  c.model.rnn_cell = cell;
  switch (family) {
    case Family::kTwoStream:
      c.initial_lr = 5e-4;
      c.model.dropout_rate = 0.05;
      c.batch_size = 16;
      break;
    case Family::kFusionCombination:
    case Family::kFusionNewCombination:
      c.batch_size = 16;
      break;
    case Family::kFusionSingleInput:
    case Family::kFusionDualInput:
    case Family::kFusionDualTruncated:
      c.initial_lr = 1e-4;
      c.batch_size = 4;
      break;
    case Family::kCnnRnnScratch:
      c.model.dropout_rate = 0.4;
      c.batch_size = cell == models::CellKind::kLstm ? 8 : 4;
      break;
    case Family::kI3dOriginal:
    case Family::kI3dMini:
      c.batch_size = 2;
      break;
  }
  return c;
}

void validate(const ExperimentConfig& c) {
  models::validate(c.model);
  if (!(c.initial_lr > 0.0 && std::isfinite(c.initial_lr))) {
    throw ConfigError("initial_lr", "must be a positive finite number");
  }
  if (c.decay_period == 0) throw ConfigError("decay_period", "must be at least 1");
  if (!(c.decay_factor >= 1.0)) throw ConfigError("decay_factor", "must be at least 1");
  if (c.max_epochs == 0) throw ConfigError("max_epochs", "must be at least 1");
  if (c.patience > c.max_epochs) throw ConfigError("patience", "must not exceed max_epochs");
  if (c.batch_size == 0) throw ConfigError("batch_size", "must be at least 1");
  if (c.clip_norm && !(*c.clip_norm > 0.0)) throw ConfigError("clip_norm", "must be positive");
  if (!(c.l1 >= 0.0)) throw ConfigError("l1", "must be non-negative");
  if (!(c.l2 >= 0.0)) throw ConfigError("l2", "must be non-negative");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
}

std::uint64_t stream_seed(const ExperimentConfig& config, Stream stream) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

Var training_loss(const Var& predictions, const Tensor& targets,
                  std::span<const layers::ParameterRef> parameters, double l1, double l2) {
  if (predictions.numel() == 0) throw std::invalid_argument("training_loss on an empty batch");
  if (targets.numel() != predictions.numel()) {
    throw ShapeError("training_loss: " + std::to_string(predictions.numel()) +
                     " predictions for " + std::to_string(targets.numel()) + " targets");
  }
  const Var t = Var::constant(targets.reshaped(predictions.shape()));
  Var loss = mean_all(square(sub(predictions, t)));
  for (const auto& p : parameters) {
    if (!p.regularized) continue;
    if (l1 > 0.0) loss = add(loss, scale(sum_all(abs(*p.var)), l1));
    if (l2 > 0.0) loss = add(loss, scale(sum_all(square(*p.var)), l2));
  }
  return loss;
}

void adam_step(std::span<const layers::ParameterRef> parameters, std::span<const Tensor> grads,
               AdamState& state, double lr, double weight_decay) {
  if (grads.size() != parameters.size()) {
    throw std::invalid_argument("adam_step: one gradient per parameter required");
  }
  if (state.m.empty()) {
    for (const auto& p : parameters) {
      state.m.emplace_back(p.var->shape());
      state.v.emplace_back(p.var->shape());
    }
  }
  if (state.m.size() != parameters.size()) {
    throw std::invalid_argument("adam_step: state was built for a different parameter list");
  }
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    if (grads[i].shape() != parameters[i].var->shape() || state.m[i].shape() != grads[i].shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + parameters[i].name);
    }
    if (!grads[i].all_finite()) {
      throw NumericError("non-finite gradient for parameter " + parameters[i].name);
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    auto w = parameters[i].var->leaf_value().data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * g[k];
      v[k] = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + AdamState::kEpsilon);
      if (weight_decay > 0.0) w[k] -= lr * weight_decay * w[k];
    }
  }
}

double lr_at_epoch(const ExperimentConfig& config, std::size_t epoch) {
  const auto halvings = static_cast<double>(epoch / config.decay_period);
  return config.initial_lr * std::pow(config.decay_factor, -halvings);
}

double clip_gradients(std::span<Tensor> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  double ss = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data()) ss += v * v;
  }
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

bool EarlyStopping::observe(std::size_t epoch, double metric) {
  improved_ = !seen_ || metric < best_;
  if (improved_) {
    best_ = metric;
    best_epoch_ = epoch;
    seen_ = true;
  }
  return epoch - best_epoch_ >= patience_;
}

}  // namespace echoreg::train
