// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "echoreg/rng.hpp"
#include "echoreg/train.hpp"

namespace echoreg::train {

namespace {

Tensor labels_of(std::span<const data::VideoClip> clips, std::span<const std::size_t> indices) {
  Tensor t({indices.size(), 1});
  for (std::size_t i = 0; i < indices.size(); ++i) t[i] = clips[indices[i]].label;
  return t;
}

double penalty(std::span<const layers::ParameterRef> params, double l1, double l2) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.regularized) continue;
    for (double w : p.var->value().data()) s += l1 * std::abs(w) + l2 * w * w;
  }
  return s;
}

std::vector<double> labels_vector(std::span<const data::VideoClip> clips) {
  std::vector<double> v;
  v.reserve(clips.size());
  for (const auto& c : clips) v.push_back(c.label);
  return v;
}

}  // namespace

std::string to_string(FitStatus s) {
  switch (s) {
    case FitStatus::kCompleted:
      return "completed";
    case FitStatus::kEarlyStopped:
      return "early_stopped";
    case FitStatus::kDiverged:
      return "diverged";
  }
  return "?";
}

ClipInputs prepare_inputs(const models::Model& model, const data::VideoClip& clip) {
  ClipInputs out;
  for (const auto& decl : model.inputs()) {
    Tensor t;
    switch (decl.kind) {
      case models::InputKind::kFrames:
        t = clip.frames;
        break;
      case models::InputKind::kFrameDifferences:
        t = data::frame_difference(clip.frames);
        break;
      case models::InputKind::kTriplicatedFrames:
        t = data::triplicate_grayscale(clip.frames);
        break;
    }
    if (t.shape() != decl.shape) {
      throw ShapeError("input '" + decl.name + "' expects " + shape_to_string(decl.shape) +
                       ", clip gives " + shape_to_string(t.shape()));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Var> assemble_batch(std::span<const ClipInputs> clips,
                                std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("assemble_batch: empty batch");
  const ClipInputs& first = clips[indices.front()];
  std::vector<Var> batch;
  for (std::size_t k = 0; k < first.size(); ++k) {
    Shape shape{indices.size()};
    shape.insert(shape.end(), first[k].shape().begin(), first[k].shape().end());
    Tensor t(shape);
    const std::size_t per = first[k].numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Tensor& src = clips[indices[i]][k];
      if (src.shape() != first[k].shape()) throw ShapeError("assemble_batch: ragged inputs");
      std::memcpy(t.data().data() + i * per, src.data().data(), per * sizeof(double));
    }
    batch.push_back(Var::constant(std::move(t)));
  }
  return batch;
}

std::vector<double> predict(models::Model& model, std::span<const ClipInputs> inputs,
                            std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  std::vector<double> out;
  out.reserve(inputs.size());
  layers::ForwardContext ctx;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(inputs.size(), start + batch_size); ++i) {
      idx.push_back(i);
    }
    const Var y = models::model_forward(model, assemble_batch(inputs, idx), ctx);
    for (double v : y.value().data()) out.push_back(v);
  }
  return out;
}

Snapshot take_snapshot(models::Model& model) {
  Snapshot s;
  const auto refs = model.state();
  for (const auto& p : refs.parameters) s.parameters.push_back(p.var->value());
  for (const auto& b : refs.buffers) s.buffers.push_back(*b.tensor);
  return s;
}

void restore_snapshot(models::Model& model, const Snapshot& s) {
  auto refs = model.state();
  if (refs.parameters.size() != s.parameters.size() || refs.buffers.size() != s.buffers.size()) {
    throw std::invalid_argument("snapshot does not match the model");
  }
  for (std::size_t i = 0; i < s.parameters.size(); ++i) refs.parameters[i].var->set_value(s.parameters[i]);
  for (std::size_t i = 0; i < s.buffers.size(); ++i) *refs.buffers[i].tensor = s.buffers[i];
}

FitResult fit(models::Model& model, std::span<const data::VideoClip> train_set,
              std::span<const data::VideoClip> val_set, const ExperimentConfig& config,
              const EpochCallback& on_epoch) {
  validate(config);
  if (train_set.empty() || val_set.empty()) {
    throw std::invalid_argument("fit needs non-empty training and validation sets");
  }
  if (config.batch_size > train_set.size()) {
    throw std::invalid_argument("batch_size " + std::to_string(config.batch_size) +
                                " exceeds the training set size " +
                                std::to_string(train_set.size()));
  }
  std::vector<ClipInputs> train_inputs, val_inputs;
  for (const auto& c : train_set) train_inputs.push_back(prepare_inputs(model, c));
  for (const auto& c : val_set) val_inputs.push_back(prepare_inputs(model, c));
  const std::vector<double> val_truth = labels_vector(val_set);

  if (config.standardize_targets) {
    const auto labels = labels_vector(train_set);
    const double mean = std::accumulate(labels.begin(), labels.end(), 0.0) /
                        static_cast<double>(labels.size());
    const double sd = labels.size() > 1 ? eval::standard_deviation(labels) : 0.0;
    model.set_output_affine(mean, sd > 0.0 ? sd : 1.0);
  }

  const auto params = model.state().parameters;
  AdamState adam;
  Rng shuffle_rng(stream_seed(config, Stream::kShuffle));
  Rng dropout_rng(stream_seed(config, Stream::kDropout));
  EarlyStopping stopper(config.patience);
  std::optional<Snapshot> best;
  FitResult result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(config, epoch);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    }
    double loss_sum = 0.0, se_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::span<const std::size_t> idx(
            order.data() + start, std::min(config.batch_size, order.size() - start));
        layers::ForwardContext ctx{layers::Mode::kTrain, &dropout_rng};
        const Var pred = models::model_forward(model, assemble_batch(train_inputs, idx), ctx);
        const Tensor targets = labels_of(train_set, idx);
        const Var loss = training_loss(pred, targets, params, config.l1, config.l2);
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        }
        const double n = static_cast<double>(idx.size());
        loss_sum += value * n;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const double d = pred.value()[i] - targets[i];
          se_sum += d * d;
        }
        const Gradients g = backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(params.size());
        for (const auto& p : params) grads.push_back(g.of(*p.var));
        if (config.clip_norm) clip_gradients(grads, *config.clip_norm);
        adam_step(params, grads, adam, lr, config.weight_decay);
      }
    } catch (const NumericError& e) {
      result.status = FitStatus::kDiverged;
      result.diagnostic = e.what();
      break;
    }
    const double n_train = static_cast<double>(train_set.size());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / n_train;
    rec.train_rmse = std::sqrt(se_sum / n_train);
    std::vector<double> val_pred;
    try {
      val_pred = predict(model, val_inputs, config.batch_size);
    } catch (const NumericError& e) {
      result.status = FitStatus::kDiverged;
      result.diagnostic = e.what();
      break;
    }
    rec.val_rmse = eval::rmse(val_pred, val_truth);
    rec.val_loss = rec.val_rmse * rec.val_rmse + penalty(params, config.l1, config.l2);
    if (!std::isfinite(rec.val_rmse)) {
      result.status = FitStatus::kDiverged;
      result.diagnostic = "non-finite validation RMSE at epoch " + std::to_string(epoch);
      break;
    }
    result.history.epochs.push_back(rec);
    const bool stop = stopper.observe(epoch, rec.val_rmse);
    if (stopper.improved()) best = take_snapshot(model);
    result.history.best_epoch = stopper.best_epoch();
    if (on_epoch) on_epoch(rec);
    if (stop && epoch + 1 < config.max_epochs) {
      result.status = FitStatus::kEarlyStopped;
      break;
    }
  }
  if (best) restore_snapshot(model, *best);
  return result;
}

}  // namespace echoreg::train
