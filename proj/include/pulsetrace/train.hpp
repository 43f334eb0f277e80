#ifndef PULSETRACE_TRAIN_HPP
#define PULSETRACE_TRAIN_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pulsetrace/checkpoint.hpp"
#include "pulsetrace/infer.hpp"
#include "pulsetrace/loss.hpp"
#include "pulsetrace/metrics.hpp"
#include "pulsetrace/model.hpp"
#include "pulsetrace/phantom.hpp"

// End-to-end training: per sequence, forward every frame through the
// encoder, unroll the recurrence, predict, apply the combined loss with
// the period detected on the ground truth, backpropagate through time and
// take one optimizer step (batch = one sequence). Validation MSE is
// evaluated every epoch and the best-validation checkpoint is retained.

namespace pulsetrace {

struct TrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-4;
  double lambda = 1e-6;
  std::uint64_t seed = 0;
  ModelProfile profile = ModelProfile::Full;
  ModelVariant variant = ModelVariant::Recurrent;
  bool augment = true;
  std::size_t checkpoint_every = 0;  // epochs between periodic snapshots
  bool save_optimizer = false;
};

struct TrainResult {
  Checkpoint best_checkpoint;
  std::size_t best_epoch = 0;
  double best_val_mse = std::numeric_limits<double>::infinity();
  std::vector<double> train_loss_history;  // per-epoch mean sequence loss
  std::vector<double> val_mse_history;
  std::size_t optimizer_steps = 0;
};

// epoch (1-based), mean train loss, validation MSE
using EpochCallback = std::function<void(std::size_t, double, double)>;
// periodic snapshot per checkpoint_every
using SnapshotCallback = std::function<void(std::size_t, const Checkpoint&)>;

template <typename T>
double validation_mse(const Model<T>& model,
                      const std::vector<UltrasoundSequence>& seqs) {
  if (seqs.empty()) return std::numeric_limits<double>::quiet_NaN();
  StreamingPredictor<T> predictor(model);
  double acc = 0.0;
  for (const auto& seq : seqs) {
    predictor.reset();
    double se = 0.0;
    for (std::size_t t = 0; t < seq.length(); ++t) {
      const double e = static_cast<double>(predictor.push(seq.frames[t])) -
                       double(seq.diameters_mm[t]);
      se += e * e;
    }
    acc += se / static_cast<double>(seq.length());
  }
  return acc / static_cast<double>(seqs.size());
}

template <typename T>
TrainResult train(const std::vector<UltrasoundSequence>& train_seqs,
                  const std::vector<UltrasoundSequence>& val_seqs,
                  const TrainConfig& cfg,
                  const std::vector<std::string>& train_ids = {},
                  const EpochCallback& on_epoch = {},
                  const SnapshotCallback& on_snapshot = {}) {
  if (train_seqs.empty()) throw ConfigError("train: empty training set");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");

  auto model = Model<T>::create(cfg.profile, cfg.variant, cfg.seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.learning_rate;
  AdamOptimizer<T> optimizer(adam_cfg);
  for (auto& [key, param] : model.param_registry()) {
    optimizer.bind(key, param);
  }
  LossConfig loss_cfg;
  loss_cfg.lambda = cfg.lambda;

  auto seq_id = [&](std::size_t i) {
    return i < train_ids.size() ? train_ids[i] : "seq" + std::to_string(i);
  };

  // Period per training sequence, from ground truth; NoPeaks disables the
  // cyclic term for that sequence.
  std::vector<std::optional<CycleInfo>> cycles(train_seqs.size());
  for (std::size_t i = 0; i < train_seqs.size(); ++i) {
    try {
      std::vector<float> y = train_seqs[i].diameters_mm;
      auto info = detect_period(y, double(train_seqs[i].frame_rate));
      if (train_seqs[i].length() >= 2 * info.period_frames) {
        cycles[i] = info;
      }
    } catch (const NoPeaksError&) {
      cycles[i] = std::nullopt;
    }
  }

  detail::Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  detail::Rng augment_rng(cfg.seed ^ 0x517cc1b727220a95ULL);

  TrainResult result;
  std::vector<std::size_t> order(train_seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle(order, order_rng);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      const UltrasoundSequence* seq = &train_seqs[idx];
      UltrasoundSequence flipped;
      if (cfg.augment) {
        const bool horizontal = augment_rng.uniform() < 0.5;
        const bool vertical = augment_rng.uniform() < 0.5;
        if (horizontal || vertical) {
          flipped = augment_flip(*seq, horizontal, vertical);
          seq = &flipped;
        }
      }

      SequenceForward<T> fwd;
      forward_sequence(model, seq->frames, fwd);

      DiameterTrace<T> trace;
      trace.frame_rate = double(seq->frame_rate);
      trace.y_hat = fwd.y_hat;
      trace.y.reserve(seq->length());
      for (float d : seq->diameters_mm) trace.y.push_back(static_cast<T>(d));

      const auto loss = total_loss(trace, cycles[idx], loss_cfg);
      if (!std::isfinite(double(loss.total))) {
        throw NumericError("train: loss diverged on sequence '" +
                           seq_id(idx) + "' at epoch " +
                           std::to_string(epoch));
      }
      epoch_loss += double(loss.total);

      backward_sequence(model, fwd, loss.grad);
      optimizer.step();
      ++result.optimizer_steps;
    }
    epoch_loss /= static_cast<double>(train_seqs.size());
    result.train_loss_history.push_back(epoch_loss);

    const double val = validation_mse(model, val_seqs);
    result.val_mse_history.push_back(val);

    // model selection: best validation MSE; train loss stands in when no
    // validation set exists
    const double selector = val_seqs.empty() ? epoch_loss : val;
    if (selector < result.best_val_mse) {
      result.best_val_mse = selector;
      result.best_epoch = epoch;
      result.best_checkpoint = checkpoint_from_model(model);
      result.best_checkpoint.metadata["epoch"] = std::to_string(epoch);
      result.best_checkpoint.metadata["seed"] = std::to_string(cfg.seed);
      result.best_checkpoint.metadata["val_mse"] = std::to_string(val);
      if (cfg.save_optimizer) {
        append_optimizer_state(result.best_checkpoint, optimizer);
      }
    }

    if (on_epoch) on_epoch(epoch, epoch_loss, val);
    if (cfg.checkpoint_every && on_snapshot &&
        epoch % cfg.checkpoint_every == 0) {
      auto snap = checkpoint_from_model(model);
      snap.metadata["epoch"] = std::to_string(epoch);
      snap.metadata["seed"] = std::to_string(cfg.seed);
      if (cfg.save_optimizer) append_optimizer_state(snap, optimizer);
      on_snapshot(epoch, snap);
    }
  }

  // serialize the loss history into the retained checkpoint
  std::string hist;
  for (std::size_t i = 0; i < result.train_loss_history.size(); ++i) {
    if (i) hist += ',';
    hist += std::to_string(result.train_loss_history[i]);
  }
  result.best_checkpoint.metadata["loss_history"] = hist;
  return result;
}

}  // namespace pulsetrace

#endif  // PULSETRACE_TRAIN_HPP
