#pragma once

// Autoregressive next-item training: full-vocabulary cross-entropy over
// shifted sequences, Adam, per-epoch validation NDCG@10, early stopping
// with best-epoch parameter restoration, and checkpoint emission.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rhythmrec/adam.hpp"
#include "rhythmrec/checkpoint.hpp"
#include "rhythmrec/dataset.hpp"
#include "rhythmrec/evaluator.hpp"
#include "rhythmrec/model.hpp"
#include "rhythmrec/ops.hpp"

namespace rhythmrec {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 256;  // full-scale runs typically use 4096
  double lr = 0.001;
  std::uint64_t seed = 42;
  std::size_t min_len = 3;
  std::string run_dir;             // empty: no checkpoint/report files
  bool freeze_zero_rhythm = false;  // debug: zero + frozen rhythm table

  void validate() const {
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (patience > epochs) throw Error("train config: patience must be <= epochs");
  }
};

struct TrainReport {
  std::vector<double> train_loss;     // one entry per epoch run
  std::vector<double> valid_metric;   // NDCG@10 per epoch
  std::size_t best_epoch = 0;         // 1-based
  bool stopped_early = false;
  double wall_clock_seconds = 0.0;

  nlohmann::ordered_json to_json() const {
    return nlohmann::ordered_json{{"train_loss", train_loss},
                                  {"valid_ndcg10", valid_metric},
                                  {"best_epoch", best_epoch},
                                  {"stopped_early", stopped_early},
                                  {"wall_clock_seconds", wall_clock_seconds}};
  }
};

struct TrainHooks {
  // Replaces the validation evaluation; epoch is 1-based. Used to script
  // metric traces in tests.
  std::function<double(std::size_t)> valid_metric_override;
  // Observes parameters at the end of every epoch (after updates).
  std::function<void(std::size_t, const ModelParams&)> on_epoch_end;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

// One user's padded training row: inputs are the sequence without its last
// element, targets the sequence shifted by one.
struct TrainRow {
  std::vector<std::int64_t> items, buckets, targets;
  std::vector<std::uint8_t> mask;
};

inline std::vector<TrainRow> build_training_rows(const SplitSpec& split, const ModelConfig& cfg) {
  std::vector<TrainRow> rows;
  for (const UserSplit& us : split.users) {
    const std::size_t len = us.train.size();
    if (len < 2) continue;  // nothing to predict
    std::vector<std::int64_t> items(len), ts(len);
    for (std::size_t i = 0; i < len; ++i) {
      items[i] = us.train[i].item;
      ts[i] = us.train[i].timestamp;
    }
    const RhythmTrack track = make_rhythm_track(ts, cfg.rhythm_norm, cfg.rhythm_clip);
    std::vector<std::int64_t> inputs(items.begin(), items.end() - 1);
    std::vector<std::int64_t> in_buckets(track.buckets.begin(), track.buckets.end() - 1);
    std::vector<std::int64_t> targets(items.begin() + 1, items.end());
    const PaddedSequence in = pad_truncate(inputs, in_buckets, cfg.max_len);
    const PaddedSequence tg = pad_truncate(targets, in_buckets, cfg.max_len);
    rows.push_back({in.items, in.buckets, tg.items, in.mask});
  }
  return rows;
}

// Shuffles users (never the order within a user) and packs consecutive
// runs of `batch_size` rows into batches.
inline std::vector<Batch> make_batches(const std::vector<TrainRow>& rows,
                                       std::size_t max_len, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    Batch b;
    b.batch = count;
    b.seq_len = max_len;
    b.items.resize(count * max_len);
    b.buckets.resize(count * max_len);
    b.targets.resize(count * max_len);
    b.mask.resize(count * max_len);
    b.loss_mask.resize(count * max_len);
    for (std::size_t u = 0; u < count; ++u) {
      const TrainRow& row = rows[order[start + u]];
      std::copy(row.items.begin(), row.items.end(), b.items.begin() + u * max_len);
      std::copy(row.buckets.begin(), row.buckets.end(), b.buckets.begin() + u * max_len);
      std::copy(row.targets.begin(), row.targets.end(), b.targets.begin() + u * max_len);
      std::copy(row.mask.begin(), row.mask.end(), b.mask.begin() + u * max_len);
      std::copy(row.mask.begin(), row.mask.end(), b.loss_mask.begin() + u * max_len);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

inline TrainResult train(const Corpus& corpus, const ModelConfig& model_cfg,
                         const TrainConfig& train_cfg, const TrainHooks& hooks = {}) {
  model_cfg.validate();
  train_cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const SplitSpec split = leave_one_out_split(corpus, train_cfg.min_len);
  const std::vector<TrainRow> rows = build_training_rows(split, model_cfg);
  if (rows.empty()) throw Error("train: training split is empty");

  ModelParams params = ModelParams::init(model_cfg, train_cfg.seed);
  if (train_cfg.freeze_zero_rhythm && params.rhythm_emb.weights.defined()) {
    std::fill(params.rhythm_emb.weights.values().begin(),
              params.rhythm_emb.weights.values().end(), 0.0);
    params.rhythm_emb.weights.set_requires_grad(false);
  }
  std::vector<Tensor> tensors = params.tensors();
  AdamState adam({train_cfg.lr});

  Rng shuffle_rng = Rng::derive(train_cfg.seed, "shuffle");
  Rng dropout_rng = Rng::derive(train_cfg.seed, "dropout");

  if (!train_cfg.run_dir.empty()) std::filesystem::create_directories(train_cfg.run_dir);

  TrainReport report;
  double best_metric = -1.0;
  std::vector<std::vector<double>> best_values;
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (Batch& batch : make_batches(rows, model_cfg.max_len, train_cfg.batch_size, shuffle_rng)) {
      for (Tensor& t : tensors) t.zero_grad();
      Tape tape;
      Tape::Scope scope(tape);
      Tensor logits = forward(params, model_cfg, batch, /*training=*/true, dropout_rng);
      Tensor loss = cross_entropy(logits, batch.targets, batch.loss_mask);
      tape.backward(loss);
      adam.step(tensors);
      std::size_t active = 0;
      for (std::uint8_t m : batch.loss_mask) active += m;
      loss_sum += loss.item() * static_cast<double>(active);
      loss_count += active;
    }
    const double epoch_loss = loss_sum / static_cast<double>(loss_count);
    report.train_loss.push_back(epoch_loss);

    double metric;
    if (hooks.valid_metric_override) {
      metric = hooks.valid_metric_override(epoch);
    } else {
      ModelScorer scorer(params, model_cfg);
      metric = evaluate(split, EvalSplit::Valid, scorer).ndcg.at(10);
    }
    report.valid_metric.push_back(metric);

    std::fprintf(stderr, "epoch=%zu loss=%.6f valid_ndcg10=%.6f\n", epoch, epoch_loss, metric);

    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, params);

    if (metric > best_metric) {
      best_metric = metric;
      report.best_epoch = epoch;
      bad_epochs = 0;
      best_values.clear();
      for (const Tensor& t : tensors) best_values.push_back(t.values());
      if (!train_cfg.run_dir.empty())
        save_checkpoint_file(train_cfg.run_dir + "/best.ckpt", params.named());
    } else if (++bad_epochs >= train_cfg.patience) {
      report.stopped_early = true;
      break;
    }
  }

  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i].values() = best_values[i];

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!train_cfg.run_dir.empty()) {
    std::ofstream f(train_cfg.run_dir + "/train_report.json");
    f << report.to_json().dump(2) << "\n";
  }
  return {std::move(params), std::move(report)};
}

}  // namespace rhythmrec
