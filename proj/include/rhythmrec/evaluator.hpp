#pragma once

// Leave-one-out full-vocabulary ranking with HIT@K / NDCG@K for
// K in {10, 15, 20}, plus the popularity baseline. Every item in the
// vocabulary is a candidate (history items are not excluded); the padding
// index 0 never competes.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rhythmrec/dataset.hpp"
#include "rhythmrec/model.hpp"

namespace rhythmrec {

inline const std::vector<std::size_t>& metric_cutoffs() {
  static const std::vector<std::size_t> ks{10, 15, 20};
  return ks;
}

struct MetricsReport {
  std::string model_tag;
  std::map<std::size_t, double> ndcg;
  std::map<std::size_t, double> hit;
  std::size_t num_users_evaluated = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["model_tag"] = model_tag;
    nlohmann::ordered_json jn, jh;
    for (std::size_t k : metric_cutoffs()) {
      jn[std::to_string(k)] = ndcg.at(k);
      jh[std::to_string(k)] = hit.at(k);
    }
    j["ndcg"] = jn;
    j["hit"] = jh;
    j["num_users"] = num_users_evaluated;
    return j;
  }
};

// 1-based rank of `target` among items 1..V: items strictly above it plus
// equal-scored items with a smaller index rank ahead (deterministic ties).
inline std::size_t rank_of_target(const std::vector<double>& scores, std::int64_t target) {
  if (target < 1 || static_cast<std::size_t>(target) >= scores.size())
    throw Error("rank_of_target: target " + std::to_string(target) +
                " outside item range [1, " + std::to_string(scores.size() - 1) + "]");
  const double ts = scores[static_cast<std::size_t>(target)];
  std::size_t rank = 1;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > ts) ++rank;
    else if (scores[i] == ts && i < static_cast<std::size_t>(target)) ++rank;
  }
  return rank;
}

inline int hit_at_k(std::size_t rank, std::size_t k) { return rank <= k ? 1 : 0; }

// Single-relevant-item NDCG: ideal DCG is 1, so 1/log2(rank+1) inside the
// cutoff and 0 outside.
inline double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

enum class EvalSplit { Valid, Test };

// Scores the full vocabulary for a batch of user prefixes. scores[u] has
// vocab_size + 1 entries; entry 0 is ignored.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string tag() const = 0;
  virtual std::vector<std::vector<double>> score_prefixes(
      const std::vector<std::vector<Event>>& prefixes) = 0;
};

class PopScorer : public Scorer {
 public:
  // Static per-item score = training-split interaction count.
  PopScorer(const Corpus& corpus, const SplitSpec& split) {
    scores_.assign(corpus.num_items() + 1, 0.0);
    for (const UserSplit& us : split.users)
      for (const Event& e : us.train) scores_[static_cast<std::size_t>(e.item)] += 1.0;
  }

  std::string tag() const override { return "pop"; }

  std::vector<std::vector<double>> score_prefixes(
      const std::vector<std::vector<Event>>& prefixes) override {
    return std::vector<std::vector<double>>(prefixes.size(), scores_);
  }

  const std::vector<double>& item_scores() const { return scores_; }

 private:
  std::vector<double> scores_;
};

class ModelScorer : public Scorer {
 public:
  ModelScorer(const ModelParams& params, const ModelConfig& cfg)
      : params_(params), cfg_(cfg), rng_(0) {}

  std::string tag() const override { return fusion_name(cfg_.fusion); }

  std::vector<std::vector<double>> score_prefixes(
      const std::vector<std::vector<Event>>& prefixes) override {
    const std::size_t n = cfg_.max_len;
    Batch b;
    b.batch = prefixes.size();
    b.seq_len = n;
    b.items.resize(b.batch * n);
    b.buckets.resize(b.batch * n);
    b.mask.resize(b.batch * n);
    for (std::size_t u = 0; u < prefixes.size(); ++u) {
      const std::vector<Event>& pre = prefixes[u];
      if (pre.empty()) throw Error("ModelScorer: empty prefix");
      std::vector<std::int64_t> items(pre.size());
      std::vector<std::int64_t> ts(pre.size());
      for (std::size_t i = 0; i < pre.size(); ++i) {
        items[i] = pre[i].item;
        ts[i] = pre[i].timestamp;
      }
      const RhythmTrack track = make_rhythm_track(ts, cfg_.rhythm_norm, cfg_.rhythm_clip);
      const PaddedSequence padded = pad_truncate(items, track.buckets, n);
      std::copy(padded.items.begin(), padded.items.end(), b.items.begin() + u * n);
      std::copy(padded.buckets.begin(), padded.buckets.end(), b.buckets.begin() + u * n);
      std::copy(padded.mask.begin(), padded.mask.end(), b.mask.begin() + u * n);
    }
    Tensor logits = forward(params_, cfg_, b, /*training=*/false, rng_);
    const std::size_t width = logits.cols();
    std::vector<std::vector<double>> out(b.batch);
    for (std::size_t u = 0; u < b.batch; ++u) {
      const double* last_row = logits.data() + (u * n + (n - 1)) * width;
      out[u].assign(last_row, last_row + width);
    }
    return out;
  }

 private:
  const ModelParams& params_;
  ModelConfig cfg_;
  Rng rng_;  // never consulted: eval-mode forward draws nothing
};

// Mean HIT@K / NDCG@K over eligible users, scored from each user's prefix
// (validation: sequence minus last two; test: sequence minus last).
inline MetricsReport evaluate(const SplitSpec& split, EvalSplit which, Scorer& scorer,
                              std::size_t eval_batch = 256) {
  MetricsReport report;
  report.model_tag = scorer.tag();
  for (std::size_t k : metric_cutoffs()) {
    report.ndcg[k] = 0.0;
    report.hit[k] = 0.0;
  }

  std::vector<std::vector<Event>> prefixes;
  std::vector<std::int64_t> targets;
  auto flush = [&] {
    if (prefixes.empty()) return;
    const auto scores = scorer.score_prefixes(prefixes);
    for (std::size_t u = 0; u < prefixes.size(); ++u) {
      const std::size_t rank = rank_of_target(scores[u], targets[u]);
      for (std::size_t k : metric_cutoffs()) {
        report.ndcg[k] += ndcg_at_k(rank, k);
        report.hit[k] += hit_at_k(rank, k);
      }
    }
    report.num_users_evaluated += prefixes.size();
    prefixes.clear();
    targets.clear();
  };

  for (const UserSplit& us : split.users) {
    if (!us.eligible()) continue;
    std::vector<Event> prefix = us.train;
    if (which == EvalSplit::Test) prefix.push_back(*us.valid_target);
    prefixes.push_back(std::move(prefix));
    targets.push_back(which == EvalSplit::Test ? us.test_target->item : us.valid_target->item);
    if (prefixes.size() == eval_batch) flush();
  }
  flush();

  if (report.num_users_evaluated == 0)
    throw Error("evaluate: no eligible users in split");
  for (std::size_t k : metric_cutoffs()) {
    report.ndcg[k] /= static_cast<double>(report.num_users_evaluated);
    report.hit[k] /= static_cast<double>(report.num_users_evaluated);
  }
  return report;
}

}  // namespace rhythmrec
