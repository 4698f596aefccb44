#pragma once

// Deterministic synthetic interaction corpora whose next-item choice
// depends on the class of the time gap that arrives with it (short vs
// long against a day threshold). Gap classes follow a sticky two-state
// regime per user, so the visible rhythm history is informative about
// the next gap class; a rhythm-blind ranker is capped by the class
// marginals. Output is the dataset module's input text format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "rhythmrec/rng.hpp"
#include "rhythmrec/tensor.hpp"

namespace rhythmrec::synth {

struct GapRule {
  enum class Kind { Increment, Permutation, Constant };
  Kind kind = Kind::Increment;
  std::int64_t param = 1;  // step / permutation salt / fixed target item

  static GapRule parse(const std::string& s) {
    const auto colon = s.find(':');
    const std::string kind = s.substr(0, colon);
    const std::int64_t param =
        colon == std::string::npos ? 1 : std::stoll(s.substr(colon + 1));
    if (kind == "inc") return {Kind::Increment, param};
    if (kind == "perm") return {Kind::Permutation, param};
    if (kind == "const") return {Kind::Constant, param};
    throw Error("unknown gap rule '" + s +
                "' (expected inc:<step>, perm:<salt> or const:<item>)");
  }
};

struct SynthConfig {
  std::size_t num_users = 3000;
  std::size_t num_items = 200;
  std::size_t min_len = 8;   // sequence length range, inclusive
  std::size_t max_len = 20;
  double gap_threshold_days = 7.0;
  GapRule short_gap_rule{GapRule::Kind::Increment, 1};
  GapRule long_gap_rule{GapRule::Kind::Increment, 2};
  double noise_prob = 0.1;
  double regime_persistence = 0.85;  // P(next gap class == previous)
  std::uint64_t seed = 1;

  void validate() const {
    if (num_users == 0 || num_items == 0) throw Error("synth: users and items must be > 0");
    if (min_len < 1 || max_len < min_len) throw Error("synth: bad seq_len range");
    if (gap_threshold_days <= 0.0) throw Error("synth: threshold must be > 0");
    if (noise_prob < 0.0 || noise_prob >= 1.0) throw Error("synth: noise_prob must be in [0, 1)");
    if (regime_persistence <= 0.0 || regime_persistence >= 1.0)
      throw Error("synth: regime_persistence must be in (0, 1)");
  }
};

// Deterministic next-item functions of (current item, gap class), with
// permutation rules materialized once.
class RuleSet {
 public:
  explicit RuleSet(const SynthConfig& cfg) : cfg_(cfg) {
    short_map_ = materialize(cfg.short_gap_rule);
    long_map_ = materialize(cfg.long_gap_rule);
  }

  bool is_long(double gap_days) const { return gap_days >= cfg_.gap_threshold_days; }

  std::int64_t next_item(std::int64_t current, double gap_days) const {
    const auto& map = is_long(gap_days) ? long_map_ : short_map_;
    return map[static_cast<std::size_t>(current - 1)];
  }

 private:
  std::vector<std::int64_t> materialize(const GapRule& rule) const {
    const std::int64_t v = static_cast<std::int64_t>(cfg_.num_items);
    std::vector<std::int64_t> map(cfg_.num_items);
    if (rule.kind == GapRule::Kind::Increment) {
      for (std::int64_t c = 1; c <= v; ++c)
        map[static_cast<std::size_t>(c - 1)] = ((c - 1 + rule.param) % v + v) % v + 1;
    } else if (rule.kind == GapRule::Kind::Constant) {
      if (rule.param < 1 || rule.param > v)
        throw Error("const gap rule target out of item range");
      std::fill(map.begin(), map.end(), rule.param);
    } else {
      for (std::int64_t c = 1; c <= v; ++c) map[static_cast<std::size_t>(c - 1)] = c;
      Rng rng = Rng::derive(cfg_.seed ^ 0x72756c65ULL, static_cast<std::uint64_t>(rule.param));
      rng.shuffle(map);
    }
    return map;
  }

  SynthConfig cfg_;
  std::vector<std::int64_t> short_map_, long_map_;
};

namespace detail {

// Integer-day geometric draw, floor(log(1-u)/log(1-p)), capped.
inline std::int64_t geometric_days(Rng& rng, double p, std::int64_t cap) {
  double u = rng.uniform();
  while (u >= 1.0) u = rng.uniform();
  const std::int64_t g =
      static_cast<std::int64_t>(std::log(1.0 - u) / std::log(1.0 - p));
  return std::min(g, cap);
}

// Short gaps land in {0, 1, 2} days, long gaps in [8, 48]; both sides of
// the 7-day default threshold, never on it.
inline std::int64_t draw_gap_days(Rng& rng, bool long_mode) {
  if (long_mode) return 8 + geometric_days(rng, 0.25, 40);
  return geometric_days(rng, 0.6, 2);
}

}  // namespace detail

constexpr std::int64_t kSynthEpoch = 1500000000;  // per-user base timestamp

// Writes `user_id,item_id,timestamp` lines; byte-identical for equal
// configs. user u gets its own derived RNG stream, so generation order
// is immaterial.
inline void generate(const SynthConfig& cfg, std::ostream& out) {
  cfg.validate();
  const RuleSet rules(cfg);
  const std::int64_t v = static_cast<std::int64_t>(cfg.num_items);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(u) + 1);
    const std::size_t len =
        cfg.min_len + static_cast<std::size_t>(rng.below(cfg.max_len - cfg.min_len + 1));
    std::int64_t item = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(v)));
    std::int64_t t = kSynthEpoch + static_cast<std::int64_t>(u);
    bool long_mode = rng.uniform() < 0.5;
    const std::string user = "u" + std::to_string(u + 1);
    out << user << ",i" << item << "," << t << "\n";
    for (std::size_t i = 1; i < len; ++i) {
      if (rng.uniform() >= cfg.regime_persistence) long_mode = !long_mode;
      const std::int64_t gap_days = detail::draw_gap_days(rng, long_mode);
      t += gap_days * 86400;
      if (rng.uniform() < cfg.noise_prob)
        item = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(v)));
      else
        item = rules.next_item(item, static_cast<double>(gap_days));
      out << user << ",i" << item << "," << t << "\n";
    }
  }
}

}  // namespace rhythmrec::synth
