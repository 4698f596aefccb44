#pragma once

// Interaction-log ingestion: parsing, per-user chronological sequences,
// interaction-rhythm extraction and bucketization, leave-one-out splits,
// and corpus statistics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "rhythmrec/tensor.hpp"

namespace rhythmrec {

constexpr double kSecondsPerDay = 86400.0;

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;  // seconds since epoch, >= 0
};

struct Event {
  std::int32_t item = 0;  // dense index in [1, num_items]; 0 is padding
  std::int64_t timestamp = 0;
};

struct UserSequence {
  std::string user_id;
  std::vector<Event> events;  // sorted by (timestamp, input order)
};

struct Corpus {
  std::vector<UserSequence> users;                      // first-appearance order
  std::vector<std::string> item_of_index;               // [0] is the padding slot ""
  std::unordered_map<std::string, std::int32_t> index_of_item;

  std::size_t num_users() const { return users.size(); }
  std::size_t num_items() const { return item_of_index.empty() ? 0 : item_of_index.size() - 1; }
};

struct RhythmTrack {
  std::vector<double> deltas;       // days, deltas[0] == 0
  std::vector<std::int64_t> buckets;  // in [0, bucket_count-1]
};

struct UserSplit {
  std::size_t user = 0;              // index into Corpus::users
  std::vector<Event> train;          // all events except the last two (or all, if ineligible)
  std::optional<Event> valid_target; // second-to-last event
  std::optional<Event> test_target;  // last event
  bool eligible() const { return test_target.has_value(); }
};

struct SplitSpec {
  std::vector<UserSplit> users;
  std::size_t num_eligible = 0;
};

struct StatsReport {
  std::size_t unique_users = 0;
  std::size_t unique_items = 0;
  double avg_interactions_per_user = 0.0;
  double avg_interactions_per_item = 0.0;
  std::size_t max_interactions_by_user = 0;
  std::size_t max_interactions_on_item = 0;
  std::size_t total_interactions = 0;
  double same_day_consecutive_pct = 0.0;  // gap < 1 day, over consecutive pairs

  nlohmann::ordered_json to_json() const {
    return nlohmann::ordered_json{
        {"unique_users", unique_users},
        {"unique_items", unique_items},
        {"avg_interactions_per_user", avg_interactions_per_user},
        {"avg_interactions_per_item", avg_interactions_per_item},
        {"max_interactions_by_user", max_interactions_by_user},
        {"max_interactions_on_item", max_interactions_on_item},
        {"total_interactions", total_interactions},
        {"same_day_consecutive_pct", same_day_consecutive_pct}};
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t'))
    s.remove_suffix(1);
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  return s;
}

}  // namespace detail

// One `user_id,item_id,timestamp` record per non-empty line.
inline std::vector<Interaction> parse_interactions(std::istream& in, bool skip_header = false) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (skip_header && lineno == 1) continue;
    const std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    const std::size_t c1 = sv.find(',');
    const std::size_t c2 = c1 == std::string_view::npos ? std::string_view::npos
                                                        : sv.find(',', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos ||
        sv.find(',', c2 + 1) != std::string_view::npos)
      throw ParseError(lineno, "expected 3 comma-separated fields");
    const std::string_view user = detail::trim(sv.substr(0, c1));
    const std::string_view item = detail::trim(sv.substr(c1 + 1, c2 - c1 - 1));
    const std::string_view ts = detail::trim(sv.substr(c2 + 1));
    if (user.empty()) throw ParseError(lineno, "empty user_id");
    if (item.empty()) throw ParseError(lineno, "empty item_id");
    std::int64_t t = 0;
    const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), t);
    if (ec != std::errc{} || ptr != ts.data() + ts.size())
      throw ParseError(lineno, "timestamp is not an integer: '" + std::string(ts) + "'");
    if (t < 0) throw ParseError(lineno, "timestamp must be >= 0");
    out.push_back({std::string(user), std::string(item), t});
  }
  return out;
}

// Per-user sequences sorted by (timestamp, input order); dense item indices
// in first-appearance order starting at 1 (0 is reserved for padding).
inline Corpus build_corpus(const std::vector<Interaction>& interactions) {
  Corpus corpus;
  corpus.item_of_index.push_back("");  // padding slot
  std::unordered_map<std::string, std::size_t> user_slot;
  for (const Interaction& ia : interactions) {
    auto [uit, unew] = user_slot.try_emplace(ia.user_id, corpus.users.size());
    if (unew) corpus.users.push_back({ia.user_id, {}});
    auto [iit, inew] = corpus.index_of_item.try_emplace(
        ia.item_id, static_cast<std::int32_t>(corpus.item_of_index.size()));
    if (inew) corpus.item_of_index.push_back(ia.item_id);
    corpus.users[uit->second].events.push_back({iit->second, ia.timestamp});
  }
  for (UserSequence& u : corpus.users)
    std::stable_sort(u.events.begin(), u.events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  return corpus;
}

// Elapsed days between consecutive interactions; first entry is 0.
inline std::vector<double> compute_rhythm(const std::vector<std::int64_t>& timestamps) {
  if (timestamps.empty()) throw Error("compute_rhythm: need at least one timestamp");
  std::vector<double> deltas(timestamps.size());
  deltas[0] = 0.0;
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] < timestamps[i - 1])
      throw Error("compute_rhythm: timestamps decrease at position " + std::to_string(i));
    deltas[i] = static_cast<double>(timestamps[i] - timestamps[i - 1]) / kSecondsPerDay;
  }
  return deltas;
}

// bucket = min(round(delta * norm_factor), clip_max); bucket_count = clip_max + 1.
inline std::vector<std::int64_t> bucketize_rhythm(const std::vector<double>& deltas,
                                                  double norm_factor, std::int64_t clip_max) {
  if (norm_factor <= 0.0) throw Error("bucketize_rhythm: norm_factor must be > 0");
  if (clip_max < 1) throw Error("bucketize_rhythm: clip_max must be >= 1");
  std::vector<std::int64_t> buckets(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (deltas[i] < 0.0) throw Error("bucketize_rhythm: negative delta");
    const double scaled = deltas[i] * norm_factor;
    const std::int64_t b = scaled >= static_cast<double>(clip_max)
                               ? clip_max
                               : std::llround(scaled);
    buckets[i] = std::min<std::int64_t>(b, clip_max);
  }
  return buckets;
}

inline RhythmTrack make_rhythm_track(const std::vector<std::int64_t>& timestamps,
                                     double norm_factor, std::int64_t clip_max) {
  RhythmTrack track;
  track.deltas = compute_rhythm(timestamps);
  track.buckets = bucketize_rhythm(track.deltas, norm_factor, clip_max);
  return track;
}

// Users with at least `min_len` events contribute their last event as the
// test target and the second-to-last as the validation target; everything
// before trains. Shorter users train in full.
inline SplitSpec leave_one_out_split(const Corpus& corpus, std::size_t min_len = 3) {
  SplitSpec split;
  split.users.reserve(corpus.users.size());
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    const std::vector<Event>& ev = corpus.users[u].events;
    UserSplit us;
    us.user = u;
    if (ev.size() >= min_len && ev.size() >= 3) {
      us.train.assign(ev.begin(), ev.end() - 2);
      us.valid_target = ev[ev.size() - 2];
      us.test_target = ev.back();
      ++split.num_eligible;
    } else {
      us.train = ev;
    }
    split.users.push_back(std::move(us));
  }
  return split;
}

// Keep the most recent `max_len` entries, left-padding shorter inputs with
// item 0 / bucket 0. The mask marks real positions.
struct PaddedSequence {
  std::vector<std::int64_t> items;
  std::vector<std::int64_t> buckets;
  std::vector<std::uint8_t> mask;
};

inline PaddedSequence pad_truncate(const std::vector<std::int64_t>& items,
                                   const std::vector<std::int64_t>& buckets,
                                   std::size_t max_len = 50) {
  if (items.size() != buckets.size())
    throw Error("pad_truncate: items and buckets must have equal length");
  PaddedSequence p;
  p.items.assign(max_len, 0);
  p.buckets.assign(max_len, 0);
  p.mask.assign(max_len, 0);
  const std::size_t n = items.size();
  const std::size_t keep = std::min(n, max_len);
  const std::size_t src = n - keep;   // drop the oldest on overflow
  const std::size_t dst = max_len - keep;  // left padding
  for (std::size_t i = 0; i < keep; ++i) {
    p.items[dst + i] = items[src + i];
    p.buckets[dst + i] = buckets[src + i];
    p.mask[dst + i] = 1;
  }
  return p;
}

inline StatsReport dataset_stats(const Corpus& corpus) {
  StatsReport r;
  r.unique_users = corpus.num_users();
  r.unique_items = corpus.num_items();
  std::vector<std::size_t> per_item(corpus.item_of_index.size(), 0);
  std::size_t pairs = 0, same_day = 0;
  for (const UserSequence& u : corpus.users) {
    r.total_interactions += u.events.size();
    r.max_interactions_by_user = std::max(r.max_interactions_by_user, u.events.size());
    for (const Event& e : u.events) ++per_item[static_cast<std::size_t>(e.item)];
    for (std::size_t i = 1; i < u.events.size(); ++i) {
      ++pairs;
      const double gap_days =
          static_cast<double>(u.events[i].timestamp - u.events[i - 1].timestamp) / kSecondsPerDay;
      if (gap_days < 1.0) ++same_day;
    }
  }
  for (std::size_t c : per_item) r.max_interactions_on_item = std::max(r.max_interactions_on_item, c);
  if (r.unique_users > 0)
    r.avg_interactions_per_user =
        static_cast<double>(r.total_interactions) / static_cast<double>(r.unique_users);
  if (r.unique_items > 0)
    r.avg_interactions_per_item =
        static_cast<double>(r.total_interactions) / static_cast<double>(r.unique_items);
  if (pairs > 0)
    r.same_day_consecutive_pct =
        100.0 * static_cast<double>(same_day) / static_cast<double>(pairs);
  return r;
}

}  // namespace rhythmrec
