#pragma once

// Flat `key = value` run configuration ('#' starts a comment). One file
// fully describes a run: dataset location, rhythm normalization, model
// preset and overrides, fusion kind, and training knobs.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <string>

#include "rhythmrec/model.hpp"
#include "rhythmrec/trainer.hpp"

namespace rhythmrec {

class RunConfig {
 public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "data.path",        "data.header",        "data.min_len",
        "rhythm.norm",      "rhythm.clip",
        "model.preset",     "model.fusion",       "model.num_layers",
        "model.num_heads",  "model.hidden_dim",   "model.inner_dim",
        "model.dropout",    "model.attention_dropout", "model.max_len",
        "train.epochs",     "train.patience",     "train.batch_size",
        "train.lr",         "train.seed",
        "run.dir",
    };
    return keys;
  }

  static RunConfig parse(std::istream& in) {
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string_view sv = trim(line);
      if (sv.empty()) continue;
      const auto eq = sv.find('=');
      if (eq == std::string_view::npos)
        throw ParseError(lineno, "expected 'key = value'");
      const std::string key{trim(sv.substr(0, eq))};
      const std::string value{trim(sv.substr(eq + 1))};
      if (!known_keys().count(key))
        throw Error("unknown config key '" + key + "'");
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static RunConfig parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config file: " + path);
    return parse(f);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback = "") const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw Error("config key '" + key + "' is required");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw Error("");
      return v;
    } catch (...) {
      throw Error("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const std::int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw Error("");
      return v;
    } catch (...) {
      throw Error("config key '" + key + "': expected an integer, got '" + it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw Error("config key '" + key + "': expected true/false, got '" + it->second + "'");
  }

  // vocab_size is filled in later from the corpus.
  ModelConfig model_config() const {
    ModelConfig cfg;
    apply_preset(cfg, get_string("model.preset", "lightsans-cfg"));
    cfg.fusion = fusion_from_name(get_string("model.fusion", "none"));
    cfg.num_layers = checked_size("model.num_layers", cfg.num_layers);
    cfg.num_heads = checked_size("model.num_heads", cfg.num_heads);
    cfg.hidden_dim = checked_size("model.hidden_dim", cfg.hidden_dim);
    cfg.inner_dim = checked_size("model.inner_dim", cfg.inner_dim);
    cfg.dropout = get_double("model.dropout", cfg.dropout);
    cfg.attention_dropout = get_double("model.attention_dropout", cfg.attention_dropout);
    cfg.max_len = checked_size("model.max_len", cfg.max_len);
    cfg.rhythm_norm = get_double("rhythm.norm", cfg.rhythm_norm);
    cfg.rhythm_clip = get_int("rhythm.clip", cfg.rhythm_clip);
    return cfg;
  }

  TrainConfig train_config() const {
    TrainConfig cfg;
    cfg.epochs = checked_size("train.epochs", cfg.epochs);
    cfg.patience = checked_size("train.patience", cfg.patience);
    cfg.batch_size = checked_size("train.batch_size", cfg.batch_size);
    cfg.lr = get_double("train.lr", cfg.lr);
    cfg.seed = static_cast<std::uint64_t>(get_int("train.seed", 42));
    cfg.min_len = checked_size("data.min_len", cfg.min_len);
    cfg.run_dir = get_string("run.dir");
    return cfg;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.remove_suffix(1);
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    return s;
  }

  std::size_t checked_size(const std::string& key, std::size_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw Error("config key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace rhythmrec
