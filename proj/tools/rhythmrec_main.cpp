// rhythmrec command-line interface: stats | synth | train | evaluate |
// selfcheck. Machine-readable output goes to stdout, logs to stderr.
// Exit codes: 0 success, 1 selfcheck failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "rhythmrec/rhythmrec.hpp"

namespace rr = rhythmrec;

namespace {

rr::Corpus load_corpus(const std::string& path, bool header) {
  if (!std::filesystem::exists(path))
    throw rr::Error("input file does not exist: " + path);
  std::ifstream f(path);
  if (!f) throw rr::Error("cannot open input file: " + path);
  return rr::build_corpus(rr::parse_interactions(f, header));
}

int cmd_stats(const std::string& path, bool header) {
  const rr::Corpus corpus = load_corpus(path, header);
  std::cout << rr::dataset_stats(corpus).to_json().dump(2) << "\n";
  return 0;
}

int cmd_synth(const rr::synth::SynthConfig& cfg, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    rr::synth::generate(cfg, std::cout);
  } else {
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw rr::Error("cannot open output file: " + out_path);
    rr::synth::generate(cfg, f);
  }
  return 0;
}

int cmd_train(const std::string& config_path, bool freeze_zero_rhythm) {
  const rr::RunConfig run = rr::RunConfig::parse_file(config_path);
  const rr::Corpus corpus = load_corpus(run.require_string("data.path"),
                                        run.get_bool("data.header", false));
  rr::ModelConfig model_cfg = run.model_config();
  model_cfg.vocab_size = corpus.num_items();
  rr::TrainConfig train_cfg = run.train_config();
  train_cfg.freeze_zero_rhythm = freeze_zero_rhythm;
  if (train_cfg.run_dir.empty()) throw rr::Error("config key 'run.dir' is required");

  const rr::TrainResult result = rr::train(corpus, model_cfg, train_cfg);
  std::cout << result.report.to_json().dump(2) << "\n";
  std::cerr << "checkpoint written to " << train_cfg.run_dir << "/best.ckpt\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint,
                 const std::string& split_name, const std::string& baseline) {
  const rr::RunConfig run = rr::RunConfig::parse_file(config_path);
  const rr::Corpus corpus = load_corpus(run.require_string("data.path"),
                                        run.get_bool("data.header", false));
  const rr::TrainConfig train_cfg = run.train_config();
  const rr::SplitSpec split = rr::leave_one_out_split(corpus, train_cfg.min_len);
  const rr::EvalSplit which =
      split_name == "valid" ? rr::EvalSplit::Valid : rr::EvalSplit::Test;

  rr::MetricsReport report;
  if (baseline == "pop") {
    rr::PopScorer scorer(corpus, split);
    report = rr::evaluate(split, which, scorer);
  } else {
    if (checkpoint.empty()) throw rr::Error("--checkpoint is required unless --baseline pop");
    rr::ModelConfig model_cfg = run.model_config();
    model_cfg.vocab_size = corpus.num_items();
    rr::ModelParams params = rr::ModelParams::init(model_cfg, train_cfg.seed);
    params.load_from(rr::load_checkpoint_file(checkpoint));
    rr::ModelScorer scorer(params, model_cfg);
    report = rr::evaluate(split, which, scorer);
  }
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

int cmd_selfcheck(bool inject_bug) {
  const rr::SelfCheckReport report = rr::run_selfcheck(inject_bug);
  for (const auto& c : report.cases)
    std::printf("selfcheck %-24s checked=%zu max_rel_err=%.3e tol=%.0e %s\n", c.name.c_str(),
                c.result.checked, c.result.max_rel_err, c.tolerance,
                c.result.ok ? "PASS" : ("FAIL worst=" + c.result.worst).c_str());
  if (!report.all_ok()) {
    std::fprintf(stderr, "selfcheck: FAILED\n");
    return 1;
  }
  std::printf("selfcheck: all %zu checks passed\n", report.cases.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rhythm-morphed positional embeddings for next-item recommendation"};
  app.require_subcommand(1);

  // stats
  std::string stats_path;
  bool stats_header = false;
  auto* stats = app.add_subcommand("stats", "dataset descriptors as JSON");
  stats->add_option("input", stats_path, "interaction log (user_id,item_id,timestamp)")
      ->required();
  stats->add_flag("--header", stats_header, "skip the first line");

  // synth
  rr::synth::SynthConfig syn;
  std::string synth_out = "-";
  std::string short_rule = "inc:1", long_rule = "inc:2";
  auto* synth = app.add_subcommand("synth", "generate a synthetic interaction log");
  synth->add_option("--out", synth_out, "output path ('-' for stdout)");
  synth->add_option("--users", syn.num_users);
  synth->add_option("--items", syn.num_items);
  synth->add_option("--min-len", syn.min_len);
  synth->add_option("--max-len", syn.max_len);
  synth->add_option("--threshold-days", syn.gap_threshold_days);
  synth->add_option("--noise", syn.noise_prob);
  synth->add_option("--persistence", syn.regime_persistence);
  synth->add_option("--seed", syn.seed);
  synth->add_option("--short-rule", short_rule, "inc:<step> or perm:<salt>");
  synth->add_option("--long-rule", long_rule, "inc:<step> or perm:<salt>");

  // train
  std::string train_config;
  bool freeze_zero_rhythm = false;
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", train_config)->required();
  train->add_flag("--freeze-zero-rhythm", freeze_zero_rhythm,
                  "debug: zero-initialize and freeze the rhythm table");

  // evaluate
  std::string eval_config, eval_checkpoint, eval_split = "test", eval_baseline;
  auto* evaluate = app.add_subcommand("evaluate", "rank held-out targets and report metrics");
  evaluate->add_option("--config", eval_config)->required();
  evaluate->add_option("--checkpoint", eval_checkpoint);
  evaluate->add_option("--split", eval_split)->check(CLI::IsMember({"valid", "test"}));
  evaluate->add_option("--baseline", eval_baseline)->check(CLI::IsMember({"pop"}));

  // selfcheck
  bool inject_bug = false;
  auto* selfcheck = app.add_subcommand("selfcheck", "finite-difference gradient verification");
  selfcheck->add_flag("--inject-adjoint-bug", inject_bug,
                      "test hook: corrupt one adjoint to prove the check detects it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (stats->parsed()) return cmd_stats(stats_path, stats_header);
    if (synth->parsed()) {
      syn.short_gap_rule = rr::synth::GapRule::parse(short_rule);
      syn.long_gap_rule = rr::synth::GapRule::parse(long_rule);
      return cmd_synth(syn, synth_out);
    }
    if (train->parsed()) return cmd_train(train_config, freeze_zero_rhythm);
    if (evaluate->parsed())
      return cmd_evaluate(eval_config, eval_checkpoint, eval_split, eval_baseline);
    if (selfcheck->parsed()) return cmd_selfcheck(inject_bug);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
