#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

std::string binary_path() {
  const char* env = std::getenv("RHYTHMREC_BIN");
  REQUIRE(env != nullptr);
  return env;
}

RunResult run_cli(const std::string& args) {
  const std::string cmd = binary_path() + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path make_temp_dir() {
  const fs::path dir =
      fs::temp_directory_path() / ("rhythmrec_cli_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(std::rand()));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("stats on a fixture matches hand counts") {
  const fs::path dir = make_temp_dir();
  const fs::path file = dir / "tiny.csv";
  std::ofstream(file) << "u1,A,0\n"
                         "u1,B,43200\n"
                         "u1,C,259200\n"
                         "u2,A,100\n"
                         "u2,A,200\n";
  const RunResult r = run_cli("stats " + file.string());
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["unique_users"] == 2);
  CHECK(j["unique_items"] == 3);
  CHECK(j["total_interactions"] == 5);
  CHECK(j["max_interactions_by_user"] == 3);
  CHECK(j["max_interactions_on_item"] == 3);
  // same-day pairs: u1 0->43200 yes, 43200->259200 no; u2 both within a day
  CHECK(j["same_day_consecutive_pct"].get<double>() == Catch::Approx(100.0 * 2.0 / 3.0));
  fs::remove_all(dir);
}

TEST_CASE("stats on an empty file returns an all-zero report") {
  const fs::path dir = make_temp_dir();
  const fs::path file = dir / "empty.csv";
  std::ofstream(file) << "";
  const RunResult r = run_cli("stats " + file.string());
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["unique_users"] == 0);
  CHECK(j["total_interactions"] == 0);
  fs::remove_all(dir);
}

TEST_CASE("missing input and bad usage exit with code 2") {
  CHECK(run_cli("stats /nonexistent/file.csv").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("train --config /nonexistent/run.cfg").exit_code == 2);
}

TEST_CASE("synth output is byte-identical across runs and parses") {
  const RunResult a = run_cli("synth --users 20 --items 10 --seed 5");
  const RunResult b = run_cli("synth --users 20 --items 10 --seed 5");
  REQUIRE(a.exit_code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.find("u1,i") == 0);

  const fs::path dir = make_temp_dir();
  const fs::path file = dir / "synth.csv";
  REQUIRE(run_cli("synth --users 20 --items 10 --seed 5 --out " + file.string()).exit_code == 0);
  std::ifstream in(file);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(contents == a.out);
  fs::remove_all(dir);
}

TEST_CASE("train then evaluate round trip through config and checkpoint") {
  const fs::path dir = make_temp_dir();
  const fs::path data = dir / "corpus.csv";
  REQUIRE(run_cli("synth --users 60 --items 15 --min-len 5 --max-len 9 --seed 11 --out " +
                  data.string())
              .exit_code == 0);

  const fs::path cfg_path = dir / "run.cfg";
  std::ofstream(cfg_path) << "data.path = " << data.string() << "\n"
                          << "model.fusion = bf\n"
                          << "model.num_layers = 1\n"
                          << "model.hidden_dim = 16\n"
                          << "model.inner_dim = 32\n"
                          << "model.max_len = 10\n"
                          << "model.dropout = 0.1\n"
                          << "model.attention_dropout = 0.1\n"
                          << "rhythm.clip = 20\n"
                          << "train.epochs = 3\n"
                          << "train.patience = 3\n"
                          << "train.batch_size = 16\n"
                          << "train.seed = 21\n"
                          << "run.dir = " << (dir / "run").string() << "\n";

  const RunResult t = run_cli("train --config " + cfg_path.string());
  REQUIRE(t.exit_code == 0);
  const auto report = nlohmann::json::parse(t.out);
  CHECK(report["train_loss"].size() == 3);
  REQUIRE(fs::exists(dir / "run" / "best.ckpt"));
  REQUIRE(fs::exists(dir / "run" / "train_report.json"));

  const std::string eval_args = "evaluate --config " + cfg_path.string() + " --checkpoint " +
                                (dir / "run" / "best.ckpt").string() + " --split test";
  const RunResult e1 = run_cli(eval_args);
  REQUIRE(e1.exit_code == 0);
  const RunResult e2 = run_cli(eval_args);
  CHECK(e1.out == e2.out);  // byte-identical
  const auto metrics = nlohmann::json::parse(e1.out);
  CHECK(metrics["model_tag"] == "bf");
  CHECK(metrics["num_users"] == 60);

  // pop baseline needs no checkpoint
  const RunResult p =
      run_cli("evaluate --config " + cfg_path.string() + " --baseline pop --split test");
  REQUIRE(p.exit_code == 0);
  CHECK(nlohmann::json::parse(p.out)["model_tag"] == "pop");

  fs::remove_all(dir);
}

TEST_CASE("missing corpus path in a valid config exits with code 2") {
  const fs::path dir = make_temp_dir();
  const fs::path cfg_path = dir / "run.cfg";
  std::ofstream(cfg_path) << "data.path = " << (dir / "missing.csv").string() << "\n"
                          << "run.dir = " << (dir / "run").string() << "\n";
  CHECK(run_cli("train --config " + cfg_path.string()).exit_code == 2);
  fs::remove_all(dir);
}

TEST_CASE("single-item corpus evaluates to perfect metrics") {
  // with one real item every held-out target ranks first, so any trained
  // checkpoint scores all metrics at exactly 1.0
  const fs::path dir = make_temp_dir();
  const fs::path data = dir / "corpus.csv";
  {
    std::ofstream f(data);
    for (int u = 0; u < 8; ++u)
      for (int i = 0; i < 5; ++i)
        f << "u" << u << ",onlyitem," << (1000 + 86400 * i + u) << "\n";
  }
  const fs::path cfg_path = dir / "run.cfg";
  std::ofstream(cfg_path) << "data.path = " << data.string() << "\n"
                          << "model.num_layers = 1\n"
                          << "model.hidden_dim = 8\n"
                          << "model.inner_dim = 16\n"
                          << "model.max_len = 5\n"
                          << "rhythm.clip = 10\n"
                          << "train.epochs = 1\n"
                          << "train.patience = 1\n"
                          << "train.seed = 1\n"
                          << "run.dir = " << (dir / "run").string() << "\n";
  REQUIRE(run_cli("train --config " + cfg_path.string()).exit_code == 0);
  const RunResult r = run_cli("evaluate --config " + cfg_path.string() + " --checkpoint " +
                              (dir / "run" / "best.ckpt").string() + " --split test");
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  for (const char* k : {"10", "15", "20"}) {
    CHECK(j["ndcg"][k] == 1.0);
    CHECK(j["hit"][k] == 1.0);
  }
  fs::remove_all(dir);
}

TEST_CASE("invalid config keys are reported with exit code 2") {
  const fs::path dir = make_temp_dir();
  const fs::path cfg_path = dir / "bad.cfg";
  std::ofstream(cfg_path) << "model.fusionn = bf\n";
  const RunResult r = run_cli("train --config " + cfg_path.string());
  CHECK(r.exit_code == 2);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint incompatible with config exits with code 2") {
  const fs::path dir = make_temp_dir();
  const fs::path data = dir / "corpus.csv";
  REQUIRE(run_cli("synth --users 30 --items 8 --min-len 4 --max-len 6 --seed 3 --out " +
                  data.string())
              .exit_code == 0);
  auto write_cfg = [&](const fs::path& p, int hidden) {
    std::ofstream(p) << "data.path = " << data.string() << "\n"
                     << "model.num_layers = 1\n"
                     << "model.hidden_dim = " << hidden << "\n"
                     << "model.inner_dim = 32\n"
                     << "model.max_len = 8\n"
                     << "model.dropout = 0\n"
                     << "model.attention_dropout = 0\n"
                     << "rhythm.clip = 20\n"
                     << "train.epochs = 1\n"
                     << "train.patience = 1\n"
                     << "train.seed = 2\n"
                     << "run.dir = " << (dir / "run").string() << "\n";
  };
  write_cfg(dir / "a.cfg", 16);
  REQUIRE(run_cli("train --config " + (dir / "a.cfg").string()).exit_code == 0);
  write_cfg(dir / "b.cfg", 32);
  const RunResult r = run_cli("evaluate --config " + (dir / "b.cfg").string() + " --checkpoint " +
                              (dir / "run" / "best.ckpt").string());
  CHECK(r.exit_code == 2);
  fs::remove_all(dir);
}

TEST_CASE("selfcheck passes clean and fails with the injected adjoint bug") {
  const RunResult ok = run_cli("selfcheck");
  REQUIRE(ok.exit_code == 0);
  CHECK(ok.out.find("fusion-op=bf") != std::string::npos);
  CHECK(ok.out.find("fusion-op=mf") != std::string::npos);
  CHECK(ok.out.find("fusion-op=gf") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);

  const RunResult bad = run_cli("selfcheck --inject-adjoint-bug");
  CHECK(bad.exit_code == 1);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("freeze-zero-rhythm reproduces the fusion-none loss trace") {
  const fs::path dir = make_temp_dir();
  const fs::path data = dir / "corpus.csv";
  REQUIRE(run_cli("synth --users 40 --items 12 --min-len 5 --max-len 8 --seed 19 --out " +
                  data.string())
              .exit_code == 0);
  auto write_cfg = [&](const fs::path& p, const std::string& fusion, const std::string& run) {
    std::ofstream(p) << "data.path = " << data.string() << "\n"
                     << "model.fusion = " << fusion << "\n"
                     << "model.num_layers = 1\n"
                     << "model.hidden_dim = 16\n"
                     << "model.inner_dim = 32\n"
                     << "model.max_len = 8\n"
                     << "rhythm.clip = 20\n"
                     << "train.epochs = 2\n"
                     << "train.patience = 2\n"
                     << "train.seed = 33\n"
                     << "run.dir = " << (dir / run).string() << "\n";
  };
  write_cfg(dir / "none.cfg", "none", "run_none");
  write_cfg(dir / "bf.cfg", "bf", "run_bf");
  const RunResult none = run_cli("train --config " + (dir / "none.cfg").string());
  const RunResult bf =
      run_cli("train --config " + (dir / "bf.cfg").string() + " --freeze-zero-rhythm");
  REQUIRE(none.exit_code == 0);
  REQUIRE(bf.exit_code == 0);
  const auto jn = nlohmann::json::parse(none.out);
  const auto jb = nlohmann::json::parse(bf.out);
  CHECK(jn["train_loss"] == jb["train_loss"]);
  CHECK(jn["valid_ndcg10"] == jb["valid_ndcg10"]);
  fs::remove_all(dir);
}
