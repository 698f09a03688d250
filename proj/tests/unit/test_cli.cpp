#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "rwd/binary_io.hpp"
#include "rwd/cli/app.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run rwd_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = rwd::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("rwd_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

json read_json(const std::string& path) { return json::parse(rwd::io::read_text(path)); }

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t na = 0, nb = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++na;
    const auto other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || rwd::io::read_file(e.path()) != rwd::io::read_file(other)) return false;
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) nb += e.is_regular_file();
  return na == nb;
}

const std::vector<std::string> kSmall{"--tasks", "1", "--episodes", "9", "--tokens-per-view", "4",
                                      "--token-dim", "8", "--goal-dim", "8"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Small dataset plus a briefly trained checkpoint, shared across cases.
struct Trained {
  TempDir dir;
  std::string data = dir / "data";
  std::string model = dir / "run";
  Trained() {
    REQUIRE(rwd_cli(with({"gen-data", "--out", data}, kSmall)).code == 0);
    const auto r = rwd_cli({"train", "--data", data, "--out", model, "--epochs", "8",
                            "--pairs-per-epoch", "512", "--head-widths", "32,16,8,8",
                            "--film-widths", "16"});
    REQUIRE(r.code == 0);
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data is deterministic") {
  TempDir d;
  const std::vector<std::string> flags{"--tasks", "4", "--variants", "--episodes", "40", "--seed", "7"};
  REQUIRE(rwd_cli(with({"gen-data", "--out", d / "a"}, flags)).code == 0);
  REQUIRE(rwd_cli(with({"gen-data", "--out", d / "b"}, flags)).code == 0);
  CHECK(same_tree(d.path / "a", d.path / "b"));
  const auto m = read_json(d / "a/manifest.json");
  CHECK(m["generation"]["episodes"] == 40);
  CHECK(m["generation"]["seed"] == 7);
  CHECK(m["tasks"].size() == 8);
}

TEST_CASE("usage errors exit with 2") {
  TempDir d;
  CHECK(rwd_cli({"gen-data", "--out", d / "x", "--episodes", "0"}).code == 2);
  CHECK(rwd_cli({"gen-data", "--out", d / "x", "--no-such-flag"}).code == 2);
  CHECK(rwd_cli({"gen-data"}).code == 2);
  CHECK(rwd_cli({}).code == 2);
  CHECK(rwd_cli({"frobnicate"}).code == 2);
  CHECK(rwd_cli({"--help"}).code == 0);
  CHECK(rwd_cli({"calibrate", "--data", d / "x", "--out", d / "r.json", "--variant", "platt"}).code == 2);
}

TEST_CASE("config file sits under explicit flags") {
  TempDir d;
  rwd::io::write_text(d.path / "cfg.json",
                      R"({"episodes": 3, "tasks": 1, "variants": false, "horizon": 7, "token-dim": 8})");
  REQUIRE(rwd_cli({"gen-data", "--config", d / "cfg.json", "--out", d / "ds", "--horizon", "9"}).code == 0);
  const auto g = read_json(d / "ds/manifest.json");
  CHECK(g["generation"]["episodes"] == 3);
  CHECK(g["generation"]["variants"] == false);
  CHECK(g["generation"]["horizon"] == 9);
  CHECK(g["geometry"]["token_dim"] == 8);

  rwd::io::write_text(d.path / "bad.json", R"({"episodes": 3, "colour": "red"})");
  const auto r = rwd_cli({"gen-data", "--config", d / "bad.json", "--out", d / "ds2"});
  CHECK(r.code == 2);
  CHECK(r.err.find("colour") != std::string::npos);
  rwd::io::write_text(d.path / "broken.json", "{");
  CHECK(rwd_cli({"gen-data", "--config", d / "broken.json", "--out", d / "ds3"}).code == 2);
}

TEST_CASE("train writes a checkpoint and a versioned log") {
  auto& t = trained();
  CHECK(fs::exists(t.model + "/model.rwdm"));
  std::ifstream log(t.model + "/train_log.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = json::parse(line);
    CHECK(j["schema_version"] == 1);
    CHECK(j["epoch"] == ++lines);
    CHECK(j.contains("mean_loss"));
    CHECK(j.contains("heldout_accuracy"));
    CHECK(j.contains("best"));
  }
  CHECK(lines == 8);
  const auto s = read_json(t.model + "/train_summary.json");
  CHECK(s["best_epoch"].get<int>() >= 1);
}

TEST_CASE("train is reproducible apart from the sidecar log") {
  auto& t = trained();
  TempDir d;
  const std::vector<std::string> args{"train", "--data", t.data, "--out", d / "again",
                                      "--epochs", "8", "--pairs-per-epoch", "512",
                                      "--head-widths", "32,16,8,8", "--film-widths", "16"};
  REQUIRE(rwd_cli(args).code == 0);
  for (const char* f : {"model.rwdm", "train_log.jsonl", "train_summary.json"}) {
    CHECK(rwd::io::read_file(t.model + "/" + f) == rwd::io::read_file(d / "again/" + f));
  }
}

TEST_CASE("train rejects data without valid pairs") {
  TempDir d;
  REQUIRE(rwd_cli(with({"gen-data", "--out", d / "ds"}, kSmall)).code == 0);
  const auto r = rwd_cli({"train", "--data", d / "ds", "--out", d / "m", "--pair-min-gap", "2"});
  CHECK(r.code == 3);
}

TEST_CASE("eval report layout") {
  auto& t = trained();
  TempDir d;
  REQUIRE(rwd_cli({"eval", "--checkpoint", t.model + "/model.rwdm", "--data", t.data, "--out",
                   d / "all.json"}).code == 0);
  const auto all = read_json(d / "all.json");
  CHECK(all["schema_version"] == 1);
  for (const char* k : {"accuracy", "prompt_variation", "task_variation", "kendall_tau", "calibration"}) {
    CHECK(all.contains(k));
  }
  CHECK(all["accuracy"]["first_train_prompt"]["bins"].size() == 20);
  CHECK(all["accuracy"]["best_of_prompts"].get<double>() >=
        all["accuracy"]["averaged_over_prompts"].get<double>());
}

TEST_CASE("own training data scores at least as well as held-out bins") {
  TempDir d;
  REQUIRE(rwd_cli({"gen-data", "--out", d / "ds", "--tasks", "1", "--episodes", "18",
                   "--tokens-per-view", "4", "--token-dim", "8", "--goal-dim", "8"}).code == 0);
  double own = 0.0, held = 0.0;
  for (int seed = 1; seed <= 3; ++seed) {
    const std::string m = d / ("m" + std::to_string(seed));
    REQUIRE(rwd_cli({"train", "--data", d / "ds", "--out", m, "--epochs", "40",
                     "--pairs-per-epoch", "512", "--head-widths", "32,16,8,8", "--film-widths", "16",
                     "--heldout-fraction", "0.3", "--seed", std::to_string(seed)}).code == 0);
    REQUIRE(rwd_cli({"eval", "--checkpoint", m + "/model.rwdm", "--data", d / "ds", "--out",
                     d / "a.json"}).code == 0);
    REQUIRE(rwd_cli({"eval", "--checkpoint", m + "/model.rwdm", "--data", d / "ds", "--out",
                     d / "h.json", "--split", "heldout", "--heldout-fraction", "0.3"}).code == 0);
    own += read_json(d / "a.json")["accuracy"]["first_train_prompt"]["overall"].get<double>();
    held += read_json(d / "h.json")["accuracy"]["first_train_prompt"]["overall"].get<double>();
  }
  CHECK(own >= held);
}

TEST_CASE("oracle scores give perfect rank metrics") {
  TempDir d;
  REQUIRE(rwd_cli(with({"gen-data", "--out", d / "ds", "--variants"}, kSmall)).code == 0);
  REQUIRE(rwd_cli({"eval", "--oracle-scores", "--data", d / "ds", "--out", d / "r.json"}).code == 0);
  const auto r = read_json(d / "r.json");
  CHECK(r["scorer"] == "oracle");
  CHECK(r["accuracy"]["first_train_prompt"]["overall"] == 1.0);
  for (const auto& e : r["kendall_tau"]["trajectories"]) CHECK(e["tau"] == 1.0);
}

TEST_CASE("eval error paths") {
  auto& t = trained();
  TempDir d;
  // Held-out fraction 0 leaves nothing to evaluate.
  CHECK(rwd_cli({"eval", "--checkpoint", t.model + "/model.rwdm", "--data", t.data, "--out",
                 d / "r.json", "--split", "heldout", "--heldout-fraction", "0"}).code == 3);
  REQUIRE(rwd_cli({"gen-data", "--out", d / "wide", "--tasks", "1", "--episodes", "3",
                   "--token-dim", "12"}).code == 0);
  const auto r = rwd_cli({"eval", "--checkpoint", t.model + "/model.rwdm", "--data", d / "wide",
                          "--out", d / "r.json"});
  CHECK(r.code == 3);
  CHECK(r.err.find("geometry") != std::string::npos);
  CHECK(rwd_cli({"eval", "--data", t.data, "--out", d / "r.json"}).code == 2);
}

TEST_CASE("calibrate variants and errors") {
  auto& t = trained();
  TempDir d;
  REQUIRE(rwd_cli({"calibrate", "--checkpoint", t.model + "/model.rwdm", "--data", t.data,
                   "--out", d / "both.json", "--pairs", "4000"}).code == 0);
  const auto both = read_json(d / "both.json");
  CHECK(both.contains("temperature"));
  CHECK(both.contains("isotonic"));
  CHECK(both["isotonic"]["fit_ece"].get<double>() <= both["temperature"]["fit_ece"].get<double>());
  CHECK(both["temperature"]["fit_ece"].get<double>() <=
        both["uncalibrated"]["fit_ece"].get<double>() + 1e-9);

  REQUIRE(rwd_cli({"calibrate", "--checkpoint", t.model + "/model.rwdm", "--data", t.data,
                   "--out", d / "temp.json", "--variant", "temperature", "--pairs", "2000"}).code == 0);
  const auto temp = read_json(d / "temp.json");
  CHECK(temp.contains("temperature"));
  CHECK_FALSE(temp.contains("isotonic"));

  CHECK(rwd_cli({"calibrate", "--checkpoint", d / "missing.rwdm", "--data", t.data, "--out",
                 d / "x.json"}).code == 3);
}

TEST_CASE("shape-demo report and table") {
  auto& t = trained();
  TempDir d;
  const auto r = rwd_cli({"shape-demo", "--width", "5", "--height", "5", "--seeds", "4",
                          "--episodes", "150", "--random-potentials", "3", "--checkpoint",
                          t.model + "/model.rwdm", "--data", t.data, "--occlusion-trials", "1",
                          "--out", d / "s.json"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("sparse") != std::string::npos);
  CHECK(r.out.find("shaped:learned") != std::string::npos);
  const auto s = read_json(d / "s.json");
  CHECK(s["schema_version"] == 1);
  CHECK(s["study"]["arms"].size() == 3);
  CHECK(s["study"]["arms"][0]["steps_per_episode"].size() == 4);
  CHECK(s["invariance"].size() == 6);
  for (const auto& c : s["invariance"]) CHECK(c["invariant"] == true);
  CHECK(s["degradation"]["trials"] == 1);

  CHECK(rwd_cli({"shape-demo", "--checkpoint", t.model + "/model.rwdm", "--out", d / "x.json"}).code == 2);
  CHECK(rwd_cli({"shape-demo", "--gamma", "1.5", "--out", d / "x.json"}).code == 2);
}

}  // TEST_SUITE
