#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "../support/oracles.hpp"
#include "doctest.h"
#include "rwd/binary_io.hpp"
#include "rwd/data/dataset.hpp"
#include "rwd/error.hpp"
#include "rwd/synth/world.hpp"

using namespace rwd;
using namespace rwd::data;
namespace fs = std::filesystem;

namespace {

StepRecord step(std::uint32_t traj, std::uint32_t idx, double reward, std::array<double, 3> c,
                std::uint32_t task = 0) {
  StepRecord s;
  s.task = task;
  s.trajectory = traj;
  s.trajectory_id = traj;
  s.step_index = idx;
  s.reward_raw = reward;
  s.reward_norm = reward;
  s.cartesian = c;
  return s;
}

synth::WorldConfig small_world(std::uint64_t seed = 3) {
  synth::WorldConfig w;
  w.tasks = 2;
  w.episodes = 6;
  w.horizon = 12;
  w.geometry = {.num_views = 2, .tokens_per_view = 3, .token_dim = 4, .goal_dim = 5};
  w.seed = seed;
  return w;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("rwd_data_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("normalize_rewards") {
  std::vector<StepRecord> s{step(0, 0, 0, {}), step(0, 1, 5, {}), step(0, 2, 10, {})};
  auto range = normalize_rewards(s);
  CHECK(s[0].reward_norm == 0.0);
  CHECK(s[1].reward_norm == 0.5);
  CHECK(s[2].reward_norm == 1.0);
  for (const auto& x : s) CHECK(std::abs(denormalize(x.reward_norm, range) - x.reward_raw) < 1e-9);

  std::vector<StepRecord> flat{step(0, 0, 2, {}), step(0, 1, 2, {})};
  CHECK_THROWS_AS(normalize_rewards(flat), ConfigError);

  std::vector<StepRecord> fresh{step(1, 0, -1, {}), step(1, 1, 4, {}), step(1, 2, 12, {})};
  CHECK(apply_normalization(fresh, range) == 2);
  CHECK(fresh[0].reward_norm == 0.0);
  CHECK(fresh[1].reward_norm == doctest::Approx(0.4));
  CHECK(fresh[2].reward_norm == 1.0);
}

TEST_CASE("normalization round trip on random rewards") {
  Rng rng(2);
  std::vector<StepRecord> s;
  for (std::uint32_t i = 0; i < 500; ++i) s.push_back(step(0, i, rng.uniform(-30, 70), {}));
  auto range = normalize_rewards(s);
  for (const auto& x : s) {
    CHECK(x.reward_norm >= 0.0);
    CHECK(x.reward_norm <= 1.0);
    CHECK(std::abs(denormalize(x.reward_norm, range) - x.reward_raw) < 1e-9);
  }
}

TEST_CASE("dedup_bin examples") {
  DataConfig cfg;
  std::vector<StepRecord> same{step(1, 4, 0.5, {0.1, 0.1, 0.1}), step(0, 9, 0.5, {0.1, 0.1, 0.1})};
  auto kept = dedup_bin(same, cfg);
  REQUIRE(kept.size() == 1);
  CHECK(same[kept[0]].trajectory_id == 0);

  std::vector<StepRecord> apart{step(0, 0, 0.5, {0.105, 0.1, 0.1}), step(0, 1, 0.5, {0.125, 0.1, 0.1})};
  CHECK(dedup_bin(apart, cfg).size() == 2);
}

TEST_CASE("dedup_bin matches brute-force bin grouping") {
  DataConfig cfg;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    std::vector<StepRecord> s;
    for (std::uint32_t i = 0; i < 1000; ++i) {
      // Coarse lattice so that many steps share bins.
      auto q = [&](double step_size) { return step_size * static_cast<double>(rng.index(6)) + 0.001; };
      s.push_back(step(static_cast<std::uint32_t>(rng.index(20)), i, q(0.01),
                       {q(0.01), q(0.01), q(0.005)}, static_cast<std::uint32_t>(rng.index(2))));
    }
    const auto oracle = rwd::testing::dedup_oracle(s, 0.01, 0.01);
    auto kept = dedup_bin(s, cfg);
    CHECK(std::set<std::size_t>(kept.begin(), kept.end()) == oracle);
    CHECK(kept.size() <= s.size());
    CHECK(dedup_bin(s, cfg, kept) == kept);
  }
}

TEST_CASE("pair sampling on binary rewards") {
  auto ds = synth::generate_dataset(small_world());
  for (auto& st : ds.steps) st.reward_norm = st.step_index % 2 == 0 ? 0.0 : 1.0;
  std::vector<std::size_t> all(ds.steps.size());
  std::iota(all.begin(), all.end(), 0);
  auto res = sample_pairs(ds, all, DataConfig{}, 5, 4000);
  int positives = 0;
  for (const auto& p : res.pairs) {
    CHECK(std::abs(ds.steps[p.a].reward_norm - ds.steps[p.b].reward_norm) == 1.0);
    positives += p.label == 1;
  }
  CHECK(positives > 1800);
  CHECK(positives < 2200);
}

TEST_CASE("pair sampling invariants and determinism") {
  auto ds = synth::generate_dataset(small_world());
  std::vector<std::size_t> all(ds.steps.size());
  std::iota(all.begin(), all.end(), 0);
  DataConfig cfg;
  auto a = sample_pairs(ds, all, cfg, 42, 3000);
  auto b = sample_pairs(ds, all, cfg, 42, 3000);
  REQUIRE(a.pairs.size() == 3000);
  std::set<std::uint32_t> tasks_seen;
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    const auto& p = a.pairs[k];
    CHECK(p.a == b.pairs[k].a);
    CHECK(p.b == b.pairs[k].b);
    CHECK(p.prompt_id == b.pairs[k].prompt_id);
    const auto& sa = ds.steps[p.a];
    const auto& sb = ds.steps[p.b];
    CHECK(sa.task == sb.task);
    CHECK(std::abs(sa.reward_norm - sb.reward_norm) >= cfg.pair_min_gap);
    CHECK(p.label * (sa.reward_norm - sb.reward_norm) > 0.0);
    const auto train = ds.tasks[sa.task].train_prompts();
    CHECK(std::find(train.begin(), train.end(), p.prompt_id) != train.end());
    tasks_seen.insert(sa.task);
  }
  CHECK(tasks_seen.size() == ds.tasks.size());
}

TEST_CASE("pair sampling rejects datasets without qualifying gaps") {
  auto ds = synth::generate_dataset(small_world());
  for (auto& st : ds.steps) st.reward_norm = 0.5 + 0.001 * (st.step_index % 5);
  std::vector<std::size_t> all(ds.steps.size());
  std::iota(all.begin(), all.end(), 0);
  CHECK_THROWS_AS(sample_pairs(ds, all, DataConfig{}, 1, 10), ConfigError);

  // One task degenerate, the other fine: skipped with a warning.
  auto ds2 = synth::generate_dataset(small_world());
  for (auto& st : ds2.steps) {
    if (st.task == 0) st.reward_norm = 0.3;
  }
  auto res = sample_pairs(ds2, all, DataConfig{}, 1, 10);
  CHECK(res.warnings.size() == 1);
  for (const auto& p : res.pairs) CHECK(ds2.steps[p.a].task != 0);
}

TEST_CASE("split_by_bin keeps near-duplicates on one side") {
  auto ds = synth::generate_dataset(small_world());
  DataConfig cfg;
  auto kept = dedup_bin(ds.steps, cfg);
  auto split = split_by_bin(ds.steps, kept, cfg, 0.1);
  CHECK(split.train.size() + split.heldout.size() == kept.size());
  std::set<BinKey> train_keys;
  for (auto i : split.train) train_keys.insert(bin_key(ds.steps[i], cfg));
  for (auto i : split.heldout) CHECK(train_keys.count(bin_key(ds.steps[i], cfg)) == 0);
}

TEST_CASE("container round trip is byte exact") {
  auto ds = synth::generate_dataset(small_world());
  auto d1 = scratch("rt1");
  auto d2 = scratch("rt2");
  write_dataset(ds, d1);
  Dataset back = read_dataset(d1);
  CHECK(back.steps.size() == ds.steps.size());
  CHECK(back.geometry == ds.geometry);
  for (std::size_t t = 0; t < ds.trajectories.size(); ++t) {
    CHECK(back.trajectories[t].embeddings == ds.trajectories[t].embeddings);
  }
  for (std::size_t i = 0; i < ds.steps.size(); ++i) {
    CHECK(back.steps[i].reward_norm == ds.steps[i].reward_norm);
  }
  write_dataset(back, d2);
  for (const auto& entry : fs::directory_iterator(d1)) {
    const auto name = entry.path().filename();
    CHECK(io::read_file(entry.path()) == io::read_file(d2 / name));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("container read errors") {
  auto ds = synth::generate_dataset(small_world());
  auto dir = scratch("errors");
  write_dataset(ds, dir);

  SUBCASE("missing blob") {
    fs::remove(dir / "traj_3.emb");
    try {
      read_dataset(dir);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("missing file") != std::string::npos);
    }
  }
  SUBCASE("wrong token count") {
    auto bytes = io::read_file(dir / "traj_0.emb");
    bytes[4 + 2 + 4 + 4] = 2;  // tokens_per_view field
    io::write_file(dir / "traj_0.emb", bytes);
    try {
      read_dataset(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("tokens_per_view") != std::string::npos);
      CHECK(msg.find("expected 3, found 2") != std::string::npos);
      CHECK(msg.find("traj_0.emb") != std::string::npos);
      CHECK(msg.find("offset") != std::string::npos);
    }
  }
  SUBCASE("bad magic") {
    auto bytes = io::read_file(dir / "goals.emb");
    bytes[1] = 'Z';
    io::write_file(dir / "goals.emb", bytes);
    CHECK_THROWS_AS(read_dataset(dir), FormatError);
  }
  SUBCASE("missing manifest") {
    fs::remove(dir / "manifest.json");
    CHECK_THROWS_AS(read_dataset(dir), IoError);
  }
  fs::remove_all(dir);
}

}  // TEST_SUITE
