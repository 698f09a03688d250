#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "rwd/error.hpp"
#include "rwd/synth/world.hpp"

using namespace rwd;
using namespace rwd::synth;

namespace {

LatentState random_state(Rng& rng) {
  auto p = [&] {
    return Vec3{rng.uniform(kWorkspaceLo, kWorkspaceHi), rng.uniform(kWorkspaceLo, kWorkspaceHi),
                rng.uniform(kWorkspaceLo, kWorkspaceHi)};
  };
  return {p(), p(), p(), rng.uniform()};
}

SynthTask plain_task(Variant v = Variant::kForward) {
  SynthTask t;
  t.id = "t";
  t.variant = v;
  t.target = {0.05, -0.1, 0.0};
  return t;
}

double bbox_volume(const SynthTrajectory& traj) {
  Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
  for (const auto& s : traj) {
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], s.state.tcp[k]);
      hi[k] = std::max(hi[k], s.state.tcp[k]);
    }
  }
  return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("ground truth reward examples") {
  LatentState s{{0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}, {0.1, 0.1, 0.1}, 0.0};
  CHECK(ground_truth_reward(Variant::kForward, s) == 1.0);
  CHECK(ground_truth_reward(Variant::kReverse, s) == 0.0);
}

TEST_CASE("variant complement and boundedness") {
  Rng rng(4);
  for (int i = 0; i < 20000; ++i) {
    auto s = random_state(rng);
    const double f = ground_truth_reward(Variant::kForward, s);
    const double r = ground_truth_reward(Variant::kReverse, s);
    CHECK(f + r == 1.0);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
}

TEST_CASE("encoder determinism and seeds") {
  EncoderConfig ec{.num_views = 2, .tokens_per_view = 4, .token_dim = 8};
  SynthEncoder a(ec, 10), b(ec, 10), c(ec, 11);
  Rng r1(1), r2(2), r3(3);
  LatentState s = random_state(r3);
  CHECK(a.encode_all(s, r1) == b.encode_all(s, r2));
  CHECK(a.encode_all(s, r1) != c.encode_all(s, r2));
  CHECK(!std::equal(a.weights(0).begin(), a.weights(0).end(), c.weights(0).begin()));
  std::vector<float> out(a.view_width());
  CHECK_THROWS_AS(a.encode(s, 2, r1, out), DimensionError);
}

TEST_CASE("encoder separates distinct states") {
  EncoderConfig ec{.num_views = 2, .tokens_per_view = 16, .token_dim = 32};
  SynthEncoder enc(ec, 5);
  Rng rng(8);
  std::vector<std::vector<float>> grids;
  for (int i = 0; i < 1000; ++i) grids.push_back(enc.encode_all(random_state(rng), rng));
  double min_dist = INFINITY;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    for (std::size_t j = i + 1; j < grids.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < grids[i].size(); ++k) {
        d += (grids[i][k] - grids[j][k]) * (grids[i][k] - grids[j][k]);
      }
      min_dist = std::min(min_dist, std::sqrt(d));
    }
  }
  CHECK(min_dist > 1e-6);
}

TEST_CASE("full occlusion removes the object from every view") {
  EncoderConfig ec{.num_views = 2, .tokens_per_view = 4, .token_dim = 8, .occlusion_rate = 1.0};
  SynthEncoder enc(ec, 3);
  Rng rng(1);
  LatentState s = random_state(rng);
  LatentState moved = s;
  moved.object = {0.2, -0.2, 0.1};
  CHECK(enc.encode_all(s, rng) == enc.encode_all(moved, rng));
}

TEST_CASE("expert policy solves the task") {
  PolicyConfig pc{.kind = PolicyKind::kExpert};
  auto trajs = generate_trajectories(plain_task(), pc, 100, 50, 77);
  int solved = 0;
  for (const auto& t : trajs) solved += t.back().reward > 0.95;
  CHECK(solved >= 95);
}

TEST_CASE("longer action repeat covers more space") {
  double v1 = 0.0, v20 = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    v1 += bbox_volume(generate_trajectories(plain_task(), {.repeat_n = 1}, 1, 50, seed)[0]);
    v20 += bbox_volume(generate_trajectories(plain_task(), {.repeat_n = 20}, 1, 50, seed)[0]);
  }
  CHECK(v20 > v1);
}

TEST_CASE("horizon one gives a single step") {
  for (auto kind : {PolicyKind::kRandomRepeat, PolicyKind::kExpert, PolicyKind::kMixed}) {
    auto t = generate_trajectories(plain_task(), {.kind = kind}, 3, 1, 9);
    for (const auto& traj : t) CHECK(traj.size() == 1);
  }
  CHECK_THROWS_AS(generate_trajectories(plain_task(), {}, 1, 0, 9), ConfigError);
}

TEST_CASE("mixed policy explores after solving") {
  PolicyConfig pc{.kind = PolicyKind::kMixed, .repeat_n = 4};
  auto trajs = generate_trajectories(plain_task(), pc, 30, 120, 5);
  int dipped = 0;
  for (const auto& t : trajs) {
    bool solved = false;
    for (const auto& s : t) {
      if (s.reward > 0.95) solved = true;
      if (solved && s.reward < 0.9) {
        ++dipped;
        break;
      }
    }
  }
  CHECK(dipped > 0);
}

TEST_CASE("reverse expert increases reverse reward") {
  PolicyConfig pc{.kind = PolicyKind::kExpert};
  auto fwd = generate_trajectories(plain_task(Variant::kForward), pc, 5, 40, 3);
  auto rev = generate_trajectories(plain_task(Variant::kReverse), pc, 5, 40, 3);
  for (std::size_t e = 0; e < 5; ++e) {
    CHECK(rev[e].front().reward < 0.05);
    CHECK(rev[e].back().reward > rev[e].front().reward);
    CHECK(rev[e].back().reward == doctest::Approx(1.0 - fwd[e].front().reward));
  }
}

TEST_CASE("generated datasets are consistent") {
  WorldConfig w;
  w.tasks = 2;
  w.episodes = 6;
  w.horizon = 10;
  w.geometry = {.num_views = 2, .tokens_per_view = 3, .token_dim = 4, .goal_dim = 6};
  auto ds = generate_dataset(w);
  CHECK(ds.tasks.size() == 4);
  CHECK(ds.goals.size() == 12);
  CHECK(ds.trajectories.size() == 24);
  CHECK_NOTHROW(data::validate(ds));
  for (const auto& t : ds.tasks) {
    CHECK(t.train_prompts().size() == 2);
    CHECK(t.heldout_prompts().size() == 1);
  }

  auto tasks = make_tasks(w);
  for (const auto& t : tasks) {
    const auto& base = t.prompt_embeddings[0];
    double bn = 0.0;
    for (float x : base) bn += double(x) * x;
    for (std::size_t p = 1; p < t.prompt_embeddings.size(); ++p) {
      double d = 0.0;
      for (std::size_t i = 0; i < base.size(); ++i) {
        d += (double(t.prompt_embeddings[p][i]) - base[i]) * (double(t.prompt_embeddings[p][i]) - base[i]);
      }
      CHECK(std::sqrt(d) <= 0.1 * std::sqrt(bn) + 1e-6);
    }
  }
  CHECK(tasks[0].encoder_seed == tasks[1].encoder_seed);
  CHECK(tasks[0].target == tasks[1].target);
  CHECK(tasks[0].encoder_seed != tasks[2].encoder_seed);

  WorldConfig bad = w;
  bad.episodes = 0;
  CHECK_THROWS_AS(generate_dataset(bad), UsageError);
}

TEST_CASE("a dataset's world can be rebuilt from its generation record") {
  WorldConfig w;
  w.tasks = 2;
  w.episodes = 4;
  w.horizon = 12;
  w.world_seed = 5;
  w.seed = 11;
  w.targets = {Vec3{0.1, 0.0, 0.0}, Vec3{-0.1, 0.05, 0.0}};
  const auto ds = generate_dataset(w);
  const auto back = world_config_from_dataset(ds);
  CHECK(back.world_seed == 5);
  CHECK(back.seed == 11);
  CHECK(back.targets == w.targets);
  CHECK(back.geometry == w.geometry);
  const auto again = generate_dataset(back);
  REQUIRE(again.steps.size() == ds.steps.size());
  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    CHECK(again.trajectories[k].embeddings == ds.trajectories[k].embeddings);
  }
  for (std::size_t k = 0; k < ds.steps.size(); ++k) CHECK(again.steps[k].reward_norm == ds.steps[k].reward_norm);

  auto broken = ds;
  broken.generation.erase("world_seed");
  CHECK_THROWS_AS(world_config_from_dataset(broken), FormatError);
}

}  // TEST_SUITE
