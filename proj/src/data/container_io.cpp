#include <fstream>
#include <sstream>

#include "rwd/binary_io.hpp"
#include "rwd/data/dataset.hpp"
#include "rwd/error.hpp"

namespace rwd::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kGoalMagic = "RWDG";
constexpr std::string_view kEmbMagic = "RWDE";

std::string meta_name(std::uint32_t id) { return "traj_" + std::to_string(id) + ".meta.jsonl"; }
std::string emb_name(std::uint32_t id) { return "traj_" + std::to_string(id) + ".emb"; }

json manifest_json(const Dataset& ds) {
  json m;
  m["schema_version"] = kSchemaVersion;
  m["geometry"] = {{"num_views", ds.geometry.num_views},
                   {"tokens_per_view", ds.geometry.tokens_per_view},
                   {"token_dim", ds.geometry.token_dim},
                   {"goal_dim", ds.geometry.goal_dim}};
  m["view_configs"] = ds.view_configs;
  json tasks = json::array();
  for (const auto& t : ds.tasks) {
    json prompts = json::array();
    for (const auto& p : t.prompts) {
      prompts.push_back({{"text", p.text},
                         {"embedding_id", p.embedding_id},
                         {"split", p.heldout ? "heldout" : "train"}});
    }
    tasks.push_back({{"id", t.id},
                     {"base_task", t.base_task},
                     {"variant", t.variant},
                     {"prompts", prompts},
                     {"reward_min", t.reward_min},
                     {"reward_max", t.reward_max}});
  }
  m["tasks"] = tasks;
  json trajs = json::array();
  for (const auto& tr : ds.trajectories) {
    trajs.push_back({{"id", tr.id},
                     {"task", ds.tasks.at(tr.task).id},
                     {"policy", to_string(tr.policy)},
                     {"steps", tr.step_count},
                     {"meta_file", meta_name(tr.id)},
                     {"emb_file", emb_name(tr.id)}});
  }
  m["trajectories"] = trajs;
  m["generation"] = ds.generation;
  return m;
}

template <typename T>
T field(const json& j, const char* key, const fs::path& file) {
  if (!j.contains(key)) throw FormatError(file.string() + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": field \"" + key + "\": " + e.what());
  }
}

void read_goals(Dataset& ds, const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kGoalMagic);
  const std::uint32_t count = r.u32();
  const std::uint32_t dim = r.u32();
  if (dim != ds.geometry.goal_dim) {
    r.fail_format("goal dimension mismatch: expected " + std::to_string(ds.geometry.goal_dim) +
                  ", found " + std::to_string(dim));
  }
  ds.goals.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.goals[i].id = i;
    ds.goals[i].vector.resize(dim);
    r.f32_array(ds.goals[i].vector);
  }
  if (r.remaining() != 0) r.fail_format("trailing bytes");
}

void read_embeddings(Trajectory& tr, const EmbeddingGeometry& g, const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  io::ByteReader r(io::read_file(path), path.string());
  r.expect_magic(kEmbMagic);
  const std::uint16_t version = r.u16();
  if (version != kEmbeddingBlobVersion) {
    r.fail_format("unsupported embedding blob version " + std::to_string(version));
  }
  auto check = [&](const char* what, std::size_t expected) {
    const std::uint32_t found = r.u32();
    if (found != expected) {
      r.fail_format(std::string("shape mismatch in ") + what + ": expected " +
                    std::to_string(expected) + ", found " + std::to_string(found));
    }
  };
  check("n_steps", tr.step_count);
  check("num_views", g.num_views);
  check("tokens_per_view", g.tokens_per_view);
  check("token_dim", g.token_dim);
  tr.embeddings.resize(tr.step_count * g.sample_width());
  r.f32_array(tr.embeddings);
  if (r.remaining() != 0) r.fail_format("trailing bytes after embedding block");
}

void read_meta(Dataset& ds, std::uint32_t traj_index, const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing file " + path.string());
  const Trajectory& tr = ds.trajectories[traj_index];
  std::istringstream in(io::read_text(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++line_no;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    StepRecord s;
    s.task = tr.task;
    s.trajectory = traj_index;
    s.trajectory_id = tr.id;
    s.step_index = field<std::uint32_t>(j, "step_index", path);
    s.reward_raw = field<double>(j, "reward_raw", path);
    const auto c = field<std::vector<double>>(j, "cartesian", path);
    if (c.size() != 3) throw FormatError(path.string() + ": cartesian must have 3 entries");
    s.cartesian = {c[0], c[1], c[2]};
    s.success = field<int>(j, "success", path) != 0;
    if (s.step_index != line_no - 1) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": step_index out of sequence");
    }
    ds.steps.push_back(s);
  }
  if (line_no != tr.step_count) {
    throw FormatError(path.string() + ": " + std::to_string(line_no) + " steps, manifest says " +
                      std::to_string(tr.step_count));
  }
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& dir) {
  validate(ds);
  fs::create_directories(dir);
  io::write_text(dir / "manifest.json", manifest_json(ds).dump(2) + "\n");

  io::ByteWriter goals;
  goals.magic(kGoalMagic);
  goals.u32(static_cast<std::uint32_t>(ds.goals.size()));
  goals.u32(static_cast<std::uint32_t>(ds.geometry.goal_dim));
  for (const auto& g : ds.goals) goals.f32_array(g.vector);
  io::write_file(dir / "goals.emb", goals.bytes());

  for (const auto& tr : ds.trajectories) {
    std::string meta;
    for (std::size_t s = 0; s < tr.step_count; ++s) {
      const StepRecord& st = ds.steps[tr.first_step + s];
      json j = {{"step_index", st.step_index},
                {"reward_raw", st.reward_raw},
                {"cartesian", {st.cartesian[0], st.cartesian[1], st.cartesian[2]}},
                {"success", st.success ? 1 : 0}};
      meta += j.dump();
      meta += '\n';
    }
    io::write_text(dir / meta_name(tr.id), meta);

    io::ByteWriter emb;
    emb.magic(kEmbMagic);
    emb.u16(kEmbeddingBlobVersion);
    emb.u32(static_cast<std::uint32_t>(tr.step_count));
    emb.u32(static_cast<std::uint32_t>(ds.geometry.num_views));
    emb.u32(static_cast<std::uint32_t>(ds.geometry.tokens_per_view));
    emb.u32(static_cast<std::uint32_t>(ds.geometry.token_dim));
    emb.f32_array(tr.embeddings);
    io::write_file(dir / emb_name(tr.id), emb.bytes());
  }
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("missing file " + manifest_path.string());
  json m;
  try {
    m = json::parse(io::read_text(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const int version = field<int>(m, "schema_version", manifest_path);
  if (version != kSchemaVersion) {
    throw FormatError(manifest_path.string() + ": unsupported schema_version " +
                      std::to_string(version));
  }

  Dataset ds;
  const json& g = m.at("geometry");
  ds.geometry.num_views = field<std::size_t>(g, "num_views", manifest_path);
  ds.geometry.tokens_per_view = field<std::size_t>(g, "tokens_per_view", manifest_path);
  ds.geometry.token_dim = field<std::size_t>(g, "token_dim", manifest_path);
  ds.geometry.goal_dim = field<std::size_t>(g, "goal_dim", manifest_path);
  ds.view_configs = field<std::vector<std::string>>(m, "view_configs", manifest_path);
  if (m.contains("generation")) ds.generation = m["generation"];

  for (const auto& jt : field<json>(m, "tasks", manifest_path)) {
    TaskInfo t;
    t.id = field<std::string>(jt, "id", manifest_path);
    t.base_task = field<std::string>(jt, "base_task", manifest_path);
    t.variant = field<std::string>(jt, "variant", manifest_path);
    t.reward_min = field<double>(jt, "reward_min", manifest_path);
    t.reward_max = field<double>(jt, "reward_max", manifest_path);
    for (const auto& jp : field<json>(jt, "prompts", manifest_path)) {
      PromptInfo p;
      p.text = field<std::string>(jp, "text", manifest_path);
      p.embedding_id = field<std::uint32_t>(jp, "embedding_id", manifest_path);
      p.heldout = field<std::string>(jp, "split", manifest_path) == "heldout";
      t.prompts.push_back(std::move(p));
    }
    ds.tasks.push_back(std::move(t));
  }

  read_goals(ds, dir / "goals.emb");

  for (const auto& jt : field<json>(m, "trajectories", manifest_path)) {
    Trajectory tr;
    tr.id = field<std::uint32_t>(jt, "id", manifest_path);
    tr.task = ds.task_index(field<std::string>(jt, "task", manifest_path));
    tr.policy = parse_policy_tag(field<std::string>(jt, "policy", manifest_path));
    tr.step_count = field<std::size_t>(jt, "steps", manifest_path);
    tr.first_step = ds.steps.size();
    const auto traj_index = static_cast<std::uint32_t>(ds.trajectories.size());
    ds.trajectories.push_back(std::move(tr));
    read_meta(ds, traj_index, dir / field<std::string>(jt, "meta_file", manifest_path));
    read_embeddings(ds.trajectories.back(), ds.geometry,
                    dir / field<std::string>(jt, "emb_file", manifest_path));
  }

  for (std::uint32_t t = 0; t < ds.tasks.size(); ++t) {
    const RewardRange range{ds.tasks[t].reward_min, ds.tasks[t].reward_max};
    if (!(range.max > range.min)) {
      throw FormatError(manifest_path.string() + ": task " + ds.tasks[t].id +
                        " has a degenerate reward range");
    }
    for (const auto& tr : ds.trajectories) {
      if (tr.task != t) continue;
      ds.clamped_rewards += apply_normalization(
          std::span(ds.steps).subspan(tr.first_step, tr.step_count), range);
    }
  }
  validate(ds);
  return ds;
}

}  // namespace rwd::data
