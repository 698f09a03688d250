#include "rwd/cli/app.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rwd/binary_io.hpp"
#include "rwd/data/dataset.hpp"
#include "rwd/error.hpp"
#include "rwd/model/reward_model.hpp"
#include "rwd/shaping/shaping.hpp"
#include "rwd/synth/world.hpp"
#include "rwd/train/evaluate.hpp"
#include "rwd/train/trainer.hpp"

namespace rwd::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::size_t> parse_widths(const std::string& s, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(flag + " expects comma-separated positive integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError(flag + " must not be empty");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_text(path, j.dump(2) + "\n");
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string optional_fixed(const std::optional<double>& v) { return v ? fixed(*v) : "n/a"; }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void check_geometry(const model::RewardModel& m, const data::Dataset& ds) {
  const auto& c = m.config();
  const auto& g = ds.geometry;
  if (c.num_views != g.num_views || c.tokens_per_view != g.tokens_per_view ||
      c.token_dim != g.token_dim || c.goal_dim != g.goal_dim) {
    throw FormatError("checkpoint geometry (" + std::to_string(c.num_views) + "x" +
                      std::to_string(c.tokens_per_view) + "x" + std::to_string(c.token_dim) +
                      ", goal " + std::to_string(c.goal_dim) + ") does not match dataset (" +
                      std::to_string(g.num_views) + "x" + std::to_string(g.tokens_per_view) + "x" +
                      std::to_string(g.token_dim) + ", goal " + std::to_string(g.goal_dim) + ")");
  }
}

// Explicit flags beat the JSON config: config values are injected ahead of
// the command line and every option keeps its last occurrence.
std::vector<std::string> config_tokens(CLI::App& sub, const fs::path& path) {
  json cfg;
  try {
    cfg = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
  std::vector<std::string> tokens;
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    const CLI::Option* opt = key == "config" ? nullptr : sub.get_option_no_throw(flag);
    if (opt == nullptr) throw UsageError("config " + path.string() + ": unknown key '" + key + "'");
    if (value.is_boolean()) {
      if (opt->get_expected_min() == 0) {
        if (value.get<bool>()) tokens.push_back(flag);
        else if (sub.get_option_no_throw("--no-" + key)) tokens.push_back("--no-" + key);
        continue;
      }
      tokens.insert(tokens.end(), {flag, value.get<bool>() ? "true" : "false"});
    } else if (value.is_string()) {
      tokens.insert(tokens.end(), {flag, value.get<std::string>()});
    } else if (value.is_number()) {
      tokens.insert(tokens.end(), {flag, value.dump()});
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!v.is_number()) throw UsageError("config key '" + key + "': arrays must hold numbers");
        joined += (joined.empty() ? "" : ",") + v.dump();
      }
      tokens.insert(tokens.end(), {flag, joined});
    } else {
      throw UsageError("config key '" + key + "': unsupported value type");
    }
  }
  return tokens;
}

struct DataFlags {
  data::DataConfig data;

  void add(CLI::App* sub) {
    sub->add_option("--eps-c", data.eps_c, "Cartesian dedup bin edge (m)");
    sub->add_option("--eps-r", data.eps_r, "Normalized reward dedup bin edge");
    sub->add_option("--pair-min-gap", data.pair_min_gap, "Minimum reward gap of a pair");
  }
};

// ---- gen-data --------------------------------------------------------------

struct GenData {
  synth::WorldConfig world;
  std::string out;
  std::string reward_ranges_from;

  void add(CLI::App* sub) {
    sub->add_option("--out", out, "Output dataset directory")->required();
    sub->add_option("--tasks", world.tasks, "Base tasks");
    sub->add_flag("--variants,!--no-variants", world.variants, "Add the reverse variant of each task");
    sub->add_option("--episodes", world.episodes, "Episodes per task");
    sub->add_option("--horizon", world.horizon, "Steps per episode");
    sub->add_option("--action-repeat", world.action_repeat, "Random actions are held this many steps");
    sub->add_option("--prompts", world.prompts, "Paraphrases per task (the last is held out)");
    sub->add_option("--paraphrase-fraction", world.paraphrase_fraction, "Paraphrase perturbation, relative to the goal norm");
    sub->add_option("--max-speed", world.max_speed, "Maximum displacement per step (m)");
    sub->add_option("--noise-sigma", world.noise_sigma, "Encoder token noise");
    sub->add_option("--occlusion-rate", world.occlusion_rate, "Per-view object occlusion probability");
    sub->add_option("--world-seed", world.world_seed, "Seed of targets, encoders and prompts");
    sub->add_option("--seed", world.seed, "Seed of rollouts and encoder noise");
    sub->add_option("--num-views", world.geometry.num_views);
    sub->add_option("--tokens-per-view", world.geometry.tokens_per_view);
    sub->add_option("--token-dim", world.geometry.token_dim);
    sub->add_option("--goal-dim", world.geometry.goal_dim);
    sub->add_option("--reward-ranges-from", reward_ranges_from,
                    "Normalize with the reward ranges stored in this dataset");
  }

  int run(std::ostream& out_stream) {
    world.validate();
    if (!reward_ranges_from.empty()) {
      const auto ref = data::read_dataset(reward_ranges_from);
      for (const auto& t : ref.tasks) world.reward_ranges[t.id] = {t.reward_min, t.reward_max};
    }
    const auto ds = synth::generate_dataset(world);
    data::write_dataset(ds, out);
    out_stream << "wrote " << out << ": " << ds.tasks.size() << " tasks, " << ds.trajectories.size()
               << " trajectories, " << ds.steps.size() << " steps\n";
    if (ds.clamped_rewards > 0) {
      out_stream << "warning: " << ds.clamped_rewards << " rewards clamped into the stored ranges\n";
    }
    return 0;
  }
};

// ---- train -----------------------------------------------------------------

struct Train {
  train::TrainConfig cfg;
  DataFlags data;
  std::string data_dir, out;
  std::string head_widths = "256,64,16,8";
  std::string film_widths = "64";
  unsigned threads = 1;

  void add(CLI::App* sub) {
    sub->add_option("--data", data_dir, "Dataset directory")->required();
    sub->add_option("--out", out, "Output directory for model.rwdm and train_log.jsonl")->required();
    sub->add_option("--epochs", cfg.epochs);
    sub->add_option("--pairs-per-epoch", cfg.pairs_per_epoch);
    sub->add_option("--batch-size", cfg.batch_size);
    sub->add_option("--lr", cfg.optimizer.lr);
    sub->add_option("--weight-decay", cfg.optimizer.weight_decay);
    sub->add_option("--tau", cfg.tau, "Loss temperature");
    sub->add_option("--heldout-fraction", cfg.heldout_fraction);
    sub->add_option("--seed", cfg.seed);
    sub->add_option("--head-widths", head_widths, "Comma-separated head layer widths");
    sub->add_option("--film-widths", film_widths, "Comma-separated FiLM generator hidden widths");
    sub->add_option("--proj-dim", cfg.model.proj_dim);
    sub->add_option("--film-layers", cfg.model.film_layers, "Leading head layers modulated by FiLM");
    sub->add_option("--threads", threads, "Worker cap (training itself runs on one thread)");
    data.add(sub);
  }

  int run(std::ostream& out_stream) {
    const auto start = std::chrono::steady_clock::now();
    const std::string started = now_utc();
    const auto ds = data::read_dataset(data_dir);
    cfg.data = data.data;
    cfg.model.num_views = ds.geometry.num_views;
    cfg.model.tokens_per_view = ds.geometry.tokens_per_view;
    cfg.model.token_dim = ds.geometry.token_dim;
    cfg.model.goal_dim = ds.geometry.goal_dim;
    cfg.model.head_widths = parse_widths(head_widths, "--head-widths");
    cfg.model.film_generator_widths = parse_widths(film_widths, "--film-widths");
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }

    fs::create_directories(out);
    std::ofstream log(fs::path(out) / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot write " + (fs::path(out) / "train_log.jsonl").string());
    auto result = train::train(ds, cfg, [&](const train::EpochLog& e) {
      log << e.to_json().dump() << '\n';
      log.flush();
      if (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == cfg.epochs) {
        out_stream << "epoch " << e.epoch << "  loss " << fixed(e.mean_loss)
                   << "  heldout " << optional_fixed(e.heldout_accuracy) << (e.best ? "  *" : "")
                   << std::endl;
      }
    });
    model::save_checkpoint(result.best_model, fs::path(out) / "model.rwdm");

    json summary = {{"schema_version", train::kLogSchemaVersion},
                    {"best_epoch", result.best_epoch},
                    {"best_heldout_accuracy",
                     result.best_accuracy ? json(*result.best_accuracy) : json(nullptr)},
                    {"train_steps", result.split.train.size()},
                    {"heldout_steps", result.split.heldout.size()},
                    {"warnings", result.warnings},
                    {"config",
                     {{"epochs", cfg.epochs},
                      {"pairs_per_epoch", cfg.pairs_per_epoch},
                      {"batch_size", cfg.batch_size},
                      {"lr", cfg.optimizer.lr},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"tau", cfg.tau},
                      {"heldout_fraction", cfg.heldout_fraction},
                      {"seed", cfg.seed},
                      {"head_widths", cfg.model.head_widths},
                      {"film_widths", cfg.model.film_generator_widths},
                      {"proj_dim", cfg.model.proj_dim},
                      {"film_layers", cfg.model.film_layers},
                      {"eps_c", cfg.data.eps_c},
                      {"eps_r", cfg.data.eps_r},
                      {"pair_min_gap", cfg.data.pair_min_gap}}}};
    write_json(fs::path(out) / "train_summary.json", summary);

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream sidecar(fs::path(out) / "run.log", std::ios::app);
    sidecar << "train started " << started << " finished " << now_utc() << " elapsed "
            << fixed(secs, 1) << "s\n";

    for (const auto& w : result.warnings) out_stream << "warning: " << w << '\n';
    out_stream << "best epoch " << result.best_epoch << "  heldout accuracy "
               << optional_fixed(result.best_accuracy) << "  -> "
               << (fs::path(out) / "model.rwdm").string() << '\n';
    return 0;
  }
};

// ---- eval / calibrate ------------------------------------------------------

train::EvalSplit parse_split(const std::string& s) {
  if (s == "all") return train::EvalSplit::kAll;
  if (s == "heldout") return train::EvalSplit::kHeldout;
  throw UsageError("--split must be all or heldout");
}

struct Scored {
  data::Dataset ds;
  std::optional<model::RewardModel> model;
};

Scored load_scored(const std::string& data_dir, const std::string& checkpoint, bool oracle) {
  Scored s;
  if (!oracle) {
    if (checkpoint.empty()) throw UsageError("--checkpoint is required unless --oracle-scores is set");
    s.model = model::load_checkpoint(checkpoint);
  }
  s.ds = data::read_dataset(data_dir);
  if (s.model) check_geometry(*s.model, s.ds);
  return s;
}

struct Eval {
  train::EvalConfig cfg;
  DataFlags data;
  std::string checkpoint, data_dir, out, split = "all";
  bool oracle = false;
  unsigned threads = 1;

  void add(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint (.rwdm)");
    sub->add_option("--data", data_dir, "Evaluation dataset directory")->required();
    sub->add_option("--out", out, "Report path (JSON)")->required();
    sub->add_option("--split", split, "all | heldout");
    sub->add_option("--heldout-fraction", cfg.heldout_fraction);
    sub->add_option("--pairs", cfg.calibration_pairs, "Sampled pairs for the ECE estimate");
    sub->add_option("--tau-train", cfg.tau_train, "Temperature of the uncalibrated probability");
    sub->add_option("--seed", cfg.seed);
    sub->add_flag("--oracle-scores", oracle, "Score with the ground-truth reward instead of a model");
    sub->add_option("--threads", threads);
    data.add(sub);
  }

  int run(std::ostream& out_stream) {
    cfg.split = parse_split(split);
    cfg.data = data.data;
    auto s = load_scored(data_dir, checkpoint, oracle);
    const auto scorer = oracle ? train::oracle_scorer(s.ds)
                               : train::model_scorer(*s.model, s.ds, std::max(1u, threads));
    auto report = train::evaluate(scorer, s.ds, cfg);
    report["scorer"] = oracle ? "oracle" : "model";
    write_json(out, report);

    const auto& acc = report["accuracy"];
    out_stream << "pairwise accuracy " << fixed(acc["first_train_prompt"]["overall"].get<double>())
               << " over " << acc["first_train_prompt"]["pairs"] << " pairs\n";
    const auto& pv = report["prompt_variation"];
    if (!pv["delta"].is_null()) {
      out_stream << "prompt variation: train " << fixed(pv["train_prompts"].get<double>())
                 << "  heldout " << fixed(pv["heldout_prompts"].get<double>()) << "  delta "
                 << fixed(pv["delta"].get<double>()) << '\n';
    }
    const auto& tv = report["task_variation"];
    if (!tv["goal_swap_flip_rate"].is_null()) {
      out_stream << "goal swap flip rate " << fixed(tv["goal_swap_flip_rate"].get<double>())
                 << " over " << tv["goal_swap_pairs"] << " pairs\n";
    }
    for (const auto& [policy, summary] : report["kendall_tau"]["by_policy"].items()) {
      out_stream << "tau median " << policy << ' ' << fixed(summary["median"].get<double>()) << '\n';
    }
    out_stream << "ECE (tau " << cfg.tau_train << ") "
               << fixed(report["calibration"]["ece"]["ece"].get<double>()) << '\n';
    out_stream << "report: " << out << '\n';
    return 0;
  }
};

struct Calibrate {
  train::EvalConfig cfg;
  DataFlags data;
  std::string checkpoint, data_dir, out, split = "all", variant = "both";
  std::size_t pairs = 20000;
  bool oracle = false;
  unsigned threads = 1;

  void add(CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "Model checkpoint (.rwdm)");
    sub->add_option("--data", data_dir, "Dataset whose pairs are calibrated")->required();
    sub->add_option("--out", out, "Report path (JSON, includes the fitted maps)")->required();
    sub->add_option("--variant", variant, "both | temperature | isotonic");
    sub->add_option("--pairs", pairs, "Sampled pairs, split alternately into fit and test");
    sub->add_option("--split", split, "all | heldout");
    sub->add_option("--heldout-fraction", cfg.heldout_fraction);
    sub->add_option("--tau-train", cfg.tau_train);
    sub->add_option("--seed", cfg.seed);
    sub->add_flag("--oracle-scores", oracle);
    sub->add_option("--threads", threads);
    data.add(sub);
  }

  int run(std::ostream& out_stream) {
    train::CalibrationVariant v;
    if (variant == "both") v = train::CalibrationVariant::kBoth;
    else if (variant == "temperature") v = train::CalibrationVariant::kTemperature;
    else if (variant == "isotonic") v = train::CalibrationVariant::kIsotonic;
    else throw UsageError("--variant must be both, temperature or isotonic");
    cfg.split = parse_split(split);
    cfg.data = data.data;
    auto s = load_scored(data_dir, checkpoint, oracle);
    const auto scorer = oracle ? train::oracle_scorer(s.ds)
                               : train::model_scorer(*s.model, s.ds, std::max(1u, threads));
    const auto steps = train::eval_steps(s.ds, cfg);
    if (steps.empty()) throw ConfigError("calibration set is empty");
    const auto p = train::preference_pairs(scorer, s.ds, steps, cfg.data, pairs, cfg.seed);
    auto outcome = train::calibrate(p, v, cfg.tau_train);
    write_json(out, outcome.report);

    const auto& r = outcome.report;
    out_stream << "            fit ECE   test ECE\n";
    for (const char* k : {"uncalibrated", "temperature", "isotonic"}) {
      if (!r.contains(k)) continue;
      out_stream << std::left << std::setw(12) << k << fixed(r[k]["fit_ece"].get<double>())
                 << "    " << fixed(r[k]["test_ece"].get<double>()) << '\n';
    }
    if (const auto* t = outcome.temperature.temperature()) {
      out_stream << "tau_cal " << fixed(t->tau) << (t->separable ? " (separable)" : "") << '\n';
    }
    out_stream << "report: " << out << '\n';
    return 0;
  }
};

// ---- shape-demo ------------------------------------------------------------

struct ShapeDemo {
  shaping::GridworldMDP mdp;
  shaping::QLearningConfig q;
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  std::size_t random_potentials = 10;
  std::string checkpoint, data_dir, task, out;
  std::size_t occlusion_trials = 5;
  double occlusion_rate = 0.5;

  void add(CLI::App* sub) {
    sub->add_option("--width", mdp.width);
    sub->add_option("--height", mdp.height);
    sub->add_option("--gamma", mdp.gamma);
    sub->add_option("--step-cost", mdp.step_cost);
    sub->add_option("--seeds", seeds, "Q-learning runs per arm");
    sub->add_option("--seed", seed);
    sub->add_option("--episodes", q.episodes);
    sub->add_option("--alpha", q.alpha);
    sub->add_option("--epsilon", q.epsilon);
    sub->add_option("--epsilon-decay", q.epsilon_decay);
    sub->add_option("--horizon", q.horizon);
    sub->add_option("--random-potentials", random_potentials, "Random potentials in the invariance check");
    sub->add_option("--checkpoint", checkpoint, "Model for the learned potential (needs --data)");
    sub->add_option("--data", data_dir, "Dataset the model was trained on (recovers the world)");
    sub->add_option("--task", task, "Task id for the learned potential (default: first forward task)");
    sub->add_option("--occlusion-trials", occlusion_trials);
    sub->add_option("--occlusion-rate", occlusion_rate, "Occlusion rate of the degradation probe");
    sub->add_option("--out", out, "Report path (JSON)")->required();
  }

  int run(std::ostream& out_stream) {
    if (mdp.width == 0 || mdp.height == 0) throw UsageError("--width and --height must be >= 1");
    mdp.goal = {mdp.width - 1, mdp.height - 1};
    try {
      mdp.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    if (seeds == 0 || q.episodes == 0) throw UsageError("--seeds and --episodes must be >= 1");
    if (checkpoint.empty() != data_dir.empty()) {
      throw UsageError("--checkpoint and --data go together");
    }

    std::vector<shaping::Potential> arms{shaping::manhattan_potential(mdp)};
    std::vector<shaping::Potential> probes{shaping::manhattan_potential(mdp),
                                           shaping::manhattan_potential(mdp, 10.0)};
    probes.back().name = "manhattan_x10";
    for (std::size_t k = 0; k < random_potentials; ++k) {
      auto phi = shaping::random_potential(mdp, derive_seed(seed, 0x5048, k), 1.0 + static_cast<double>(k));
      phi.name = "random_" + std::to_string(k);
      probes.push_back(std::move(phi));
    }

    json degradation = nullptr;
    if (!checkpoint.empty()) {
      const auto model = model::load_checkpoint(checkpoint);
      const auto ds = data::read_dataset(data_dir);
      check_geometry(model, ds);
      const auto scene = shaping::task_scene(ds, task);
      auto learned = shaping::learned_potential(mdp, model, scene.encoder, scene.goal, scene.target,
                                                derive_seed(seed, 0x1EA));
      arms.push_back(learned);
      probes.push_back(learned);
      if (occlusion_trials > 0) {
        const auto occluded = shaping::task_scene(ds, task, occlusion_rate);
        degradation = shaping::to_json(shaping::occlusion_probe(
            mdp, model, occluded.encoder, occluded.goal, occluded.target, occlusion_trials,
            derive_seed(seed, 0x0CC)));
      }
    }

    json invariance = json::array();
    std::vector<shaping::InvarianceCheck> checks;
    for (const auto& phi : probes) {
      checks.push_back(shaping::check_invariance(mdp, phi));
      invariance.push_back(shaping::to_json(checks.back()));
    }
    const auto study = shaping::speedup_study(mdp, arms, seeds, seed, q);

    json report = {{"schema_version", metrics::kReportSchemaVersion},
                   {"grid",
                    {{"width", mdp.width},
                     {"height", mdp.height},
                     {"gamma", mdp.gamma},
                     {"step_cost", mdp.step_cost},
                     {"goal_reward", mdp.goal_reward}}},
                   {"q_learning",
                    {{"alpha", q.alpha},
                     {"epsilon", q.epsilon},
                     {"epsilon_decay", q.epsilon_decay},
                     {"horizon", q.horizon},
                     {"episodes", q.episodes},
                     {"seeds", seeds},
                     {"seed", seed}}},
                   {"invariance", invariance},
                   {"study", shaping::to_json(study)},
                   {"degradation", degradation}};
    write_json(out, report);

    out_stream << std::left << std::setw(22) << "arm" << std::setw(10) << "solved"
               << "median first success\n";
    for (const auto& a : study.arms) {
      const auto solved = std::count_if(a.first_success.begin(), a.first_success.end(),
                                        [](const auto& f) { return f.has_value(); });
      out_stream << std::left << std::setw(22) << a.name << std::setw(10)
                 << (std::to_string(solved) + "/" + std::to_string(a.first_success.size()))
                 << fixed(a.median, 1) << '\n';
    }
    out_stream << '\n' << std::left << std::setw(22) << "potential" << std::setw(12) << "mismatches"
               << "max |V'-(V-phi)|\n";
    for (const auto& c : checks) {
      std::ostringstream err;
      err << std::scientific << std::setprecision(2) << c.max_value_identity_error;
      out_stream << std::left << std::setw(22) << c.potential << std::setw(12)
                 << (std::to_string(c.policy_mismatches) + "/" + std::to_string(c.states_compared))
                 << err.str() << '\n';
    }
    if (!degradation.is_null()) {
      out_stream << "\noccluded potential (rate " << occlusion_rate << "): policy divergence "
                 << fixed(degradation["divergence_frequency"].get<double>()) << '\n';
    }
    out_stream << "report: " << out << '\n';
    return 0;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Goal-conditioned reward model toolkit", "rwd"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenData gen;
  Train tr;
  Eval ev;
  Calibrate cal;
  ShapeDemo demo;
  std::string config_path;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    sub->add_option("--config", config_path, "JSON file of flag values; explicit flags win");
    cmd.add(sub);
    return sub;
  };
  add("gen-data", "Generate a synthetic dataset", gen);
  add("train", "Train a reward model", tr);
  add("eval", "Evaluate a checkpoint", ev);
  add("calibrate", "Fit temperature and isotonic calibration", cal);
  add("shape-demo", "Reward shaping study on a gridworld", demo);

  try {
    std::vector<std::string> argv = args;
    if (!argv.empty()) {
      if (CLI::App* sub = app.get_subcommand_no_throw(argv.front())) {
        std::optional<std::string> cfg;
        for (std::size_t i = 1; i < argv.size(); ++i) {
          if (argv[i] == "--config" && i + 1 < argv.size()) cfg = argv[i + 1];
          else if (argv[i].rfind("--config=", 0) == 0) cfg = argv[i].substr(9);
        }
        if (cfg) {
          const auto tokens = config_tokens(*sub, *cfg);
          argv.insert(argv.begin() + 1, tokens.begin(), tokens.end());
        }
      }
    }
    std::reverse(argv.begin(), argv.end());
    try {
      app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out, err);
      return 2;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") return gen.run(out);
    if (name == "train") return tr.run(out);
    if (name == "eval") return ev.run(out);
    if (name == "calibrate") return cal.run(out);
    return demo.run(out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace rwd::cli
