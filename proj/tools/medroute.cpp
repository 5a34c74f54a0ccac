// medroute command-line interface.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "medroute/backends/backend.hpp"
#include "medroute/core/error.hpp"
#include "medroute/core/serialization.hpp"
#include "medroute/eval/eval.hpp"
#include "medroute/orchestrator/episode.hpp"
#include "medroute/orchestrator/pool.hpp"
#include "medroute/rl/rl.hpp"
#include "medroute/router/checkpoint.hpp"
#include "medroute/synthclinic/world.hpp"

namespace fs = std::filesystem;
using namespace medroute;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct BackendFlags {
  backends::BackendConfig cfg;
  std::string replay_store;
  std::string replay_mode = "record";
  std::string prompts_dir = orchestrator::default_prompts_dir().string();
};

struct RouterFlags {
  std::size_t embed_dim = 64;
  std::size_t model_dim = 64;
  std::size_t k_max = 8;
  std::size_t block_hidden = 256;
  std::size_t head_hidden = 128;
  std::string head = "mlp";

  router::RouterConfig config() const {
    router::RouterConfig c;
    c.embed.dim = embed_dim;
    c.model_dim = model_dim;
    c.k_max = k_max;
    c.block_hidden = block_hidden;
    c.head_hidden = head_hidden;
    c.head = router::parse_head(head);
    c.validate();
    return c;
  }
};

struct Options {
  std::size_t jobs = 1;
  bool verbose = false;
  BackendFlags backend;
  RouterFlags router;

  // shared inputs
  std::string dataset;
  std::string synth_world;
  std::string pool_file;
  std::string checkpoint;
  std::size_t holdout = 0;
  std::size_t max_steps = 5;
  std::string judge = "offline";

  // pool
  std::string pool_out;
  std::size_t top_k = 8;

  // train
  rl::TrainConfig train;
  std::string out_dir = "run";
  bool no_early_stop = false;

  // diagnose
  bool greedy = false;
  double temperature = 0.7;
  std::uint64_t seed = 0;
  std::string log_path;

  // eval
  std::string scores_in;
  std::string scores_out;

  // gradcheck
  rl::PolicyGradcheckOptions grad;
  std::string grad_head = "mlp";
  double grad_tolerance = 1e-4;

  // synth
  std::size_t synth_k = 6;
  std::size_t synth_cases = 400;
  std::size_t synth_max_seq = 2;
  std::string world_out = "world.json";
  std::size_t baseline_episodes = 10000;
  double baseline_gamma = 0.98;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  if (!fs::exists(path)) throw ConfigError(what + " not found: " + path);
}

void add_backend_flags(CLI::App* cmd, BackendFlags& b) {
  auto* g = cmd->add_option_group("backend", "Chat backend");
  g->add_option("--base-url", b.cfg.base_url, "OpenAI-compatible endpoint")->capture_default_str();
  g->add_option("--model", b.cfg.model_name, "Model name")->capture_default_str();
  g->add_option("--api-key-env", b.cfg.api_key_env, "Variable holding the API key")
      ->capture_default_str();
  g->add_option("--timeout", b.cfg.timeout_s, "Request timeout in seconds")->capture_default_str();
  g->add_option("--max-retries", b.cfg.max_retries)->capture_default_str();
  g->add_option("--retry-backoff", b.cfg.retry_backoff_s, "Initial backoff in seconds")
      ->capture_default_str();
  g->add_option("--backend-temperature", b.cfg.temperature)->capture_default_str();
  g->add_option("--replay", b.replay_store, "Replay store (JSONL)");
  g->add_option("--replay-mode", b.replay_mode, "record or replay")
      ->check(CLI::IsMember({"record", "replay"}))
      ->capture_default_str();
  g->add_option("--prompts", b.prompts_dir, "Prompt template directory")->capture_default_str();
}

void add_router_flags(CLI::App* cmd, RouterFlags& r) {
  cmd->add_option("--embed-dim", r.embed_dim, "Hashed embedding width")->capture_default_str();
  cmd->add_option("--dim", r.model_dim, "Router model width d")->capture_default_str();
  cmd->add_option("--k-max", r.k_max, "Largest pool the router accepts")->capture_default_str();
  cmd->add_option("--block-hidden", r.block_hidden, "Transformer feed-forward width")
      ->capture_default_str();
  cmd->add_option("--head-hidden", r.head_hidden, "Routing MLP width")->capture_default_str();
  cmd->add_option("--head", r.head, "Routing head")
      ->check(CLI::IsMember({"mlp", "cosine"}))
      ->capture_default_str();
}

std::shared_ptr<backends::ChatBackend> make_backend(const BackendFlags& b) {
  b.cfg.validate();
  if (b.replay_mode == "replay") {
    require_file(b.replay_store, "replay store");
    return std::make_shared<backends::ReplayBackend>(backends::ReplayMode::kReplay,
                                                     b.replay_store, b.cfg, nullptr);
  }
  auto live = std::make_shared<backends::HttpBackend>(
      b.cfg, std::make_shared<backends::HttplibTransport>());
  if (b.replay_store.empty()) return live;
  return std::make_shared<backends::ReplayBackend>(backends::ReplayMode::kRecord, b.replay_store,
                                                   b.cfg, live);
}

orchestrator::PromptLibrary load_prompts(const BackendFlags& b) {
  if (!fs::is_directory(b.prompts_dir))
    throw ConfigError("prompts directory not found: " + b.prompts_dir);
  return orchestrator::PromptLibrary::load(b.prompts_dir);
}

/// Cases, pool and environment for a run, either synthetic or live.
struct Workspace {
  std::unique_ptr<synthclinic::SynthWorld> world;  // heap so env references survive moves
  std::vector<core::Case> cases;
  std::vector<core::Case> heldout;
  core::SpecialistPool pool;
  std::shared_ptr<backends::ChatBackend> backend;
  std::unique_ptr<orchestrator::PromptLibrary> prompts;
  std::unique_ptr<orchestrator::Environment> env;
};

void validate_inputs(const Options& o, bool needs_checkpoint) {
  if (o.synth_world.empty() == o.dataset.empty())
    throw ConfigError("give exactly one of --dataset or --synth");
  if (!o.synth_world.empty()) {
    require_file(o.synth_world, "synthetic world");
    if (!o.pool_file.empty()) require_file(o.pool_file, "pool file");
  } else {
    require_file(o.dataset, "dataset");
    require_file(o.pool_file, "pool file");
  }
  if (needs_checkpoint) require_file(o.checkpoint, "checkpoint");
}

void caption_missing(std::vector<core::Case>& cases, const fs::path& dataset_dir,
                     backends::ChatBackend& backend, const orchestrator::PromptLibrary& prompts) {
  for (auto& c : cases) {
    if (c.caption || !c.image_ref) continue;
    fs::path p = *c.image_ref;
    if (p.is_relative()) p = dataset_dir / p;
    c.caption = backends::caption_image(backend, p, prompts.raw("caption"));
  }
}

Workspace open_workspace(const Options& o) {
  Workspace w;
  if (!o.synth_world.empty()) {
    w.world = std::make_unique<synthclinic::SynthWorld>(synthclinic::load_world(o.synth_world));
    w.cases = w.world->plain_cases();
    w.pool = o.pool_file.empty() ? w.world->pool() : core::load_pool(o.pool_file);
    w.env = std::make_unique<synthclinic::SynthEnvironment>(*w.world);
  } else {
    w.cases = core::load_dataset(o.dataset);
    w.pool = core::load_pool(o.pool_file);
    w.prompts = std::make_unique<orchestrator::PromptLibrary>(load_prompts(o.backend));
    w.backend = make_backend(o.backend);
    caption_missing(w.cases, fs::path(o.dataset).parent_path(), *w.backend, *w.prompts);
    backends::ChatBackend* judge = o.judge == "live" ? w.backend.get() : nullptr;
    const orchestrator::PromptLibrary* prompts = w.prompts.get();
    w.env = std::make_unique<orchestrator::LiveEnvironment>(
        *w.backend, *w.prompts,
        [judge, prompts](const core::Case& c, std::string_view pred) {
          return eval::score_case(c, pred, judge, prompts).score;
        });
  }
  if (w.cases.empty()) throw DataError("no cases to work on");
  if (o.holdout > 0) {
    if (o.holdout >= w.cases.size())
      throw ConfigError("--holdout must leave at least one training case");
    w.heldout.assign(w.cases.end() - static_cast<std::ptrdiff_t>(o.holdout), w.cases.end());
    w.cases.resize(w.cases.size() - o.holdout);
  }
  return w;
}

int cmd_pool(const Options& o) {
  if (o.top_k < 1) throw ConfigError("--top-k must be at least 1");
  require_file(o.dataset, "dataset");
  if (o.pool_out.empty()) throw ConfigError("--out is required");
  const auto prompts = load_prompts(o.backend);
  auto backend = make_backend(o.backend);
  const auto cases = core::load_dataset(o.dataset);
  std::vector<std::string> questions;
  for (const auto& c : cases) questions.push_back(c.question);
  const auto report = orchestrator::build_pool(questions, *backend, prompts, o.top_k);
  core::save_pool(o.pool_out, report.pool);
  spdlog::info("pool of {} roles from {} questions written to {}", report.pool.k(),
               report.questions_ok, o.pool_out);
  return kExitOk;
}

int cmd_train(Options o) {
  validate_inputs(o, false);
  auto w = open_workspace(o);
  auto cfg = o.train;
  cfg.jobs = o.jobs;
  cfg.max_steps = o.max_steps;
  cfg.early_stop_on_correct = !o.no_early_stop;
  cfg.checkpoint_dir = o.out_dir;
  cfg.log_path = fs::path(o.out_dir) / "train_log.jsonl";
  cfg.validate();
  fs::create_directories(o.out_dir);

  router::RouterParams params = o.checkpoint.empty()
                                    ? router::RouterParams::init(o.router.config(), cfg.seed)
                                    : router::load_checkpoint(o.checkpoint);
  router::save_checkpoint(params, fs::path(o.out_dir) / "epoch-000.ckpt");
  rl::train(w.cases, w.pool, params, *w.env, cfg);
  router::save_checkpoint(params, fs::path(o.out_dir) / "router.ckpt");

  if (!w.heldout.empty()) {
    const auto r = rl::evaluate_greedy(w.heldout, w.pool, params, *w.env, cfg.max_steps,
                                       cfg.history_max_chars);
    std::printf("heldout_accuracy=%.4f n=%zu mean_length=%.3f\n", r.accuracy, r.n, r.mean_length);
  }
  return kExitOk;
}

int cmd_diagnose(const Options& o) {
  validate_inputs(o, true);
  if (o.log_path.empty()) throw ConfigError("--log is required");
  auto w = open_workspace(o);
  const auto params = router::load_checkpoint(o.checkpoint);
  const auto& cases = w.heldout.empty() ? w.cases : w.heldout;
  const auto roles = orchestrator::embed_roles(w.pool, params.config.embed);

  orchestrator::EpisodeConfig ec;
  ec.max_steps = o.max_steps;
  ec.temperature = o.greedy ? 0.0 : o.temperature;
  ec.validate();

  std::ofstream truncate(o.log_path, std::ios::trunc);
  if (!truncate) throw Error("cannot write " + o.log_path);
  truncate.close();

  std::size_t correct = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    ec.seed = core::derive_seed(o.seed, {i});
    core::Rng rng(ec.seed);
    try {
      const auto ep = orchestrator::diagnose(cases[i], w.pool, roles, params, *w.env, ec, rng);
      orchestrator::log_trajectory(ep.trajectory, o.log_path);
      correct += static_cast<std::size_t>(ep.rm);
    } catch (const orchestrator::EpisodeFailure& e) {
      orchestrator::log_trajectory(e.trajectory(), o.log_path);
      throw;
    }
  }
  std::vector<int> scores(cases.size(), 0);
  std::fill(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(correct), 1);
  std::printf("accuracy=%s n=%zu correct=%zu\n",
              eval::format_accuracy(eval::accuracy(scores)).c_str(), cases.size(), correct);
  return kExitOk;
}

int cmd_eval(const Options& o) {
  std::vector<eval::ScoreRecord> records;
  if (!o.scores_in.empty()) {
    require_file(o.scores_in, "score file");
    records = eval::load_scores(o.scores_in);
  } else {
    require_file(o.log_path, "trajectory log");
    if (o.synth_world.empty() == o.dataset.empty())
      throw ConfigError("give exactly one of --dataset or --synth");
    std::vector<core::Case> cases;
    if (!o.synth_world.empty()) {
      require_file(o.synth_world, "synthetic world");
      cases = synthclinic::load_world(o.synth_world).plain_cases();
    } else {
      require_file(o.dataset, "dataset");
      cases = core::load_dataset(o.dataset);
    }
    std::unordered_map<std::string, const core::Case*> by_id;
    for (const auto& c : cases) by_id[c.id] = &c;

    std::shared_ptr<backends::ChatBackend> backend;
    std::optional<orchestrator::PromptLibrary> prompts;
    if (o.judge == "live") {
      prompts = load_prompts(o.backend);
      backend = make_backend(o.backend);
    }
    for (const auto& t : core::load_trajectories(o.log_path)) {
      auto it = by_id.find(t.case_id);
      if (it == by_id.end()) throw DataError("trajectory for unknown case " + t.case_id);
      records.push_back(eval::score_case(*it->second, t.final_decision, backend.get(),
                                         prompts ? &*prompts : nullptr));
    }
  }
  if (records.empty()) throw DataError("nothing to score");
  if (!o.scores_out.empty()) eval::save_scores(o.scores_out, records);
  std::printf("%s\n", eval::summary_line(records).c_str());
  return kExitOk;
}

int cmd_gradcheck(Options o) {
  o.grad.head = router::parse_head(o.grad_head);
  const auto report = rl::policy_gradcheck(o.grad);
  for (const auto& g : report.groups)
    std::printf("%-22s coords=%-4zu max_rel_error=%.3e\n", g.name.c_str(), g.coordinates,
                g.max_rel_error);
  const bool ok = report.max_rel_error <= o.grad_tolerance;
  std::printf("max_rel_error=%.3e coordinates=%zu tolerance=%.1e %s\n", report.max_rel_error,
              report.coordinates, o.grad_tolerance, ok ? "PASS" : "FAIL");
  return ok ? kExitOk : kExitFailure;
}

int cmd_synth(const Options& o) {
  if (o.synth_k < 2) throw ConfigError("--k must be at least 2");
  if (o.synth_cases < 1) throw ConfigError("--cases must be at least 1");
  if (o.synth_max_seq < 1 || o.synth_max_seq > 3) throw ConfigError("--max-seq must be 1, 2 or 3");
  const auto world = synthclinic::generate_world(o.seed, o.synth_k, o.synth_cases, o.synth_max_seq);
  synthclinic::save_world(o.world_out, world);
  core::Rng rng(core::derive_seed(o.seed, {0xBA5EULL}));
  const auto b = synthclinic::random_baseline(world, {}, o.baseline_episodes, o.max_steps,
                                              o.baseline_gamma, rng);
  std::printf("random_baseline accuracy=%.4f mean_reward=%.4f mean_length=%.3f episodes=%zu\n",
              b.accuracy, b.mean_reward, b.mean_length, b.episodes);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("medroute");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");

  Options o;
  CLI::App app{"Learned specialist routing for multi-agent diagnosis.\n"
               "Desk-scale defaults (d=64, pool of 8, lr 1e-5) are smaller than a full-scale "
               "run (pool of 50-60); every size is a flag."};
  app.set_config("--config", "", "TOML key/value file; flags override it");
  app.add_option("--jobs", o.jobs, "Concurrent trace groups (1 = reproducible)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("-v,--verbose", o.verbose, "Debug logging");
  app.require_subcommand(1);

  auto* pool = app.add_subcommand("pool", "Build a specialist pool from a dataset");
  pool->add_option("--dataset", o.dataset, "JSONL dataset")->required();
  pool->add_option("--out", o.pool_out, "Pool JSON to write")->required();
  pool->add_option("--top-k", o.top_k, "Pool size")->capture_default_str();
  add_backend_flags(pool, o.backend);

  auto* train = app.add_subcommand("train", "Train the router with grouped-advantage REINFORCE");
  train->add_option("--dataset", o.dataset, "JSONL dataset (live environment)");
  train->add_option("--synth", o.synth_world, "Synthetic world file");
  train->add_option("--pool", o.pool_file, "Pool JSON (defaults to the world's pool with --synth)");
  train->add_option("--init", o.checkpoint, "Start from this checkpoint");
  train->add_option("--gamma", o.train.gamma)->capture_default_str();
  train->add_option("--lr", o.train.lr, "AdamW learning rate (desk runs use 1e-3)")
      ->capture_default_str();
  train->add_option("--weight-decay", o.train.weight_decay)->capture_default_str();
  train->add_option("--group-size", o.train.group_size, "Traces per case, G")->capture_default_str();
  train->add_option("--temp", o.train.temperature, "Sampling temperature")->capture_default_str();
  train->add_option("--epochs", o.train.epochs)->capture_default_str();
  train->add_option("--epsilon", o.train.epsilon, "Advantage denominator epsilon")
      ->capture_default_str();
  train->add_option("--samples-per-epoch", o.train.samples_per_epoch, "draws per epoch, with replacement; 0 = number of cases")
      ->capture_default_str();
  train->add_option("--seed", o.train.seed)->capture_default_str();
  train->add_flag("--no-early-stop", o.no_early_stop, "Always sample G traces per case");
  train->add_option("--max-steps", o.max_steps)->capture_default_str();
  train->add_option("--holdout", o.holdout, "Hold out the last N cases and report greedy accuracy");
  train->add_option("--out-dir", o.out_dir, "Checkpoints and train_log.jsonl")->capture_default_str();
  train->add_option("--judge", o.judge, "live or offline scoring (live environment)")
      ->check(CLI::IsMember({"live", "offline"}))
      ->capture_default_str();
  add_router_flags(train, o.router);
  add_backend_flags(train, o.backend);

  auto* diag = app.add_subcommand("diagnose", "Route every case and log trajectories");
  diag->add_option("--dataset", o.dataset, "JSONL dataset");
  diag->add_option("--synth", o.synth_world, "Synthetic world file");
  diag->add_option("--pool", o.pool_file, "Pool JSON");
  diag->add_option("--checkpoint", o.checkpoint, "Router checkpoint")->required();
  diag->add_option("--log", o.log_path, "Trajectory JSONL to write")->required();
  diag->add_flag("--greedy", o.greedy, "Argmax routing");
  diag->add_option("--temp", o.temperature, "Sampling temperature without --greedy")
      ->capture_default_str();
  diag->add_option("--seed", o.seed)->capture_default_str();
  diag->add_option("--max-steps", o.max_steps)->capture_default_str();
  diag->add_option("--holdout", o.holdout, "Only run the last N cases");
  diag->add_option("--judge", o.judge, "live or offline scoring")
      ->check(CLI::IsMember({"live", "offline"}))
      ->capture_default_str();
  add_backend_flags(diag, o.backend);

  auto* ev = app.add_subcommand("eval", "Score final decisions and print accuracy");
  ev->add_option("--log", o.log_path, "Trajectory JSONL");
  ev->add_option("--dataset", o.dataset, "JSONL dataset");
  ev->add_option("--synth", o.synth_world, "Synthetic world file");
  ev->add_option("--scores", o.scores_in, "Summarize an existing score file instead");
  ev->add_option("--out", o.scores_out, "Score JSONL to write");
  ev->add_option("--judge", o.judge, "live or offline")
      ->check(CLI::IsMember({"live", "offline"}))
      ->capture_default_str();
  add_backend_flags(ev, o.backend);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the policy gradient");
  gc->add_option("--dim", o.grad.dim)->capture_default_str();
  gc->add_option("--k", o.grad.k)->capture_default_str();
  gc->add_option("--seed", o.grad.seed)->capture_default_str();
  gc->add_option("--head", o.grad_head)->check(CLI::IsMember({"mlp", "cosine"}))->capture_default_str();
  gc->add_option("--samples", o.grad.check.min_samples)->capture_default_str();
  gc->add_flag("--corrupt-backward", o.grad.corrupt_backward)->group("");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic world and its random baseline");
  synth->add_option("--seed", o.seed)->capture_default_str();
  synth->add_option("--k", o.synth_k, "Specialties")->capture_default_str();
  synth->add_option("--cases", o.synth_cases)->capture_default_str();
  synth->add_option("--max-seq", o.synth_max_seq)->capture_default_str();
  synth->add_option("--out", o.world_out)->capture_default_str();
  synth->add_option("--baseline-episodes", o.baseline_episodes)->capture_default_str();
  synth->add_option("--max-steps", o.max_steps)->capture_default_str();
  synth->add_option("--gamma", o.baseline_gamma)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  if (o.verbose) spdlog::set_level(spdlog::level::debug);

  try {
    if (*pool) return cmd_pool(o);
    if (*train) return cmd_train(o);
    if (*diag) return cmd_diagnose(o);
    if (*ev) return cmd_eval(o);
    if (*gc) return cmd_gradcheck(o);
    if (*synth) return cmd_synth(o);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
