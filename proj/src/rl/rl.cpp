#include "medroute/rl/rl.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

#include "medroute/core/error.hpp"
#include "medroute/core/random.hpp"
#include "medroute/numerics/optim.hpp"
#include "medroute/router/checkpoint.hpp"

namespace medroute::rl {

using orchestrator::EpisodeReplay;

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (group_size < 2) throw ConfigError("group size must be at least 2");
  if (!(temperature > 0.0)) throw ConfigError("training temperature must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
  if (epsilon < 0.0) throw ConfigError("epsilon must be >= 0");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
}

orchestrator::EpisodeConfig TrainConfig::episode_config(std::uint64_t s) const {
  orchestrator::EpisodeConfig e;
  e.max_steps = max_steps;
  e.temperature = temperature;
  e.gamma = gamma;
  e.history_max_chars = history_max_chars;
  e.seed = s;
  return e;
}

double compute_reward(int rm, std::size_t l, double gamma) {
  if (rm != 0 && rm != 1) throw Error("reward model score must be 0 or 1");
  return rm == 0 ? 0.0 : std::pow(gamma, static_cast<double>(l));
}

std::vector<double> grouped_advantage(std::span<const double> rewards, double epsilon) {
  if (rewards.size() < 2) throw Error("grouped advantage needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd < 1e-12) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + epsilon);
  return adv;
}

double policy_loss(std::span<const double> summed_log_probs, std::span<const double> advantages) {
  if (summed_log_probs.size() != advantages.size())
    throw Error("policy_loss: log-prob and advantage counts differ");
  if (advantages.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < advantages.size(); ++t) total += advantages[t] * summed_log_probs[t];
  return -total / static_cast<double>(advantages.size());
}

template <typename T>
numerics::Var replay_log_prob(numerics::BasicTape<T>& tape,
                              const router::BasicRouterParams<T>& params,
                              const EpisodeReplay& replay) {
  if (replay.steps.empty()) throw Error("episode replay has no routing steps");
  std::vector<numerics::Var> picks;
  for (const auto& s : replay.steps) {
    const router::RoutingContext ctx{&replay.task, replay.roles, &s.history, s.consulted, s.step};
    const auto input = router::assemble_input(tape, params, ctx);
    const auto out = router::forward(tape, params, input, params.config.head);
    picks.push_back(tape.masked_log_softmax_pick(out.logits, out.mask,
                                                 static_cast<T>(replay.inv_temperature), s.index));
  }
  return tape.sum(tape.concat(picks));
}

template <typename T>
double group_loss(const router::BasicRouterParams<T>& params,
                  std::span<const EpisodeReplay* const> replays, std::span<const double> advantages,
                  std::vector<numerics::BasicTensor<T>>* grads) {
  if (replays.size() != advantages.size()) throw Error("group_loss: replay and advantage counts differ");
  const auto tensors = params.tensors();
  if (grads) {
    grads->clear();
    for (const auto* t : tensors) grads->emplace_back(t->shape());
  }
  const double G = static_cast<double>(replays.size());
  double loss = 0.0;
  for (std::size_t t = 0; t < replays.size(); ++t) {
    if (advantages[t] == 0.0) continue;
    auto tape = router::make_tape(params);
    const auto lp = replay_log_prob(tape, params, *replays[t]);
    const double w = -advantages[t] / G;
    loss += w * static_cast<double>(tape.value(lp)[0]);
    if (grads) tape.backward_into(lp, static_cast<T>(w), *grads);
  }
  return loss;
}

TraceGroup sample_trace_group(const core::Case& c, const core::SpecialistPool& pool,
                              std::span<const numerics::Tensor> role_embeddings,
                              const router::RouterParams& params, orchestrator::Environment& env,
                              const TrainConfig& cfg, std::uint64_t group_seed) {
  TraceGroup g;
  for (std::size_t i = 0; i < cfg.group_size; ++i) {
    const std::uint64_t s = core::derive_seed(group_seed, {i});
    core::Rng rng(s);
    try {
      g.traces.push_back(orchestrator::diagnose(c, pool, role_embeddings, params, env,
                                                cfg.episode_config(s), rng));
    } catch (const Error& e) {
      throw TraceError(i, e.what());
    }
    const auto& ep = g.traces.back();
    g.rewards.push_back(compute_reward(ep.rm, ep.trajectory.length_l, cfg.gamma));
    if (cfg.early_stop_on_correct && ep.rm == 1) {
      if (g.traces.size() == 1) continue;  // pad a singleton group with one more trace
      break;
    }
  }
  g.advantages = grouped_advantage(g.rewards, cfg.epsilon);
  return g;
}

nlohmann::json stats_to_json(const EpochStats& s) {
  return {{"epoch", s.epoch},
          {"groups", s.groups},
          {"traces", s.traces},
          {"mean_reward", s.mean_reward},
          {"trace_accuracy", s.trace_accuracy},
          {"mean_length", s.mean_length},
          {"mean_loss", s.mean_loss},
          {"updates", s.updates},
          {"skipped_updates", s.skipped_updates},
          {"accuracy_on_sample", s.accuracy_on_sample},
          {"greedy_mean_length", s.greedy_mean_length}};
}

GreedyEval evaluate_greedy(std::span<const core::Case> cases, const core::SpecialistPool& pool,
                           const router::RouterParams& params, orchestrator::Environment& env,
                           std::size_t max_steps, std::size_t history_max_chars) {
  if (cases.empty()) throw Error("no cases to evaluate");
  const auto roles = orchestrator::embed_roles(pool, params.config.embed);
  orchestrator::EpisodeConfig ec;
  ec.max_steps = max_steps;
  ec.temperature = 0.0;
  ec.history_max_chars = history_max_chars;
  core::Rng rng(0);
  GreedyEval r;
  double correct = 0.0, length = 0.0;
  for (const auto& c : cases) {
    const auto ep = orchestrator::diagnose(c, pool, roles, params, env, ec, rng);
    correct += ep.rm;
    length += static_cast<double>(ep.trajectory.length_l);
  }
  r.n = cases.size();
  r.accuracy = correct / static_cast<double>(r.n);
  r.mean_length = length / static_cast<double>(r.n);
  return r;
}

std::vector<EpochStats> train(std::span<const core::Case> cases, const core::SpecialistPool& pool,
                              router::RouterParams& params, orchestrator::Environment& env,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cases.empty()) throw ConfigError("training needs at least one case");
  if (pool.k() > params.config.k_max)
    throw ConfigError("pool of " + std::to_string(pool.k()) + " exceeds router k_max " +
                      std::to_string(params.config.k_max));
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::trunc);
    if (!log) throw Error("cannot write training log " + cfg.log_path.string());
  }

  const auto roles = orchestrator::embed_roles(pool, params.config.embed);
  const auto tensors = params.tensors();
  numerics::AdamWState opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay}, tensors);
  const std::size_t draws = cfg.samples_per_epoch ? cfg.samples_per_epoch : cases.size();

  std::vector<EpochStats> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    core::Rng draw_rng(core::derive_seed(cfg.seed, {epoch, 0xD8A5ULL}));
    std::vector<std::size_t> picks(draws);
    for (auto& p : picks) p = core::uniform_index(draw_rng, cases.size());

    EpochStats st;
    st.epoch = epoch;
    double reward_sum = 0.0, correct = 0.0, length_sum = 0.0, loss_sum = 0.0;

    for (std::size_t begin = 0; begin < draws; begin += cfg.jobs) {
      const std::size_t end = std::min(draws, begin + cfg.jobs);
      std::vector<TraceGroup> groups(end - begin);
      auto run = [&](std::size_t j) {
        const std::size_t n = begin + j;
        groups[j] = sample_trace_group(cases[picks[n]], pool, roles, params, env, cfg,
                                       core::derive_seed(cfg.seed, {epoch, n}));
      };
      if (groups.size() == 1) {
        run(0);
      } else {
        std::vector<std::exception_ptr> errors(groups.size());
        std::vector<std::thread> threads;
        for (std::size_t j = 0; j < groups.size(); ++j)
          threads.emplace_back([&, j] {
            try {
              run(j);
            } catch (...) {
              errors[j] = std::current_exception();
            }
          });
        for (auto& t : threads) t.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }

      for (std::size_t j = 0; j < groups.size(); ++j) {
        const auto& g = groups[j];
        const auto& c = cases[picks[begin + j]];
        std::vector<const EpisodeReplay*> replays;
        for (const auto& ep : g.traces) {
          replays.push_back(&ep.replay);
          reward_sum += ep.trajectory.reward;
          correct += ep.rm;
          length_sum += static_cast<double>(ep.trajectory.length_l);
          if (!cfg.trajectory_log.empty()) orchestrator::log_trajectory(ep.trajectory, cfg.trajectory_log);
        }
        st.traces += g.traces.size();
        ++st.groups;

        if (std::all_of(g.advantages.begin(), g.advantages.end(), [](double a) { return a == 0.0; })) {
          ++st.skipped_updates;
          continue;
        }
        std::vector<numerics::Tensor> grads;
        const double loss = group_loss<float>(params, replays, g.advantages, &grads);
        if (!std::isfinite(loss)) throw Error("non-finite loss on case " + c.id);
        try {
          opt.step(tensors, grads);
        } catch (const Error& e) {
          throw Error("case " + c.id + ": " + e.what());
        }
        loss_sum += loss;
        ++st.updates;
      }
    }

    const double traces = static_cast<double>(std::max<std::size_t>(st.traces, 1));
    st.mean_reward = reward_sum / traces;
    st.trace_accuracy = correct / traces;
    st.mean_length = length_sum / traces;
    st.mean_loss = loss_sum / static_cast<double>(std::max<std::size_t>(st.groups, 1));

    std::vector<core::Case> sample;
    sample.reserve(picks.size());
    for (auto p : picks) sample.push_back(cases[p]);
    const auto greedy = evaluate_greedy(sample, pool, params, env, cfg.max_steps, cfg.history_max_chars);
    st.accuracy_on_sample = greedy.accuracy;
    st.greedy_mean_length = greedy.mean_length;

    if (!cfg.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%03zu.ckpt", epoch);
      router::save_checkpoint(params, cfg.checkpoint_dir / name);
    }
    if (log.is_open()) {
      log << stats_to_json(st).dump() << '\n';
      log.flush();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("epoch {}/{}: reward {:.4f} trace_acc {:.3f} greedy_acc {:.3f} len {:.2f} "
                 "updates {} skipped {} ({:.1f}s)",
                 epoch, cfg.epochs, st.mean_reward, st.trace_accuracy, st.accuracy_on_sample,
                 st.mean_length, st.updates, st.skipped_updates, secs);
    history.push_back(st);
    if (on_epoch) on_epoch(st, params);
  }
  return history;
}

template numerics::Var replay_log_prob(numerics::BasicTape<float>&,
                                       const router::BasicRouterParams<float>&, const EpisodeReplay&);
template numerics::Var replay_log_prob(numerics::BasicTape<double>&,
                                       const router::BasicRouterParams<double>&, const EpisodeReplay&);
template double group_loss(const router::BasicRouterParams<float>&,
                           std::span<const EpisodeReplay* const>, std::span<const double>,
                           std::vector<numerics::BasicTensor<float>>*);
template double group_loss(const router::BasicRouterParams<double>&,
                           std::span<const EpisodeReplay* const>, std::span<const double>,
                           std::vector<numerics::BasicTensor<double>>*);

}  // namespace medroute::rl
