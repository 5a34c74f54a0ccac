#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "medroute/core/types.hpp"
#include "medroute/numerics/tape.hpp"
#include "medroute/orchestrator/environment.hpp"
#include "medroute/orchestrator/episode.hpp"
#include "medroute/router/router.hpp"

namespace medroute::rl {

struct TrainConfig {
  double gamma = 0.98;
  std::size_t group_size = 8;  // G
  double temperature = 0.7;
  std::size_t epochs = 10;
  double lr = 1e-5;
  double weight_decay = 0.01;
  double epsilon = 1e-8;
  bool early_stop_on_correct = true;
  std::size_t samples_per_epoch = 100;  // 0 = one draw per training case
  std::size_t max_steps = 5;
  std::size_t history_max_chars = 4000;
  std::size_t jobs = 1;  // > 1 samples groups concurrently against chunk-start params
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir;  // empty = no checkpoints
  std::filesystem::path log_path;        // empty = no training log
  std::filesystem::path trajectory_log;  // empty = sampled traces are not logged

  void validate() const;
  orchestrator::EpisodeConfig episode_config(std::uint64_t seed) const;
};

/// gamma^l * rm.
double compute_reward(int rm, std::size_t l, double gamma);

/// (r - mean) / (std + eps) with population std; all zeros when the rewards are constant.
std::vector<double> grouped_advantage(std::span<const double> rewards, double epsilon);

/// -(1/G) * sum_t A_t * log_prob_t, where log_prob_t is trajectory t's summed step log-probs.
double policy_loss(std::span<const double> summed_log_probs, std::span<const double> advantages);

/// Summed log-probability of a stored episode's routing decisions, rebuilt on `tape`.
template <typename T>
numerics::Var replay_log_prob(numerics::BasicTape<T>& tape,
                              const router::BasicRouterParams<T>& params,
                              const orchestrator::EpisodeReplay& replay);

/// Policy loss of a group rebuilt from stored replays. When `grads` is non-null it is
/// resized and filled with d(loss)/d(param) in params.tensors() order.
template <typename T>
double group_loss(const router::BasicRouterParams<T>& params,
                  std::span<const orchestrator::EpisodeReplay* const> replays,
                  std::span<const double> advantages,
                  std::vector<numerics::BasicTensor<T>>* grads);

struct TraceGroup {
  std::vector<orchestrator::Episode> traces;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

class TraceError : public Error {
 public:
  TraceError(std::size_t trace_index, const std::string& what)
      : Error("trace " + std::to_string(trace_index) + ": " + what), trace_index_(trace_index) {}
  std::size_t trace_index() const { return trace_index_; }

 private:
  std::size_t trace_index_;
};

TraceGroup sample_trace_group(const core::Case& c, const core::SpecialistPool& pool,
                              std::span<const numerics::Tensor> role_embeddings,
                              const router::RouterParams& params, orchestrator::Environment& env,
                              const TrainConfig& cfg, std::uint64_t group_seed);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  std::size_t groups = 0;
  std::size_t traces = 0;
  double mean_reward = 0.0;       // over sampled traces
  double trace_accuracy = 0.0;    // fraction of sampled traces with rm = 1
  double mean_length = 0.0;       // over sampled traces
  double mean_loss = 0.0;         // over groups
  std::size_t updates = 0;
  std::size_t skipped_updates = 0;  // groups whose advantages were all zero
  double accuracy_on_sample = 0.0;  // greedy, end-of-epoch params, on this epoch's draws
  double greedy_mean_length = 0.0;
};

nlohmann::json stats_to_json(const EpochStats& s);

using EpochCallback = std::function<void(const EpochStats&, const router::RouterParams&)>;

/// Grouped-advantage policy-gradient training with one AdamW step per case group.
std::vector<EpochStats> train(std::span<const core::Case> cases, const core::SpecialistPool& pool,
                              router::RouterParams& params, orchestrator::Environment& env,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct GreedyEval {
  double accuracy = 0.0;
  double mean_length = 0.0;
  std::size_t n = 0;
};

/// Greedy routing accuracy over `cases`.
GreedyEval evaluate_greedy(std::span<const core::Case> cases, const core::SpecialistPool& pool,
                           const router::RouterParams& params, orchestrator::Environment& env,
                           std::size_t max_steps, std::size_t history_max_chars = 4000);

}  // namespace medroute::rl

#include "medroute/numerics/gradcheck.hpp"

namespace medroute::rl {

struct PolicyGradcheckOptions {
  std::size_t dim = 16;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  router::HeadKind head = router::HeadKind::kMlp;
  numerics::GradcheckOptions check;
  /// Test hook: perturbs the analytic gradient so the check must fail.
  bool corrupt_backward = false;
};

/// Finite-difference check of the group policy loss on a small random router in double
/// precision, using two multi-step replays with opposite advantages.
numerics::GradcheckReport policy_gradcheck(const PolicyGradcheckOptions& options);

}  // namespace medroute::rl
