#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medroute/backends/backend.hpp"
#include "medroute/core/random.hpp"
#include "medroute/core/types.hpp"
#include "medroute/embed/embed.hpp"
#include "medroute/orchestrator/environment.hpp"
#include "medroute/orchestrator/prompts.hpp"
#include "medroute/router/router.hpp"

namespace medroute::orchestrator {

struct EpisodeConfig {
  std::size_t max_steps = 5;
  double temperature = 0.0;  // 0 = greedy
  double gamma = 0.98;       // discount applied to the trajectory reward
  std::size_t history_max_chars = 4000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Router inputs of one sampled step, kept so the log-probability can be rebuilt on a
/// fresh tape for the policy gradient.
struct ReplayStep {
  numerics::Tensor history;
  std::vector<std::size_t> consulted;
  std::size_t step = 1;
  std::size_t index = 0;  // chosen position in the [k + 1] layout
};

struct EpisodeReplay {
  numerics::Tensor task;
  std::vector<numerics::Tensor> roles;
  double inv_temperature = 1.0;
  std::vector<ReplayStep> steps;  // router-decided steps only; a max_steps stop is not here
};

struct Episode {
  core::Trajectory trajectory;
  EpisodeReplay replay;
  int rm = 0;  // binary correctness of the final decision
};

/// Raised when an environment call fails; carries the partial trajectory with its
/// failure marker set.
class EpisodeFailure : public Error {
 public:
  EpisodeFailure(const std::string& what, core::Trajectory t) : Error(what), trajectory_(std::move(t)) {}
  const core::Trajectory& trajectory() const { return trajectory_; }

 private:
  core::Trajectory trajectory_;
};

std::vector<numerics::Tensor> embed_roles(const core::SpecialistPool& pool,
                                          const embed::EmbedConfig& cfg);

/// Runs one routed consultation. `role_embeddings` must come from embed_roles(pool).
Episode diagnose(const core::Case& c, const core::SpecialistPool& pool,
                 std::span<const numerics::Tensor> role_embeddings,
                 const router::RouterParams& params, Environment& env, const EpisodeConfig& cfg,
                 core::Rng& rng);

/// Text after the last line starting with "ANSWER:", else the whole reply, trimmed.
std::string extract_answer(const std::string& reply);

/// Appends one JSONL line. Safe against concurrent writers in this process.
void log_trajectory(const core::Trajectory& t, const std::filesystem::path& sink);

/// Multiple-choice options rendered as "A. text" lines; empty for open questions.
std::string render_options(const core::Case& c);

using Scorer = std::function<int(const core::Case&, std::string_view prediction)>;

/// Environment backed by a chat backend. Correctness is delegated to `scorer`.
class LiveEnvironment : public Environment {
 public:
  LiveEnvironment(backends::ChatBackend& backend, const PromptLibrary& prompts, Scorer scorer,
                  std::size_t history_max_chars = 4000);

  std::string specialist_call(const core::Case& c, std::size_t specialist_index,
                              const core::Specialist& specialist,
                              const core::DiagnosticRecord& record) override;
  std::string moderator_call(const core::Case& c, const core::DiagnosticRecord& record) override;
  int reward(const core::Case& c, std::string_view prediction) override;

 private:
  std::map<std::string, std::string> case_vars(const core::Case& c,
                                               const core::DiagnosticRecord& record) const;

  backends::ChatBackend& backend_;
  const PromptLibrary& prompts_;
  Scorer scorer_;
  std::size_t history_max_chars_;
};

}  // namespace medroute::orchestrator
