#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "medroute/core/random.hpp"
#include "medroute/core/types.hpp"
#include "medroute/orchestrator/environment.hpp"

namespace medroute::synthclinic {

inline constexpr std::string_view kNoFinding = "NO FINDING";
inline constexpr std::string_view kInconclusive = "INCONCLUSIVE";

struct SynthCase {
  core::Case base;
  std::vector<std::size_t> required_sequence;  // order in which specialists must be consulted
  std::vector<std::string> clue_tokens;        // one per required specialist
  std::string label;

  friend bool operator==(const SynthCase&, const SynthCase&) = default;
};

/// Deterministic clinic with known ground truth: a case is solved exactly when its
/// required specialists are consulted in order.
class SynthWorld {
 public:
  SynthWorld() = default;
  SynthWorld(std::uint64_t seed, std::vector<std::vector<std::string>> vocab,
             std::vector<SynthCase> cases, core::SpecialistPool pool);

  std::uint64_t seed() const { return seed_; }
  std::size_t k() const { return pool_.k(); }
  const std::vector<std::vector<std::string>>& vocab() const { return vocab_; }
  const std::vector<SynthCase>& cases() const { return cases_; }
  const core::SpecialistPool& pool() const { return pool_; }

  /// Throws DataError for an unknown id.
  const SynthCase& find(std::string_view case_id) const;
  std::vector<core::Case> plain_cases() const;

  friend bool operator==(const SynthWorld& a, const SynthWorld& b) {
    return a.seed_ == b.seed_ && a.vocab_ == b.vocab_ && a.cases_ == b.cases_ && a.pool_ == b.pool_;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<std::vector<std::string>> vocab_;
  std::vector<SynthCase> cases_;
  core::SpecialistPool pool_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// k >= 2, n_cases >= 1, max_seq_len in [1, 3].
SynthWorld generate_world(std::uint64_t seed, std::size_t k, std::size_t n_cases,
                          std::size_t max_seq_len);

/// "FINDING: <clue>" when `specialist_index` is the next unmet required specialist given
/// `record`, otherwise "NO FINDING".
std::string specialist_respond(const SynthWorld& world, const SynthCase& c,
                               std::size_t specialist_index, const core::DiagnosticRecord& record);

/// The label when every clue appears in the record in required order, else "INCONCLUSIVE".
std::string moderator_respond(const SynthWorld& world, const SynthCase& c,
                              const core::DiagnosticRecord& record);

/// 1 iff trimmed, case-folded strings are equal.
int reward_model(std::string_view prediction, std::string_view ground_truth);

struct BaselineEstimate {
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double mean_length = 0.0;
  std::size_t episodes = 0;
};

/// Monte-Carlo estimate under uniformly random valid actions (STOP is one of the options
/// after step 1). Cases are drawn uniformly from `cases`, or from the whole world when empty.
BaselineEstimate random_baseline(const SynthWorld& world, std::span<const SynthCase> cases,
                                 std::size_t episodes, std::size_t max_steps, double gamma,
                                 core::Rng& rng);

nlohmann::json world_to_json(const SynthWorld& world);
SynthWorld world_from_json(const nlohmann::json& j);
void save_world(const std::filesystem::path& path, const SynthWorld& world);
SynthWorld load_world(const std::filesystem::path& path);

/// Environment backed entirely by the synthetic world.
class SynthEnvironment : public orchestrator::Environment {
 public:
  explicit SynthEnvironment(const SynthWorld& world) : world_(world) {}

  std::string specialist_call(const core::Case& c, std::size_t specialist_index,
                              const core::Specialist& specialist,
                              const core::DiagnosticRecord& record) override;
  std::string moderator_call(const core::Case& c, const core::DiagnosticRecord& record) override;
  int reward(const core::Case& c, std::string_view prediction) override;

 private:
  const SynthWorld& world_;
};

}  // namespace medroute::synthclinic
