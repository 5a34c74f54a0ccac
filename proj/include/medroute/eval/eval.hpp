#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "medroute/backends/backend.hpp"
#include "medroute/core/types.hpp"
#include "medroute/orchestrator/prompts.hpp"

namespace medroute::eval {

enum class JudgeMode { kMcq, kOpen, kExact };

std::string_view judge_mode_name(JudgeMode m);
JudgeMode parse_judge_mode(std::string_view s);

struct ScoreRecord {
  std::string case_id;
  std::string prediction;
  int score = 0;
  JudgeMode judge_mode = JudgeMode::kExact;

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

void to_json(nlohmann::json& j, const ScoreRecord& r);
void from_json(const nlohmann::json& j, ScoreRecord& r);

/// Last integer token in the reply, accepted only when it is 0 or 1.
std::optional<int> parse_judge_reply(std::string_view reply);

/// Trimmed and case-folded, with internal whitespace collapsed.
std::string normalize_answer(std::string_view s);

/// Offline option matching: the option letter ("B", "(b)", "B.") or the correct option's text.
int exact_mcq(const core::Case& c, std::string_view prediction);
int exact_open(const core::Case& c, std::string_view prediction);

/// Asks `backend` for a 0/1 verdict; one re-ask when the reply has no verdict.
int judge_mcq(const core::Case& c, std::string_view prediction, backends::ChatBackend& backend,
              const orchestrator::PromptLibrary& prompts);
int judge_open(const core::Case& c, std::string_view prediction, backends::ChatBackend& backend,
               const orchestrator::PromptLibrary& prompts);

/// Live judging when `backend` is non-null, exact matching otherwise.
ScoreRecord score_case(const core::Case& c, std::string_view prediction,
                       backends::ChatBackend* backend, const orchestrator::PromptLibrary* prompts);

/// 100 * mean, rounded half-up to two decimals. Throws on empty input.
double accuracy(std::span<const int> scores);
std::string format_accuracy(double pct);

/// "accuracy=<pct> n=<count> correct=<count>"
std::string summary_line(std::span<const ScoreRecord> records);

void save_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records);
std::vector<ScoreRecord> load_scores(const std::filesystem::path& path);

}  // namespace medroute::eval
