#include "medroute/eval/eval.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>

#include "medroute/core/error.hpp"

namespace medroute::eval {

using nlohmann::json;

std::string_view judge_mode_name(JudgeMode m) {
  switch (m) {
    case JudgeMode::kMcq: return "mcq";
    case JudgeMode::kOpen: return "open";
    case JudgeMode::kExact: return "exact";
  }
  return "exact";
}

JudgeMode parse_judge_mode(std::string_view s) {
  if (s == "mcq") return JudgeMode::kMcq;
  if (s == "open") return JudgeMode::kOpen;
  if (s == "exact") return JudgeMode::kExact;
  throw DataError("unknown judge mode \"" + std::string(s) + "\"");
}

void to_json(json& j, const ScoreRecord& r) {
  j = {{"case_id", r.case_id},
       {"prediction", r.prediction},
       {"score", r.score},
       {"judge_mode", judge_mode_name(r.judge_mode)}};
}

void from_json(const json& j, ScoreRecord& r) {
  r.case_id = j.at("case_id").get<std::string>();
  r.prediction = j.at("prediction").get<std::string>();
  r.score = j.at("score").get<int>();
  if (r.score != 0 && r.score != 1) throw DataError("score must be 0 or 1");
  r.judge_mode = parse_judge_mode(j.at("judge_mode").get<std::string>());
}

std::optional<int> parse_judge_reply(std::string_view reply) {
  std::optional<std::string> last;
  std::size_t i = 0;
  while (i < reply.size()) {
    if (std::isdigit(static_cast<unsigned char>(reply[i]))) {
      std::size_t j = i;
      while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
      last = std::string(reply.substr(i, j - i));
      i = j;
    } else {
      ++i;
    }
  }
  if (last == "0") return 0;
  if (last == "1") return 1;
  return std::nullopt;
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

int exact_mcq(const core::Case& c, std::string_view prediction) {
  if (!c.is_multiple_choice()) throw DataError("case " + c.id + " is not multiple choice");
  const std::size_t idx = *c.answer_index;
  const std::string p = normalize_answer(prediction);
  const std::string correct = normalize_answer((*c.options)[idx]);
  if (p == correct || p == normalize_answer(c.answer)) return 1;
  const char letter = static_cast<char>('a' + static_cast<int>(idx % 26));
  std::string bare = p;
  if (bare.size() >= 3 && bare.front() == '(' && bare[2] == ')') bare = bare.substr(1, 1) + bare.substr(3);
  if (bare.size() == 1 || (bare.size() == 2 && (bare[1] == '.' || bare[1] == ')')))
    return bare[0] == letter ? 1 : 0;
  // "b. option text" or "b) option text"
  if (bare.size() > 3 && bare[0] == letter && (bare[1] == '.' || bare[1] == ')') && bare[2] == ' ')
    return bare.substr(3) == correct ? 1 : 0;
  return 0;
}

int exact_open(const core::Case& c, std::string_view prediction) {
  return normalize_answer(prediction) == normalize_answer(c.answer) ? 1 : 0;
}

namespace {

int ask_judge(backends::ChatBackend& backend, const std::string& prompt, const std::string& case_id) {
  std::vector<backends::ChatMessage> messages{backends::ChatMessage::user(prompt)};
  std::string reply = backend.complete(messages);
  if (auto v = parse_judge_reply(reply)) return *v;
  messages.push_back({backends::MessageRole::kAssistant, reply, {}});
  messages.push_back(backends::ChatMessage::user("Answer with the single digit 1 or 0 only."));
  reply = backend.complete(messages);
  if (auto v = parse_judge_reply(reply)) return *v;
  throw Error("case " + case_id + ": judge reply has no 0/1 verdict: " + reply.substr(0, 120));
}

}  // namespace

int judge_mcq(const core::Case& c, std::string_view prediction, backends::ChatBackend& backend,
              const orchestrator::PromptLibrary& prompts) {
  if (!c.is_multiple_choice()) throw DataError("case " + c.id + " is not multiple choice");
  std::string options;
  for (std::size_t i = 0; i < c.options->size(); ++i)
    options += std::to_string(i) + ". " + (*c.options)[i] + "\n";
  const std::string prompt =
      prompts.render("judge_mcq", {{"question", c.question},
                                   {"options", options},
                                   {"answer_index", std::to_string(*c.answer_index)},
                                   {"answer", (*c.options)[*c.answer_index]},
                                   {"prediction", std::string(prediction)}});
  return ask_judge(backend, prompt, c.id);
}

int judge_open(const core::Case& c, std::string_view prediction, backends::ChatBackend& backend,
               const orchestrator::PromptLibrary& prompts) {
  const std::string prompt = prompts.render(
      "judge_open",
      {{"question", c.question}, {"answer", c.answer}, {"prediction", std::string(prediction)}});
  return ask_judge(backend, prompt, c.id);
}

ScoreRecord score_case(const core::Case& c, std::string_view prediction,
                       backends::ChatBackend* backend, const orchestrator::PromptLibrary* prompts) {
  ScoreRecord r;
  r.case_id = c.id;
  r.prediction = std::string(prediction);
  if (backend) {
    if (!prompts) throw ConfigError("live judging needs prompt templates");
    if (c.is_multiple_choice()) {
      r.judge_mode = JudgeMode::kMcq;
      r.score = judge_mcq(c, prediction, *backend, *prompts);
    } else {
      r.judge_mode = JudgeMode::kOpen;
      r.score = judge_open(c, prediction, *backend, *prompts);
    }
  } else {
    r.judge_mode = JudgeMode::kExact;
    r.score = c.is_multiple_choice() ? exact_mcq(c, prediction) : exact_open(c, prediction);
  }
  return r;
}

double accuracy(std::span<const int> scores) {
  if (scores.empty()) throw Error("accuracy of an empty score list");
  std::uint64_t correct = 0;
  for (int s : scores) {
    if (s != 0 && s != 1) throw DataError("score must be 0 or 1");
    correct += static_cast<std::uint64_t>(s);
  }
  const std::uint64_t n = scores.size();
  // basis points, half-up: floor((10000c + n/2) / n) in exact integer arithmetic
  const std::uint64_t bp = (20000 * correct + n) / (2 * n);
  return static_cast<double>(bp) / 100.0;
}

std::string format_accuracy(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", pct);
  return buf;
}

std::string summary_line(std::span<const ScoreRecord> records) {
  std::vector<int> scores;
  std::size_t correct = 0;
  for (const auto& r : records) {
    scores.push_back(r.score);
    correct += static_cast<std::size_t>(r.score);
  }
  return "accuracy=" + format_accuracy(accuracy(scores)) + " n=" + std::to_string(records.size()) +
         " correct=" + std::to_string(correct);
}

void save_scores(const std::filesystem::path& path, std::span<const ScoreRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << json(r).dump() << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<ScoreRecord> load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line).get<ScoreRecord>());
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace medroute::eval
