#include "medroute/orchestrator/pool.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "medroute/core/error.hpp"

namespace medroute::orchestrator {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string title_case(const std::string& s) {
  std::string out;
  bool start = true;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      if (!out.empty() && out.back() != ' ') out += ' ';
      start = true;
      continue;
    }
    out += static_cast<char>(start ? std::toupper(c) : std::tolower(c));
    start = c == '-' || c == '/';
  }
  return trim(out);
}

}  // namespace

std::vector<std::string> parse_role_list(const std::string& reply) {
  std::vector<std::string> roles;
  std::set<std::string> seen;
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    std::string s = trim(line);
    // "1.", "2)", "-", "*", "•" style prefixes
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) s = s.substr(i + 1);
    s = trim(s);
    while (!s.empty() && (s[0] == '-' || s[0] == '*')) s = trim(s.substr(1));
    if (s.rfind("\xE2\x80\xA2", 0) == 0) s = trim(s.substr(3));
    while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';')) s.pop_back();
    s = title_case(s);
    if (s.empty()) continue;
    if (seen.insert(s).second) roles.push_back(s);
  }
  return roles;
}

std::vector<std::string> rank_roles(const std::map<std::string, std::size_t>& counts,
                                    std::size_t k_top) {
  std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size() && i < k_top; ++i) out.push_back(v[i].first);
  return out;
}

PoolReport build_pool(const std::vector<std::string>& questions, backends::ChatBackend& backend,
                      const PromptLibrary& prompts, std::size_t k_top) {
  if (questions.empty()) throw ConfigError("build_pool needs at least one question");
  if (k_top < 1) throw ConfigError("top-k must be at least 1");

  PoolReport report;
  auto warn = [&](std::string msg) {
    spdlog::warn("{}", msg);
    report.warnings.push_back(std::move(msg));
  };

  for (std::size_t q = 0; q < questions.size(); ++q) {
    std::vector<std::string> roles;
    try {
      roles = parse_role_list(backend.complete(
          {backends::ChatMessage::user(prompts.render("pool_suggestion", {{"question", questions[q]}}))}));
    } catch (const Error& e) {
      warn("question " + std::to_string(q) + ": skipped after backend failure: " + e.what());
      continue;
    }
    if (roles.size() > kMaxSuggestions) {
      warn("question " + std::to_string(q) + ": " + std::to_string(roles.size()) +
           " suggestions, keeping the first " + std::to_string(kMaxSuggestions));
      roles.resize(kMaxSuggestions);
    } else if (roles.size() < kMinSuggestions) {
      warn("question " + std::to_string(q) + ": only " + std::to_string(roles.size()) +
           " suggestions");
    }
    for (const auto& r : roles) ++report.counts[r];
    ++report.questions_ok;
  }
  if (report.questions_ok == 0) throw Error("pool construction failed for every question");

  std::vector<core::Specialist> specialists;
  for (const auto& role : rank_roles(report.counts, k_top)) {
    std::string text = backend.complete(
        {backends::ChatMessage::user(prompts.render("responsibility", {{"role", role}}))});
    const auto b = text.find_first_not_of(" \t\r\n");
    const auto e = text.find_last_not_of(" \t\r\n");
    specialists.push_back({role, b == std::string::npos ? role : text.substr(b, e - b + 1)});
  }
  report.pool = core::SpecialistPool(std::move(specialists));
  return report;
}

}  // namespace medroute::orchestrator
