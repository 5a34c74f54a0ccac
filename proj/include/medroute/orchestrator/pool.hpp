#pragma once

#include <map>
#include <string>
#include <vector>

#include "medroute/backends/backend.hpp"
#include "medroute/core/types.hpp"
#include "medroute/orchestrator/prompts.hpp"

namespace medroute::orchestrator {

inline constexpr std::size_t kMinSuggestions = 3;
inline constexpr std::size_t kMaxSuggestions = 7;

struct PoolReport {
  core::SpecialistPool pool;
  std::map<std::string, std::size_t> counts;  // over all successful questions
  std::size_t questions_ok = 0;
  std::vector<std::string> warnings;
};

/// One normalized role per non-empty line: list markers stripped, words title-cased,
/// duplicates within the reply dropped.
std::vector<std::string> parse_role_list(const std::string& reply);

/// Top `k_top` roles by count; ties broken lexicographically.
std::vector<std::string> rank_roles(const std::map<std::string, std::size_t>& counts,
                                    std::size_t k_top);

PoolReport build_pool(const std::vector<std::string>& questions, backends::ChatBackend& backend,
                      const PromptLibrary& prompts, std::size_t k_top);

}  // namespace medroute::orchestrator
