#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "medroute/core/types.hpp"

namespace medroute::orchestrator {

/// The agents an episode talks to. The orchestration loop is identical for every
/// implementation; this is the only substitution point between live and synthetic runs.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string specialist_call(const core::Case& c, std::size_t specialist_index,
                                      const core::Specialist& specialist,
                                      const core::DiagnosticRecord& record) = 0;
  virtual std::string moderator_call(const core::Case& c, const core::DiagnosticRecord& record) = 0;
  /// Binary correctness of a final decision against the case's ground truth.
  virtual int reward(const core::Case& c, std::string_view prediction) = 0;
};

}  // namespace medroute::orchestrator
