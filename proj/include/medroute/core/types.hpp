#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace medroute::core {

/// One diagnostic task.
struct Case {
  std::string id;
  std::string question;
  std::optional<std::vector<std::string>> options;
  std::string answer;
  std::optional<std::size_t> answer_index;
  std::optional<std::string> caption;
  std::optional<std::string> image_ref;

  bool is_multiple_choice() const { return options.has_value() && answer_index.has_value(); }

  /// Throws DataError when the per-case invariants do not hold.
  void validate() const;

  friend bool operator==(const Case&, const Case&) = default;
};

struct Specialist {
  std::string role_name;
  std::string responsibility;

  friend bool operator==(const Specialist&, const Specialist&) = default;
};

/// Ordered roster of candidate roles. Position in the roster is the action index.
class SpecialistPool {
 public:
  SpecialistPool() = default;
  explicit SpecialistPool(std::vector<Specialist> specialists);

  std::size_t k() const { return specialists_.size(); }
  const Specialist& operator[](std::size_t i) const { return specialists_.at(i); }
  const std::vector<Specialist>& specialists() const { return specialists_; }

  friend bool operator==(const SpecialistPool&, const SpecialistPool&) = default;

 private:
  std::vector<Specialist> specialists_;
};

struct Diagnosis {
  std::size_t specialist_index = 0;
  std::string specialist_role;
  std::string text;
  std::size_t step = 0;

  friend bool operator==(const Diagnosis&, const Diagnosis&) = default;
};

/// Shared history of specialist diagnoses within one episode.
class DiagnosticRecord {
 public:
  const std::vector<Diagnosis>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  bool consulted(std::size_t specialist_index) const;
  std::vector<std::size_t> consulted_indices() const;

  friend bool operator==(const DiagnosticRecord&, const DiagnosticRecord&) = default;

 private:
  friend DiagnosticRecord append_diagnosis(DiagnosticRecord record, Diagnosis d);
  std::vector<Diagnosis> entries_;
};

/// Appends `d`, assigning it the next step number. Rejects a repeated specialist.
DiagnosticRecord append_diagnosis(DiagnosticRecord record, Diagnosis d);

/// Renders the record as "ROLE: text" lines, newest entries kept when over `max_chars`
/// (counted in UTF-8 code points).
std::string render_history(const DiagnosticRecord& record, std::size_t max_chars);

/// Routing decision: consult specialist i, or stop.
class Action {
 public:
  static Action specialist(std::size_t index) { return Action(static_cast<std::int64_t>(index)); }
  static Action stop() { return Action(-1); }

  bool is_stop() const { return value_ < 0; }
  std::size_t index() const { return static_cast<std::size_t>(value_); }

  friend bool operator==(const Action&, const Action&) = default;

 private:
  explicit Action(std::int64_t v) : value_(v) {}
  std::int64_t value_;
};

struct TrajectoryStep {
  std::size_t step = 0;
  Action action = Action::stop();
  std::vector<double> distribution;
  double log_prob = 0.0;
  std::optional<std::string> diagnosis;

  friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

struct Trajectory {
  std::string case_id;
  std::vector<TrajectoryStep> steps;
  std::string final_decision;
  std::size_t length_l = 0;
  double reward = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::string> failure;

  /// Number of non-STOP actions.
  std::size_t recompute_length() const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

}  // namespace medroute::core
