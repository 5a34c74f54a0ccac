#include "medroute/core/types.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "medroute/core/error.hpp"

namespace medroute::core {

namespace {

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_continuation_byte(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

std::size_t count_code_points(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return !is_continuation_byte(c); }));
}

// Last `n` code points of `s`.
std::string tail_code_points(const std::string& s, std::size_t n) {
  std::size_t seen = 0;
  std::size_t pos = s.size();
  while (pos > 0 && seen < n) {
    --pos;
    if (!is_continuation_byte(s[pos])) ++seen;
  }
  return s.substr(pos);
}

}  // namespace

void Case::validate() const {
  if (id.empty()) throw DataError("case id must be non-empty");
  if (options) {
    if (options->size() < 2) throw DataError("case " + id + ": options needs at least 2 entries");
  }
  if (answer_index) {
    if (!options) throw DataError("case " + id + ": answer_index present without options");
    if (*answer_index >= options->size())
      throw DataError("case " + id + ": answer_index out of range");
  }
}

SpecialistPool::SpecialistPool(std::vector<Specialist> specialists)
    : specialists_(std::move(specialists)) {
  if (specialists_.empty()) throw DataError("specialist pool must contain at least one role");
  std::set<std::string> seen;
  for (const auto& s : specialists_) {
    if (s.role_name.empty()) throw DataError("specialist role_name must be non-empty");
    if (!seen.insert(lowercase(s.role_name)).second)
      throw DataError("duplicate specialist role: " + s.role_name);
  }
}

bool DiagnosticRecord::consulted(std::size_t specialist_index) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Diagnosis& d) { return d.specialist_index == specialist_index; });
}

std::vector<std::size_t> DiagnosticRecord::consulted_indices() const {
  std::vector<std::size_t> out;
  out.reserve(entries_.size());
  for (const auto& d : entries_) out.push_back(d.specialist_index);
  return out;
}

DiagnosticRecord append_diagnosis(DiagnosticRecord record, Diagnosis d) {
  if (record.consulted(d.specialist_index))
    throw Error("specialist " + std::to_string(d.specialist_index) +
                " already consulted in this record");
  d.step = record.entries_.empty() ? 1 : record.entries_.back().step + 1;
  record.entries_.push_back(std::move(d));
  return record;
}

std::string render_history(const DiagnosticRecord& record, std::size_t max_chars) {
  const auto& entries = record.entries();
  if (entries.empty() || max_chars == 0) return {};

  std::vector<std::string> lines;
  lines.reserve(entries.size());
  for (const auto& d : entries) lines.push_back(d.specialist_role + ": " + d.text);

  // Walk back from the newest entry while the joined text still fits.
  std::size_t used = 0;
  std::size_t first = lines.size();
  while (first > 0) {
    const std::size_t cost =
        count_code_points(lines[first - 1]) + (first == lines.size() ? 0 : 1);
    if (used + cost > max_chars) break;
    used += cost;
    --first;
  }
  if (first == lines.size()) return tail_code_points(lines.back(), max_chars);

  std::string out;
  for (std::size_t i = first; i < lines.size(); ++i) {
    if (i != first) out += '\n';
    out += lines[i];
  }
  return out;
}

std::size_t Trajectory::recompute_length() const {
  return static_cast<std::size_t>(std::count_if(
      steps.begin(), steps.end(), [](const TrajectoryStep& s) { return !s.action.is_stop(); }));
}

}  // namespace medroute::core
