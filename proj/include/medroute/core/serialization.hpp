#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medroute/core/types.hpp"

namespace medroute::core {

void to_json(nlohmann::json& j, const Case& c);
void from_json(const nlohmann::json& j, Case& c);
void to_json(nlohmann::json& j, const Specialist& s);
void from_json(const nlohmann::json& j, Specialist& s);
void to_json(nlohmann::json& j, const SpecialistPool& p);
void from_json(const nlohmann::json& j, SpecialistPool& p);
void to_json(nlohmann::json& j, const Diagnosis& d);
void from_json(const nlohmann::json& j, Diagnosis& d);
void to_json(nlohmann::json& j, const DiagnosticRecord& r);
void from_json(const nlohmann::json& j, DiagnosticRecord& r);
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);

/// Reads a JSONL dataset. Errors name the offending line (1-based) or duplicate id.
std::vector<Case> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const std::vector<Case>& cases);

SpecialistPool load_pool(const std::filesystem::path& path);
void save_pool(const std::filesystem::path& path, const SpecialistPool& pool);

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path);

/// One-line JSON text for a trajectory (no trailing newline).
std::string trajectory_line(const Trajectory& t);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace medroute::core
