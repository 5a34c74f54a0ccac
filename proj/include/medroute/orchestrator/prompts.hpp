#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace medroute::orchestrator {

/// Directory baked in at build time.
std::filesystem::path default_prompts_dir();

/// Plain-text templates keyed by file stem. Placeholders look like {{name}}.
class PromptLibrary {
 public:
  /// Loads every *.txt file in `dir`. Throws DataError when the directory is unreadable.
  static PromptLibrary load(const std::filesystem::path& dir);

  const std::string& raw(std::string_view name) const;
  bool has(std::string_view name) const;

  /// Substitutes every {{key}}. Unknown placeholders are an error.
  std::string render(std::string_view name, const std::map<std::string, std::string>& vars) const;

  void set(std::string name, std::string text) { templates_[std::move(name)] = std::move(text); }

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

}  // namespace medroute::orchestrator
