#include "medroute/orchestrator/prompts.hpp"

#include "medroute/core/error.hpp"
#include "medroute/core/serialization.hpp"

namespace medroute::orchestrator {

std::filesystem::path default_prompts_dir() { return MEDROUTE_PROMPTS_DIR; }

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw DataError("prompts directory " + dir.string() + " does not exist");
  PromptLibrary lib;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    lib.templates_[entry.path().stem().string()] = core::read_text_file(entry.path());
  }
  return lib;
}

bool PromptLibrary::has(std::string_view name) const { return templates_.find(name) != templates_.end(); }

const std::string& PromptLibrary::raw(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw DataError("missing prompt template " + std::string(name) + ".txt");
  return it->second;
}

std::string PromptLibrary::render(std::string_view name,
                                  const std::map<std::string, std::string>& vars) const {
  const std::string& t = raw(name);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = t.find("{{", pos);
    if (open == std::string::npos) break;
    const auto close = t.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(t, pos, open - pos);
    const std::string key = t.substr(open + 2, close - open - 2);
    auto it = vars.find(key);
    if (it == vars.end())
      throw DataError("prompt " + std::string(name) + " uses unknown placeholder {{" + key + "}}");
    out += it->second;
    pos = close + 2;
  }
  out.append(t, pos);
  return out;
}

}  // namespace medroute::orchestrator
