#include "medroute/synthclinic/world.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include "medroute/core/error.hpp"
#include "medroute/core/serialization.hpp"
#include "medroute/router/router.hpp"

namespace medroute::synthclinic {

namespace {

constexpr std::size_t kVocabSize = 2;
constexpr std::size_t kPrimaryKeywords = 2;
constexpr std::size_t kSecondaryKeywords = 1;

constexpr const char* kSpecialties[] = {
    "Cardiologist",     "Neurologist",    "Pulmonologist",   "Gastroenterologist",
    "Nephrologist",     "Dermatologist",  "Endocrinologist", "Oncologist",
    "Rheumatologist",   "Hematologist",   "Ophthalmologist", "Urologist"};

constexpr const char* kOrdinals[] = {"Primary", "Secondary", "Tertiary"};

std::string pseudo_word(core::Rng& rng, std::size_t syllables) {
  static constexpr std::string_view consonants = "bcdfghklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) {
    w += consonants[core::uniform_index(rng, consonants.size())];
    w += vowels[core::uniform_index(rng, vowels.size())];
  }
  return w;
}

std::string hex_token(core::Rng& rng) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06llx",
                static_cast<unsigned long long>(core::uniform_index(rng, 0x1000000)));
  return buf;
}

std::string normalize(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Number of leading required specialists whose clue already sits in the record, in order.
std::size_t progress(const SynthCase& c, const core::DiagnosticRecord& record,
                     bool require_specialist) {
  std::size_t p = 0;
  for (const auto& d : record.entries()) {
    if (p == c.required_sequence.size()) break;
    if (require_specialist && d.specialist_index != c.required_sequence[p]) continue;
    if (d.text.find(c.clue_tokens[p]) != std::string::npos) ++p;
  }
  return p;
}

}  // namespace

SynthWorld::SynthWorld(std::uint64_t seed, std::vector<std::vector<std::string>> vocab,
                       std::vector<SynthCase> cases, core::SpecialistPool pool)
    : seed_(seed), vocab_(std::move(vocab)), cases_(std::move(cases)), pool_(std::move(pool)) {
  if (vocab_.size() != pool_.k()) throw DataError("synthetic world: vocab count != pool size");
  std::set<std::string> seen_words;
  for (const auto& list : vocab_)
    for (const auto& w : list)
      if (!seen_words.insert(w).second)
        throw DataError("synthetic world: keyword \"" + w + "\" shared across specialties");
  std::set<std::string> labels;
  for (std::size_t i = 0; i < cases_.size(); ++i) {
    const auto& c = cases_[i];
    if (c.required_sequence.empty() || c.required_sequence.size() > 3 ||
        c.clue_tokens.size() != c.required_sequence.size())
      throw DataError("synthetic case " + c.base.id + " has a malformed required sequence");
    for (auto idx : c.required_sequence)
      if (idx >= pool_.k())
        throw DataError("synthetic case " + c.base.id + " requires specialist outside the pool");
    if (!labels.insert(c.label).second)
      throw DataError("synthetic world: duplicate label " + c.label);
    if (!index_.emplace(c.base.id, i).second)
      throw DataError("synthetic world: duplicate case id " + c.base.id);
  }
}

const SynthCase& SynthWorld::find(std::string_view case_id) const {
  auto it = index_.find(std::string(case_id));
  if (it == index_.end()) throw DataError("unknown synthetic case id " + std::string(case_id));
  return cases_[it->second];
}

std::vector<core::Case> SynthWorld::plain_cases() const {
  std::vector<core::Case> out;
  out.reserve(cases_.size());
  for (const auto& c : cases_) out.push_back(c.base);
  return out;
}

SynthWorld generate_world(std::uint64_t seed, std::size_t k, std::size_t n_cases,
                          std::size_t max_seq_len) {
  if (k < 2) throw ConfigError("synthetic world needs k >= 2");
  if (n_cases < 1) throw ConfigError("synthetic world needs at least one case");
  if (max_seq_len < 1 || max_seq_len > 3) throw ConfigError("max_seq_len must be in [1, 3]");
  if (max_seq_len > k) throw ConfigError("max_seq_len cannot exceed k");

  core::Rng rng(core::derive_seed(seed, {0x73796E7468ULL}));
  std::set<std::string> used;
  std::vector<std::vector<std::string>> vocab(k);
  for (auto& list : vocab) {
    while (list.size() < kVocabSize) {
      auto w = pseudo_word(rng, 3);
      if (used.insert(w).second) list.push_back(std::move(w));
    }
  }

  std::vector<core::Specialist> specialists;
  for (std::size_t i = 0; i < k; ++i) {
    std::string name = i < std::size(kSpecialties) ? kSpecialties[i]
                                                    : "Specialist " + std::to_string(i + 1);
    std::string resp = "Responsible for cases involving";
    for (std::size_t w = 0; w < vocab[i].size(); ++w)
      resp += (w == 0 ? " " : ", ") + vocab[i][w];
    resp += ".";
    specialists.push_back({std::move(name), std::move(resp)});
  }

  std::vector<SynthCase> cases;
  cases.reserve(n_cases);
  for (std::size_t n = 0; n < n_cases; ++n) {
    SynthCase c;
    const std::size_t len = 1 + core::uniform_index(rng, max_seq_len);
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t j = i + core::uniform_index(rng, k - i);
      std::swap(order[i], order[j]);
      c.required_sequence.push_back(order[i]);
    }

    const auto& first = vocab[c.required_sequence[0]];
    std::vector<std::size_t> picks(first.size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    std::string question = "Patient presents with";
    for (std::size_t i = 0; i < kPrimaryKeywords; ++i) {
      const std::size_t j = i + core::uniform_index(rng, picks.size() - i);
      std::swap(picks[i], picks[j]);
      question += (i == 0 ? " " : " and ") + first[picks[i]];
    }
    question += ".";
    for (std::size_t s = 1; s < len; ++s) {
      const auto& v = vocab[c.required_sequence[s]];
      const std::size_t a = core::uniform_index(rng, v.size());
      question += " " + std::string(kOrdinals[s]) + " concern: " + v[a];
      for (std::size_t i = 1; i < kSecondaryKeywords; ++i) question += " and " + v[(a + i) % v.size()];
      question += ".";
    }

    for (std::size_t s = 0; s < len; ++s) c.clue_tokens.push_back("clue-" + hex_token(rng));
    char id[32];
    std::snprintf(id, sizeof id, "synth-%05zu", n);
    c.label = "Dx-" + std::to_string(n) + "-" + pseudo_word(rng, 2);
    c.base.id = id;
    c.base.question = std::move(question);
    c.base.answer = c.label;
    cases.push_back(std::move(c));
  }
  return SynthWorld(seed, std::move(vocab), std::move(cases),
                    core::SpecialistPool(std::move(specialists)));
}

std::string specialist_respond(const SynthWorld& world, const SynthCase& c,
                               std::size_t specialist_index, const core::DiagnosticRecord& record) {
  if (specialist_index >= world.k())
    throw Error("specialist index " + std::to_string(specialist_index) + " outside pool");
  const std::size_t p = progress(c, record, true);
  if (p < c.required_sequence.size() && c.required_sequence[p] == specialist_index)
    return "FINDING: " + c.clue_tokens[p];
  return std::string(kNoFinding);
}

std::string moderator_respond(const SynthWorld&, const SynthCase& c,
                              const core::DiagnosticRecord& record) {
  return progress(c, record, false) == c.required_sequence.size() ? c.label
                                                                   : std::string(kInconclusive);
}

int reward_model(std::string_view prediction, std::string_view ground_truth) {
  return normalize(prediction) == normalize(ground_truth) ? 1 : 0;
}

BaselineEstimate random_baseline(const SynthWorld& world, std::span<const SynthCase> cases,
                                 std::size_t episodes, std::size_t max_steps, double gamma,
                                 core::Rng& rng) {
  if (episodes < 1) throw ConfigError("random_baseline needs at least one episode");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (cases.empty()) cases = world.cases();
  if (cases.empty()) throw DataError("random_baseline: world has no cases");
  const std::size_t k = world.k();

  BaselineEstimate est;
  est.episodes = episodes;
  double reward_sum = 0.0, correct = 0.0, length_sum = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    const SynthCase& c = cases[core::uniform_index(rng, cases.size())];
    core::DiagnosticRecord record;
    for (std::size_t step = 1; record.size() < max_steps; ++step) {
      const auto consulted = record.consulted_indices();
      const auto mask = router::action_mask(k, consulted, step);
      std::vector<std::size_t> valid;
      for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) valid.push_back(i);
      const std::size_t a = valid[core::uniform_index(rng, valid.size())];
      if (a == k) break;
      record = core::append_diagnosis(
          std::move(record), {a, world.pool()[a].role_name, specialist_respond(world, c, a, record), 0});
    }
    const int rm = reward_model(moderator_respond(world, c, record), c.label);
    const double l = static_cast<double>(record.size());
    reward_sum += std::pow(gamma, l) * rm;
    correct += rm;
    length_sum += l;
  }
  const double n = static_cast<double>(episodes);
  est.mean_reward = reward_sum / n;
  est.accuracy = correct / n;
  est.mean_length = length_sum / n;
  return est;
}

nlohmann::json world_to_json(const SynthWorld& world) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : world.cases()) {
    nlohmann::json j = c.base;
    j["required_sequence"] = c.required_sequence;
    j["clue_tokens"] = c.clue_tokens;
    j["label"] = c.label;
    cases.push_back(std::move(j));
  }
  return {{"seed", world.seed()},
          {"k", world.k()},
          {"vocab", world.vocab()},
          {"pool", world.pool().specialists()},
          {"cases", std::move(cases)}};
}

SynthWorld world_from_json(const nlohmann::json& j) {
  try {
    std::vector<SynthCase> cases;
    for (const auto& cj : j.at("cases")) {
      SynthCase c;
      c.base = cj.get<core::Case>();
      c.required_sequence = cj.at("required_sequence").get<std::vector<std::size_t>>();
      c.clue_tokens = cj.at("clue_tokens").get<std::vector<std::string>>();
      c.label = cj.at("label").get<std::string>();
      cases.push_back(std::move(c));
    }
    core::SpecialistPool pool(j.at("pool").get<std::vector<core::Specialist>>());
    if (j.at("k").get<std::size_t>() != pool.k())
      throw DataError("synthetic world: k does not match pool size");
    return SynthWorld(j.at("seed").get<std::uint64_t>(),
                      j.at("vocab").get<std::vector<std::vector<std::string>>>(),
                      std::move(cases), std::move(pool));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed synthetic world: ") + e.what());
  }
}

void save_world(const std::filesystem::path& path, const SynthWorld& world) {
  core::write_text_file(path, world_to_json(world).dump(1) + "\n");
}

SynthWorld load_world(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(core::read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

std::string SynthEnvironment::specialist_call(const core::Case& c, std::size_t specialist_index,
                                              const core::Specialist&,
                                              const core::DiagnosticRecord& record) {
  return specialist_respond(world_, world_.find(c.id), specialist_index, record);
}

std::string SynthEnvironment::moderator_call(const core::Case& c,
                                             const core::DiagnosticRecord& record) {
  return moderator_respond(world_, world_.find(c.id), record);
}

int SynthEnvironment::reward(const core::Case& c, std::string_view prediction) {
  return reward_model(prediction, c.answer);
}

}  // namespace medroute::synthclinic
