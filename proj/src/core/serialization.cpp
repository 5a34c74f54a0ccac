#include "medroute/core/serialization.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "medroute/core/error.hpp"

namespace medroute::core {

using nlohmann::json;

namespace {

const std::string& require_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw DataError(std::string("field \"") + key + "\" must be a string");
  return it->get_ref<const std::string&>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw DataError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

void to_json(json& j, const Case& c) {
  j = json{{"id", c.id}, {"question", c.question}, {"answer", c.answer}};
  if (c.options) j["options"] = *c.options;
  if (c.answer_index) j["answer_index"] = *c.answer_index;
  if (c.caption) j["caption"] = *c.caption;
  if (c.image_ref) j["image_ref"] = *c.image_ref;
}

void from_json(const json& j, Case& c) {
  if (!j.is_object()) throw DataError("case must be a JSON object");
  c.id = require_string(j, "id");
  c.question = require_string(j, "question");
  c.answer = require_string(j, "answer");
  c.options.reset();
  if (auto it = j.find("options"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw DataError("field \"options\" must be an array");
    std::vector<std::string> opts;
    for (const auto& o : *it) {
      if (!o.is_string()) throw DataError("options entries must be strings");
      opts.push_back(o.get<std::string>());
    }
    c.options = std::move(opts);
  }
  c.answer_index.reset();
  if (auto it = j.find("answer_index"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<long long>() < 0)
      throw DataError("field \"answer_index\" must be a non-negative integer");
    c.answer_index = it->get<std::size_t>();
  }
  c.caption = optional_string(j, "caption");
  c.image_ref = optional_string(j, "image_ref");
  c.validate();
}

void to_json(json& j, const Specialist& s) {
  j = json{{"role_name", s.role_name}, {"responsibility", s.responsibility}};
}

void from_json(const json& j, Specialist& s) {
  s.role_name = require_string(j, "role_name");
  s.responsibility = optional_string(j, "responsibility").value_or("");
}

void to_json(json& j, const SpecialistPool& p) {
  j = json{{"k", p.k()}, {"specialists", p.specialists()}};
}

void from_json(const json& j, SpecialistPool& p) {
  if (!j.is_object() || !j.contains("specialists") || !j["specialists"].is_array())
    throw DataError("pool must be an object with a \"specialists\" array");
  auto list = j["specialists"].get<std::vector<Specialist>>();
  if (auto it = j.find("k"); it != j.end() && it->get<std::size_t>() != list.size())
    throw DataError("pool k does not match number of specialists");
  p = SpecialistPool(std::move(list));
}

void to_json(json& j, const Diagnosis& d) {
  j = json{{"specialist_index", d.specialist_index},
           {"specialist_role", d.specialist_role},
           {"text", d.text},
           {"step", d.step}};
}

void from_json(const json& j, Diagnosis& d) {
  d.specialist_index = j.at("specialist_index").get<std::size_t>();
  d.specialist_role = j.at("specialist_role").get<std::string>();
  d.text = j.at("text").get<std::string>();
  d.step = j.at("step").get<std::size_t>();
}

void to_json(json& j, const DiagnosticRecord& r) { j = r.entries(); }

void from_json(const json& j, DiagnosticRecord& r) {
  DiagnosticRecord out;
  for (const auto& e : j) {
    auto d = e.get<Diagnosis>();
    const auto step = d.step;
    out = append_diagnosis(std::move(out), std::move(d));
    if (out.entries().back().step != step) throw DataError("diagnosis steps must be consecutive");
  }
  r = std::move(out);
}

void to_json(json& j, const Trajectory& t) {
  json steps = json::array();
  for (const auto& s : t.steps) {
    json step{{"step", s.step},
              {"distribution", s.distribution},
              {"log_prob", s.log_prob},
              {"diagnosis", s.diagnosis ? json(*s.diagnosis) : json(nullptr)}};
    step["action"] = s.action.is_stop() ? json("STOP") : json(s.action.index());
    steps.push_back(std::move(step));
  }
  j = json{{"case_id", t.case_id},   {"steps", std::move(steps)},
           {"final_decision", t.final_decision}, {"length_l", t.length_l},
           {"reward", t.reward},     {"seed", t.seed}};
  if (t.failure) j["failure"] = *t.failure;
}

void from_json(const json& j, Trajectory& t) {
  t.case_id = j.at("case_id").get<std::string>();
  t.steps.clear();
  for (const auto& s : j.at("steps")) {
    TrajectoryStep step;
    step.step = s.at("step").get<std::size_t>();
    const auto& a = s.at("action");
    if (a.is_string()) {
      if (a.get<std::string>() != "STOP") throw DataError("unknown action " + a.dump());
      step.action = Action::stop();
    } else {
      step.action = Action::specialist(a.get<std::size_t>());
    }
    step.distribution = s.at("distribution").get<std::vector<double>>();
    step.log_prob = s.at("log_prob").get<double>();
    if (auto it = s.find("diagnosis"); it != s.end() && !it->is_null())
      step.diagnosis = it->get<std::string>();
    t.steps.push_back(std::move(step));
  }
  t.final_decision = j.at("final_decision").get<std::string>();
  t.length_l = j.at("length_l").get<std::size_t>();
  t.reward = j.at("reward").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.failure.reset();
  if (auto it = j.find("failure"); it != j.end() && !it->is_null())
    t.failure = it->get<std::string>();
}

std::vector<Case> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::vector<Case> cases;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Case c;
    try {
      c = json::parse(line).get<Case>();
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!ids.insert(c.id).second)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate case id \"" +
                      c.id + "\"");
    cases.push_back(std::move(c));
  }
  return cases;
}

void save_dataset(const std::filesystem::path& path, const std::vector<Case>& cases) {
  std::string text;
  for (const auto& c : cases) {
    text += json(c).dump();
    text += '\n';
  }
  write_text_file(path, text);
}

SpecialistPool load_pool(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path)).get<SpecialistPool>();
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("invalid pool file " + path.string() + ": " + e.what());
  }
}

void save_pool(const std::filesystem::path& path, const SpecialistPool& pool) {
  write_text_file(path, json(pool).dump(2) + "\n");
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory log " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<Trajectory>());
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string trajectory_line(const Trajectory& t) { return json(t).dump(); }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace medroute::core
