#include "medroute/orchestrator/episode.hpp"

#include <cmath>
#include <fcntl.h>
#include <mutex>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "medroute/core/error.hpp"
#include "medroute/core/serialization.hpp"

namespace medroute::orchestrator {

void EpisodeConfig::validate() const {
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
}

std::vector<numerics::Tensor> embed_roles(const core::SpecialistPool& pool,
                                          const embed::EmbedConfig& cfg) {
  std::vector<numerics::Tensor> out;
  out.reserve(pool.k());
  for (const auto& s : pool.specialists()) out.push_back(embed::role_embed(s, cfg).vector);
  return out;
}

Episode diagnose(const core::Case& c, const core::SpecialistPool& pool,
                 std::span<const numerics::Tensor> role_embeddings,
                 const router::RouterParams& params, Environment& env, const EpisodeConfig& cfg,
                 core::Rng& rng) {
  cfg.validate();
  const std::size_t k = pool.k();
  if (k == 0) throw ConfigError("specialist pool is empty");
  if (role_embeddings.size() != k) throw ConfigError("role embeddings do not match the pool");
  const auto& ecfg = params.config.embed;

  Episode ep;
  auto& traj = ep.trajectory;
  traj.case_id = c.id;
  traj.seed = cfg.seed;
  ep.replay.task = embed::task_embed(c, ecfg).vector;
  ep.replay.roles.assign(role_embeddings.begin(), role_embeddings.end());
  ep.replay.inv_temperature = cfg.temperature > 0.0 ? 1.0 / cfg.temperature : 1.0;

  core::DiagnosticRecord record;
  auto fail = [&](const std::string& what) -> EpisodeFailure {
    traj.length_l = traj.recompute_length();
    traj.failure = what;
    return EpisodeFailure("case " + c.id + ": " + what, traj);
  };

  for (std::size_t step = 1;; ++step) {
    if (record.size() >= cfg.max_steps) {
      core::TrajectoryStep forced;
      forced.step = step;
      forced.action = core::Action::stop();
      forced.distribution.assign(k + 1, 0.0);
      forced.distribution[k] = 1.0;
      traj.steps.push_back(std::move(forced));
      break;
    }
    ReplayStep rs;
    rs.history = record.empty() ? numerics::Tensor({ecfg.dim})
                                : embed::history_embed(record, ecfg, cfg.history_max_chars).vector;
    rs.consulted = record.consulted_indices();
    rs.step = step;

    numerics::Tape tape = router::make_tape(params);
    const router::RoutingContext ctx{&ep.replay.task, role_embeddings, &rs.history, rs.consulted, step};
    const auto input = router::assemble_input(tape, params, ctx);
    const auto out = router::forward(tape, params, input, params.config.head);
    auto sampled = router::sample_action(out, cfg.temperature, rng);
    rs.index = sampled.index;
    ep.replay.steps.push_back(std::move(rs));

    core::TrajectoryStep ts;
    ts.step = step;
    ts.action = sampled.action;
    ts.distribution = std::move(sampled.distribution);
    ts.log_prob = sampled.log_prob;
    if (sampled.action.is_stop()) {
      traj.steps.push_back(std::move(ts));
      break;
    }
    const std::size_t i = sampled.action.index();
    std::string text;
    try {
      text = env.specialist_call(c, i, pool[i], record);
    } catch (const Error& e) {
      traj.steps.push_back(std::move(ts));
      throw fail(std::string("specialist call failed: ") + e.what());
    }
    record = core::append_diagnosis(std::move(record), {i, pool[i].role_name, text, 0});
    ts.diagnosis = std::move(text);
    traj.steps.push_back(std::move(ts));
  }

  try {
    traj.final_decision = extract_answer(env.moderator_call(c, record));
    ep.rm = env.reward(c, traj.final_decision);
  } catch (const Error& e) {
    throw fail(std::string("moderator or scoring failed: ") + e.what());
  }
  if (ep.rm != 0 && ep.rm != 1) throw Error("reward model returned a non-binary score");
  traj.length_l = record.size();
  traj.reward = std::pow(cfg.gamma, static_cast<double>(traj.length_l)) * ep.rm;
  return ep;
}

std::string extract_answer(const std::string& reply) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  };
  std::optional<std::string> found;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto nl = reply.find('\n', pos);
    if (nl == std::string::npos) nl = reply.size();
    const std::string line = trim(std::string_view(reply).substr(pos, nl - pos));
    if (line.rfind("ANSWER:", 0) == 0) found = trim(std::string_view(line).substr(7));
    pos = nl + 1;
  }
  return found ? *found : trim(reply);
}

void log_trajectory(const core::Trajectory& t, const std::filesystem::path& sink) {
  static std::mutex mu;
  const std::string line = core::trajectory_line(t) + "\n";
  std::lock_guard lock(mu);
  const int fd = ::open(sink.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open " + sink.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = ::write(fd, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string msg = std::strerror(errno);
      ::close(fd);
      throw Error("write to " + sink.string() + " failed: " + msg);
    }
    done += static_cast<std::size_t>(n);
  }
  if (::close(fd) != 0) throw Error("closing " + sink.string() + " failed");
}

std::string render_options(const core::Case& c) {
  if (!c.options) return "";
  std::string out = "Options:\n";
  for (std::size_t i = 0; i < c.options->size(); ++i) {
    out += static_cast<char>('A' + static_cast<int>(i % 26));
    out += ". " + (*c.options)[i] + "\n";
  }
  return out;
}

LiveEnvironment::LiveEnvironment(backends::ChatBackend& backend, const PromptLibrary& prompts,
                                 Scorer scorer, std::size_t history_max_chars)
    : backend_(backend), prompts_(prompts), scorer_(std::move(scorer)),
      history_max_chars_(history_max_chars) {
  if (!scorer_) throw ConfigError("live environment needs a scorer");
}

std::map<std::string, std::string> LiveEnvironment::case_vars(
    const core::Case& c, const core::DiagnosticRecord& record) const {
  const std::string history = core::render_history(record, history_max_chars_);
  return {{"question", c.question},
          {"options", render_options(c)},
          {"caption", c.caption ? "Image description: " + *c.caption + "\n" : ""},
          {"history", history.empty() ? "(none yet)" : history}};
}

std::string LiveEnvironment::specialist_call(const core::Case& c, std::size_t,
                                             const core::Specialist& specialist,
                                             const core::DiagnosticRecord& record) {
  return backend_.complete({backends::ChatMessage::system(specialist.responsibility),
                            backends::ChatMessage::user(prompts_.render("specialist", case_vars(c, record)))});
}

std::string LiveEnvironment::moderator_call(const core::Case& c,
                                            const core::DiagnosticRecord& record) {
  return backend_.complete(
      {backends::ChatMessage::user(prompts_.render("moderator", case_vars(c, record)))});
}

int LiveEnvironment::reward(const core::Case& c, std::string_view prediction) {
  return scorer_(c, prediction);
}

}  // namespace medroute::orchestrator
