#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "medroute/core/serialization.hpp"
#include "medroute/orchestrator/episode.hpp"
#include "medroute/orchestrator/pool.hpp"
#include "medroute/orchestrator/prompts.hpp"
#include "medroute/synthclinic/world.hpp"
#include "test_util.hpp"

namespace medroute::orchestrator {
namespace {

using medroute::testing::TempDir;

// Chat backend answering through a function of the last user message.
class FnBackend : public backends::ChatBackend {
 public:
  using Fn = std::function<std::string(const std::vector<backends::ChatMessage>&)>;
  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const std::vector<backends::ChatMessage>& m) override {
    calls.push_back(m);
    return fn_(m);
  }
  std::vector<std::vector<backends::ChatMessage>> calls;

 private:
  Fn fn_;
};

// Wraps an environment and records the order of calls.
class TracingEnv : public Environment {
 public:
  explicit TracingEnv(Environment& inner) : inner_(inner) {}
  std::string specialist_call(const core::Case& c, std::size_t i, const core::Specialist& s,
                              const core::DiagnosticRecord& r) override {
    log.push_back("S" + std::to_string(i));
    return inner_.specialist_call(c, i, s, r);
  }
  std::string moderator_call(const core::Case& c, const core::DiagnosticRecord& r) override {
    log.push_back("M");
    return inner_.moderator_call(c, r);
  }
  int reward(const core::Case& c, std::string_view p) override { return inner_.reward(c, p); }
  std::vector<std::string> log;

 private:
  Environment& inner_;
};

router::RouterConfig router_config(std::size_t k_max = 8) {
  router::RouterConfig c;
  c.embed.dim = 32;
  c.model_dim = 32;
  c.block_hidden = 64;
  c.head_hidden = 32;
  c.k_max = k_max;
  return c;
}

router::RouterParams random_params(std::uint64_t seed, router::HeadKind head = router::HeadKind::kMlp) {
  auto cfg = router_config();
  cfg.head = head;
  auto p = router::RouterParams::init(cfg, seed);
  core::Rng rng(seed ^ 0xABCD);
  for (auto* t : p.tensors())
    for (auto& v : t->values()) v += static_cast<float>(core::uniform01(rng) - 0.5);
  return p;
}

// Head that greedily picks `first` and then STOP.
router::RouterParams forced_params(std::size_t first) {
  auto p = router::RouterParams::init(router_config(), 1);
  p.head_b2[first] = 10.0f;
  p.head_b2[p.config.k_max] = 20.0f;
  return p;
}

// ---- pool ----

TEST(RankRoles, TiesLexicographic) {
  const std::map<std::string, std::size_t> counts{
      {"Cardiologist", 9}, {"Radiologist", 7}, {"Neurologist", 7}, {"Dermatologist", 1}};
  EXPECT_EQ(rank_roles(counts, 3),
            (std::vector<std::string>{"Cardiologist", "Neurologist", "Radiologist"}));
  EXPECT_EQ(rank_roles(counts, 10).size(), 4u);
}

TEST(ParseRoleList, Normalizes) {
  EXPECT_EQ(parse_role_list("1. cardiologist\n2) RADIOLOGIST.\n- infectious  disease specialist\n"
                            "\n* Cardiologist\n\xE2\x80\xA2 ear-nose-throat"),
            (std::vector<std::string>{"Cardiologist", "Radiologist", "Infectious Disease Specialist",
                                      "Ear-Nose-Throat"}));
}

PromptLibrary default_prompts() { return PromptLibrary::load(default_prompts_dir()); }

TEST(BuildPool, CountsRanksAndDescribes) {
  const auto prompts = default_prompts();
  FnBackend backend([](const auto& m) -> std::string {
    const auto& text = m.back().content;
    if (text.find("responsibilities") != std::string::npos) return "  You are on duty.  ";
    if (text.find("chest") != std::string::npos) return "Cardiologist\nRadiologist\nPulmonologist";
    return "Neurologist\nRadiologist\nCardiologist\nPsychiatrist";
  });
  const auto report = build_pool({"chest pain", "headache", "chest tightness"}, backend, prompts, 3);
  EXPECT_EQ(report.questions_ok, 3u);
  EXPECT_EQ(report.counts.at("Cardiologist"), 3u);
  EXPECT_EQ(report.counts.at("Radiologist"), 3u);
  EXPECT_EQ(report.counts.at("Pulmonologist"), 2u);
  ASSERT_EQ(report.pool.k(), 3u);
  EXPECT_EQ(report.pool[0].role_name, "Cardiologist");
  EXPECT_EQ(report.pool[1].role_name, "Radiologist");
  EXPECT_EQ(report.pool[2].role_name, "Pulmonologist");
  EXPECT_EQ(report.pool[0].responsibility, "You are on duty.");
  EXPECT_TRUE(report.warnings.empty());
}

TEST(BuildPool, SuggestionCountClippedWithWarning) {
  const auto prompts = default_prompts();
  FnBackend backend([](const auto& m) -> std::string {
    if (m.back().content.find("responsibilities") != std::string::npos) return "duty";
    if (m.back().content.find("many") != std::string::npos)
      return "A\nB\nC\nD\nE\nF\nG\nH\nI";
    return "A\nB";
  });
  const auto report = build_pool({"many", "few"}, backend, prompts, 20);
  EXPECT_EQ(report.warnings.size(), 2u);
  EXPECT_EQ(report.counts.count("H"), 0u);
  EXPECT_EQ(report.counts.at("A"), 2u);
  EXPECT_EQ(report.pool.k(), 7u);
}

TEST(BuildPool, FailedQuestionsSkipped) {
  const auto prompts = default_prompts();
  FnBackend backend([](const auto& m) -> std::string {
    if (m.back().content.find("bad") != std::string::npos)
      throw backends::BackendError(backends::BackendError::Kind::kRetriesExhausted, 503, "down");
    if (m.back().content.find("responsibilities") != std::string::npos) return "duty";
    return "A\nB\nC";
  });
  const auto report = build_pool({"bad", "good"}, backend, prompts, 2);
  EXPECT_EQ(report.questions_ok, 1u);
  EXPECT_EQ(report.warnings.size(), 1u);
  EXPECT_THROW(build_pool({"bad"}, backend, prompts, 2), Error);
  EXPECT_THROW(build_pool({}, backend, prompts, 2), ConfigError);
  EXPECT_THROW(build_pool({"good"}, backend, prompts, 0), ConfigError);
}

// ---- prompts ----

TEST(PromptLibrary, LoadsAndRenders) {
  const auto p = default_prompts();
  for (const char* name :
       {"pool_suggestion", "responsibility", "specialist", "moderator", "judge_mcq", "judge_open",
        "caption"})
    EXPECT_TRUE(p.has(name)) << name;
  const auto text = p.render("responsibility", {{"role", "Hematologist"}});
  EXPECT_NE(text.find("You are a Hematologist."), std::string::npos);
  EXPECT_EQ(text.find("{{"), std::string::npos);
}

TEST(PromptLibrary, MissingPlaceholderIsError) {
  PromptLibrary p;
  p.set("t", "Hello {{name}} and {{other}}");
  EXPECT_EQ(p.render("t", {{"name", "a"}, {"other", "b"}}), "Hello a and b");
  EXPECT_THROW(p.render("t", {{"name", "a"}}), Error);
  EXPECT_THROW(p.raw("absent"), Error);
  EXPECT_THROW(PromptLibrary::load("/nonexistent/medroute/prompts"), DataError);
}

// ---- answers and options ----

TEST(ExtractAnswer, LastAnswerLineWins) {
  EXPECT_EQ(extract_answer("summary\nANSWER: first\nmore\nANSWER:  Lesion-3 \n"), "Lesion-3");
  EXPECT_EQ(extract_answer("  just text  "), "just text");
  EXPECT_EQ(extract_answer("ANSWER: B. Aspirin"), "B. Aspirin");
}

TEST(RenderOptions, Lettered) {
  core::Case c{"a", "q", std::vector<std::string>{"Aspirin", "Heparin"}, "Heparin", 1, {}, {}};
  EXPECT_EQ(render_options(c), "Options:\nA. Aspirin\nB. Heparin\n");
  c.options.reset();
  c.answer_index.reset();
  EXPECT_EQ(render_options(c), "");
}

// ---- diagnose ----

TEST(Diagnose, SingleSpecialistPoolForcesStop) {
  const auto world = synthclinic::generate_world(1, 2, 10, 1);
  const core::SpecialistPool pool({world.pool()[0]});
  const auto params = random_params(3);
  const auto roles = embed_roles(pool, params.config.embed);
  synthclinic::SynthEnvironment synth(world);
  TracingEnv env(synth);
  core::Rng rng(0);
  EpisodeConfig ec;
  ec.temperature = 0.7;
  for (const auto& c : world.cases()) {
    env.log.clear();
    const auto ep = diagnose(c.base, pool, roles, params, env, ec, rng);
    EXPECT_EQ(ep.trajectory.length_l, 1u);
    ASSERT_EQ(ep.trajectory.steps.size(), 2u);
    EXPECT_TRUE(ep.trajectory.steps[1].action.is_stop());
    EXPECT_EQ(ep.trajectory.steps[1].distribution, (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(env.log, (std::vector<std::string>{"S0", "M"}));
  }
}

TEST(Diagnose, ForcedOptimalSequenceSolvesCase) {
  const auto world = synthclinic::generate_world(2, 6, 200, 1);
  const synthclinic::SynthCase* target = nullptr;
  for (const auto& c : world.cases())
    if (c.required_sequence == std::vector<std::size_t>{2}) target = &c;
  ASSERT_NE(target, nullptr);
  const auto params = forced_params(2);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  synthclinic::SynthEnvironment env(world);
  core::Rng rng(0);
  EpisodeConfig ec;
  const auto ep = diagnose(target->base, world.pool(), roles, params, env, ec, rng);
  EXPECT_EQ(ep.trajectory.final_decision, target->label);
  EXPECT_EQ(ep.trajectory.length_l, 1u);
  EXPECT_EQ(ep.rm, 1);
  EXPECT_DOUBLE_EQ(ep.trajectory.reward, 0.98);
  ASSERT_EQ(ep.trajectory.steps.size(), 2u);
  EXPECT_EQ(ep.trajectory.steps[0].action, core::Action::specialist(2));
  EXPECT_TRUE(ep.trajectory.steps[1].action.is_stop());
  EXPECT_EQ(ep.trajectory.steps[0].diagnosis, "FINDING: " + target->clue_tokens[0]);
}

TEST(Diagnose, GreedyRunsAreByteIdentical) {
  const auto world = synthclinic::generate_world(3, 6, 30, 2);
  const auto params = random_params(5);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  synthclinic::SynthEnvironment env(world);
  EpisodeConfig ec;
  for (const auto& c : world.cases()) {
    core::Rng a(1), b(99);
    const auto x = diagnose(c.base, world.pool(), roles, params, env, ec, a);
    const auto y = diagnose(c.base, world.pool(), roles, params, env, ec, b);
    EXPECT_EQ(core::trajectory_line(x.trajectory), core::trajectory_line(y.trajectory));
  }
}

TEST(Diagnose, SampledRunsReproducibleFromSeed) {
  const auto world = synthclinic::generate_world(3, 6, 30, 2);
  const auto params = random_params(6);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  synthclinic::SynthEnvironment env(world);
  EpisodeConfig ec;
  ec.temperature = 0.7;
  for (const auto& c : world.cases()) {
    core::Rng a(42), b(42);
    EXPECT_EQ(core::trajectory_line(diagnose(c.base, world.pool(), roles, params, env, ec, a).trajectory),
              core::trajectory_line(diagnose(c.base, world.pool(), roles, params, env, ec, b).trajectory));
  }
}

TEST(Diagnose, TrajectoryInvariantsUnderSampling) {
  const auto world = synthclinic::generate_world(4, 6, 100, 3);
  synthclinic::SynthEnvironment synth(world);
  TracingEnv env(synth);
  for (router::HeadKind head : {router::HeadKind::kMlp, router::HeadKind::kCosine}) {
    const auto params = random_params(7, head);
    const auto roles = embed_roles(world.pool(), params.config.embed);
    for (std::size_t max_steps : {1u, 3u, 5u, 8u}) {
      EpisodeConfig ec;
      ec.temperature = 1.5;
      ec.max_steps = max_steps;
      core::Rng rng(max_steps);
      for (const auto& c : world.cases()) {
        env.log.clear();
        const auto ep = diagnose(c.base, world.pool(), roles, params, env, ec, rng);
        const auto& t = ep.trajectory;
        std::set<std::size_t> seen;
        std::size_t stops = 0;
        for (std::size_t s = 0; s < t.steps.size(); ++s) {
          const auto& st = t.steps[s];
          EXPECT_EQ(st.step, s + 1);
          double total = 0.0;
          for (double p : st.distribution) total += p;
          EXPECT_NEAR(total, 1.0, 1e-6);
          const auto idx = router::layout_index(st.action, world.k());
          EXPECT_NEAR(st.log_prob, std::log(st.distribution[idx]), 1e-9);
          if (st.action.is_stop()) {
            ++stops;
            EXPECT_EQ(s + 1, t.steps.size());
          } else {
            EXPECT_TRUE(seen.insert(st.action.index()).second);
            EXPECT_TRUE(st.diagnosis.has_value());
          }
        }
        EXPECT_LE(stops, 1u);
        EXPECT_EQ(t.length_l, t.recompute_length());
        EXPECT_GE(t.length_l, 1u);
        EXPECT_LE(t.length_l, std::min(world.k(), max_steps));
        ASSERT_FALSE(env.log.empty());
        EXPECT_EQ(env.log.back(), "M");
        EXPECT_EQ(std::count(env.log.begin(), env.log.end(), "M"), 1);
        EXPECT_EQ(env.log.size(), t.length_l + 1);
      }
    }
  }
}

class ThrowingEnv : public Environment {
 public:
  std::string specialist_call(const core::Case&, std::size_t, const core::Specialist&,
                              const core::DiagnosticRecord&) override {
    throw backends::BackendError(backends::BackendError::Kind::kRetriesExhausted, 503, "down");
  }
  std::string moderator_call(const core::Case&, const core::DiagnosticRecord&) override {
    return "x";
  }
  int reward(const core::Case&, std::string_view) override { return 0; }
};

TEST(Diagnose, EnvironmentFailureCarriesTrajectory) {
  const auto world = synthclinic::generate_world(1, 4, 3, 1);
  const auto params = random_params(8);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  ThrowingEnv env;
  core::Rng rng(0);
  try {
    diagnose(world.cases()[0].base, world.pool(), roles, params, env, {}, rng);
    FAIL();
  } catch (const EpisodeFailure& e) {
    ASSERT_TRUE(e.trajectory().failure.has_value());
    EXPECT_NE(e.trajectory().failure->find("down"), std::string::npos);
    EXPECT_EQ(e.trajectory().steps.size(), 1u);
  }
}

TEST(Diagnose, RejectsBadConfig) {
  const auto world = synthclinic::generate_world(1, 4, 3, 1);
  const auto params = random_params(8);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  synthclinic::SynthEnvironment env(world);
  core::Rng rng(0);
  EpisodeConfig ec;
  ec.max_steps = 0;
  EXPECT_THROW(diagnose(world.cases()[0].base, world.pool(), roles, params, env, ec, rng),
               ConfigError);
  EXPECT_THROW(diagnose(world.cases()[0].base, world.pool(), {}, params, env, {}, rng),
               ConfigError);
}

// ---- logging ----

TEST(LogTrajectory, OneLineRoundTrip) {
  TempDir dir;
  const auto world = synthclinic::generate_world(1, 4, 3, 1);
  const auto params = random_params(9);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  synthclinic::SynthEnvironment env(world);
  core::Rng rng(0);
  const auto ep = diagnose(world.cases()[0].base, world.pool(), roles, params, env, {}, rng);
  log_trajectory(ep.trajectory, dir / "t.jsonl");
  const auto back = core::load_trajectories(dir / "t.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], ep.trajectory);
}

core::Trajectory numbered(std::size_t i) {
  core::Trajectory t;
  t.case_id = "case-" + std::to_string(i);
  core::TrajectoryStep s;
  s.step = 1;
  s.action = core::Action::specialist(0);
  s.distribution = {1.0, 0.0};
  s.diagnosis = std::string(200 + i, 'x');
  t.steps = {s};
  t.final_decision = "d" + std::to_string(i);
  t.length_l = 1;
  return t;
}

TEST(LogTrajectory, OrderPreserved) {
  TempDir dir;
  for (std::size_t i = 0; i < 100; ++i) log_trajectory(numbered(i), dir / "t.jsonl");
  const auto back = core::load_trajectories(dir / "t.jsonl");
  ASSERT_EQ(back.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(back[i], numbered(i));
}

TEST(LogTrajectory, ConcurrentWritersNeverInterleave) {
  TempDir dir;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < 8; ++w)
    threads.emplace_back([&, w] {
      for (std::size_t i = 0; i < 50; ++i) log_trajectory(numbered(w * 1000 + i), dir / "t.jsonl");
    });
  for (auto& t : threads) t.join();
  std::ifstream in(dir / "t.jsonl");
  std::string line;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    const auto t = nlohmann::json::parse(line).get<core::Trajectory>();
    ids.insert(t.case_id);
  }
  EXPECT_EQ(ids.size(), 400u);
}

TEST(LogTrajectory, UnwritableSinkErrors) {
  EXPECT_THROW(log_trajectory(numbered(0), "/nonexistent/medroute/t.jsonl"), Error);
}

// ---- live environment ----

TEST(LiveEnvironment, MessageAssembly) {
  const auto prompts = default_prompts();
  FnBackend backend([](const auto&) { return std::string("assessment\nANSWER: Heparin"); });
  LiveEnvironment env(backend, prompts, [](const core::Case& c, std::string_view p) {
    return p == c.answer ? 1 : 0;
  });
  core::Case c{"a", "Which anticoagulant?", std::vector<std::string>{"Aspirin", "Heparin"},
               "Heparin", 1, std::string("clot on CT"), {}};
  const core::Specialist hem{"Hematologist", "You are a Hematologist. Clotting."};
  const auto prior = core::append_diagnosis({}, {3, "Radiologist", "filling defect", 0});
  env.specialist_call(c, 0, hem, prior);
  ASSERT_EQ(backend.calls.size(), 1u);
  const auto& msgs = backend.calls[0];
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_EQ(msgs[0].role, backends::MessageRole::kSystem);
  EXPECT_EQ(msgs[0].content, hem.responsibility);
  EXPECT_NE(msgs[1].content.find("Which anticoagulant?"), std::string::npos);
  EXPECT_NE(msgs[1].content.find("B. Heparin"), std::string::npos);
  EXPECT_NE(msgs[1].content.find("clot on CT"), std::string::npos);
  EXPECT_NE(msgs[1].content.find("Radiologist: filling defect"), std::string::npos);

  const auto reply = env.moderator_call(c, prior);
  EXPECT_EQ(extract_answer(reply), "Heparin");
  EXPECT_EQ(env.reward(c, "Heparin"), 1);
}

TEST(LiveEnvironment, SameLoopAsSynthetic) {
  // A live environment over a scripted backend that mimics the synthetic clinic routes
  // identically to the synthetic environment itself.
  const auto world = synthclinic::generate_world(5, 4, 20, 2);
  const auto prompts = default_prompts();
  const synthclinic::SynthCase* current = nullptr;
  // The forced router consults one specialist on an empty record, so the scripted reply
  // only needs the empty-record answer.
  FnBackend backend([&](const auto& m) -> std::string {
    if (m.size() == 2)
      for (std::size_t i = 0; i < world.k(); ++i)
        if (m[0].content == world.pool()[i].responsibility)
          return synthclinic::specialist_respond(world, *current, i, {});
    return "ANSWER: " + std::string(synthclinic::kInconclusive);
  });
  LiveEnvironment live(backend, prompts, [&](const core::Case& c, std::string_view p) {
    return synthclinic::reward_model(p, c.answer);
  });
  synthclinic::SynthEnvironment synth(world);
  const auto params = forced_params(1);
  const auto roles = embed_roles(world.pool(), params.config.embed);
  for (const auto& c : world.cases()) {
    current = &c;
    core::Rng a(0), b(0);
    const auto x = diagnose(c.base, world.pool(), roles, params, live, {}, a);
    const auto y = diagnose(c.base, world.pool(), roles, params, synth, {}, b);
    ASSERT_EQ(x.trajectory.steps.size(), y.trajectory.steps.size());
    for (std::size_t s = 0; s < x.trajectory.steps.size(); ++s) {
      EXPECT_EQ(x.trajectory.steps[s].action, y.trajectory.steps[s].action);
      EXPECT_EQ(x.trajectory.steps[s].distribution, y.trajectory.steps[s].distribution);
      EXPECT_EQ(x.trajectory.steps[s].diagnosis, y.trajectory.steps[s].diagnosis);
    }
  }
}

}  // namespace
}  // namespace medroute::orchestrator
