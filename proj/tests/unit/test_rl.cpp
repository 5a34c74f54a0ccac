#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "medroute/core/random.hpp"
#include "medroute/rl/rl.hpp"
#include "medroute/synthclinic/world.hpp"

namespace medroute::rl {
namespace {

TEST(ComputeReward, Examples) {
  EXPECT_EQ(compute_reward(0, 3, 0.98), 0.0);
  EXPECT_EQ(compute_reward(1, 0, 0.98), 1.0);
  EXPECT_NEAR(compute_reward(1, 3, 0.98), 0.941192, 1e-12);
  EXPECT_EQ(compute_reward(1, 4, 1.0), 1.0);
  EXPECT_THROW(compute_reward(2, 1, 0.98), Error);
}

TEST(GroupedAdvantage, Examples) {
  const std::vector<double> a = grouped_advantage(std::vector<double>{1.0, 0.0}, 1e-8);
  EXPECT_NEAR(a[0], 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(a[1], -0.5 / (0.5 + 1e-8), 1e-15);
  for (double v : grouped_advantage(std::vector<double>{1, 1, 1, 1}, 1e-8)) EXPECT_EQ(v, 0.0);
  const auto b = grouped_advantage(std::vector<double>{1, 0, 0, 1}, 1e-8);
  EXPECT_NEAR(b[0], 1.0, 1e-6);
  EXPECT_NEAR(b[1], -1.0, 1e-6);
  EXPECT_NEAR(b[2], -1.0, 1e-6);
  EXPECT_NEAR(b[3], 1.0, 1e-6);
  EXPECT_THROW(grouped_advantage(std::vector<double>{1.0}, 1e-8), Error);
}

TEST(GroupedAdvantage, ZeroMeanUnitStdProperty) {
  core::Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + core::uniform_index(rng, 15);
    std::vector<double> r(n);
    for (auto& v : r) v = core::uniform01(rng);
    const auto a = grouped_advantage(r, 0.0);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : a) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(n)), 1.0, 1e-9);
  }
}

TEST(PolicyLoss, Examples) {
  const std::vector<double> lp{std::log(0.5), std::log(0.25)};
  EXPECT_NEAR(policy_loss(lp, std::vector<double>{1.0, -1.0}), -0.3466, 1e-4);
  EXPECT_EQ(policy_loss(lp, std::vector<double>{0.0, 0.0}), 0.0);
  EXPECT_THROW(policy_loss(lp, std::vector<double>{1.0}), Error);
}

TEST(PolicyGradcheck, BothHeadsPass) {
  for (auto head : {router::HeadKind::kMlp, router::HeadKind::kCosine}) {
    PolicyGradcheckOptions o;
    o.head = head;
    o.seed = 5;
    const auto r = policy_gradcheck(o);
    EXPECT_LE(r.max_rel_error, 1e-4) << router::head_name(head);
    EXPECT_GT(r.coordinates, 0u);
  }
}

TEST(PolicyGradcheck, CorruptedBackwardFails) {
  PolicyGradcheckOptions o;
  o.corrupt_backward = true;
  EXPECT_GT(policy_gradcheck(o).max_rel_error, 1e-4);
}

router::RouterConfig small_config() {
  router::RouterConfig c;
  c.embed.dim = 32;
  c.model_dim = 32;
  c.block_hidden = 64;
  c.head_hidden = 32;
  c.k_max = 6;
  return c;
}

router::RouterParams forced_params(std::size_t first) {
  auto p = router::RouterParams::init(small_config(), 1);
  p.head_b2[first] = 10.0f;
  p.head_b2[p.config.k_max] = 20.0f;
  return p;
}

struct Fixture {
  synthclinic::SynthWorld world = synthclinic::generate_world(4, 6, 60, 1);
  synthclinic::SynthEnvironment env{world};
  embed::EmbedConfig embed_cfg = small_config().embed;
  std::vector<numerics::Tensor> roles = orchestrator::embed_roles(world.pool(), embed_cfg);
  const synthclinic::SynthCase& first() const { return world.cases().front(); }
};

TrainConfig sampling_config() {
  TrainConfig cfg;
  cfg.group_size = 8;
  cfg.temperature = 0.1;
  cfg.max_steps = 3;
  return cfg;
}

TEST(SampleTraceGroup, EarlyCorrectPadsToTwoTraces) {
  Fixture f;
  const auto& c = f.first();
  const auto p = forced_params(c.required_sequence[0]);
  const auto g = sample_trace_group(c.base, f.world.pool(), f.roles, p, f.env, sampling_config(), 9);
  ASSERT_EQ(g.traces.size(), 2u);
  EXPECT_DOUBLE_EQ(g.rewards[0], 0.98);
  EXPECT_DOUBLE_EQ(g.rewards[1], 0.98);
  EXPECT_EQ(g.advantages, (std::vector<double>{0.0, 0.0}));
}

TEST(SampleTraceGroup, NoEarlyStopRunsFullGroup) {
  Fixture f;
  const auto& c = f.first();
  auto cfg = sampling_config();
  cfg.early_stop_on_correct = false;
  const auto g = sample_trace_group(c.base, f.world.pool(), f.roles,
                                    forced_params(c.required_sequence[0]), f.env, cfg, 9);
  EXPECT_EQ(g.traces.size(), 8u);
}

TEST(SampleTraceGroup, AllWrongGivesZeroAdvantages) {
  Fixture f;
  const auto& c = f.first();
  const std::size_t wrong = (c.required_sequence[0] + 1) % f.world.k();
  const auto g = sample_trace_group(c.base, f.world.pool(), f.roles, forced_params(wrong), f.env,
                                    sampling_config(), 9);
  ASSERT_EQ(g.traces.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(g.rewards[i], 0.0);
    EXPECT_EQ(g.advantages[i], 0.0);
  }
}

router::RouterParams noisy_params(std::uint64_t seed) {
  auto p = router::RouterParams::init(small_config(), seed);
  core::Rng rng(seed + 100);
  for (auto* t : p.tensors())
    for (auto& v : t->values()) v += static_cast<float>(core::uniform01(rng) - 0.5);
  return p;
}

TEST(SampleTraceGroup, ReproducibleForSeed) {
  Fixture f;
  const auto p = noisy_params(2);
  auto cfg = sampling_config();
  cfg.temperature = 1.0;
  const auto a = sample_trace_group(f.first().base, f.world.pool(), f.roles, p, f.env, cfg, 31);
  const auto b = sample_trace_group(f.first().base, f.world.pool(), f.roles, p, f.env, cfg, 31);
  ASSERT_EQ(a.traces.size(), b.traces.size());
  for (std::size_t i = 0; i < a.traces.size(); ++i)
    EXPECT_EQ(a.traces[i].trajectory, b.traces[i].trajectory);
  EXPECT_EQ(a.advantages, b.advantages);
}

TEST(ReplayLogProb, MatchesSampledLogProb) {
  Fixture f;
  const auto p = noisy_params(3);
  auto cfg = sampling_config();
  cfg.temperature = 0.8;
  cfg.early_stop_on_correct = false;
  for (std::size_t n = 0; n < 5; ++n) {
    const auto g = sample_trace_group(f.world.cases()[n].base, f.world.pool(), f.roles, p, f.env,
                                      cfg, 40 + n);
    for (const auto& ep : g.traces) {
      double sampled = 0.0;
      for (std::size_t s = 0; s < ep.replay.steps.size(); ++s)
        sampled += ep.trajectory.steps[s].log_prob;
      auto tape = router::make_tape(p);
      const auto lp = replay_log_prob(tape, p, ep.replay);
      EXPECT_NEAR(tape.value(lp)[0], sampled, 1e-4);
    }
  }
}

TEST(GroupLoss, ZeroAdvantagesGiveZeroGradient) {
  Fixture f;
  const auto p = noisy_params(4);
  auto cfg = sampling_config();
  cfg.temperature = 1.0;
  cfg.early_stop_on_correct = false;
  const auto g = sample_trace_group(f.first().base, f.world.pool(), f.roles, p, f.env, cfg, 50);
  std::vector<const orchestrator::EpisodeReplay*> replays;
  for (const auto& ep : g.traces) replays.push_back(&ep.replay);
  std::vector<double> zeros(replays.size(), 0.0);
  std::vector<numerics::Tensor> grads;
  EXPECT_EQ(group_loss<float>(p, replays, zeros, &grads), 0.0);
  for (const auto& t : grads)
    for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TrainConfig tiny_train(double lr) {
  TrainConfig cfg;
  cfg.lr = lr;
  cfg.epochs = 2;
  cfg.samples_per_epoch = 6;
  cfg.group_size = 4;
  cfg.max_steps = 3;
  cfg.seed = 12;
  return cfg;
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  Fixture f;
  auto p = noisy_params(5);
  const auto before = p;
  const auto cases = f.world.plain_cases();
  auto cfg = tiny_train(0.0);
  cfg.weight_decay = 0.0;
  const auto stats = train(cases, f.world.pool(), p, f.env, cfg);
  ASSERT_EQ(stats.size(), 2u);
  const auto a = before.tensors();
  const auto b = p.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->values(), b[i]->values());
}

TEST(Train, DeterministicForSeed) {
  Fixture f;
  const auto cases = f.world.plain_cases();
  auto p1 = noisy_params(6), p2 = noisy_params(6);
  const auto s1 = train(cases, f.world.pool(), p1, f.env, tiny_train(1e-3));
  const auto s2 = train(cases, f.world.pool(), p2, f.env, tiny_train(1e-3));
  ASSERT_EQ(s1.size(), s2.size());
  for (std::size_t e = 0; e < s1.size(); ++e)
    EXPECT_EQ(stats_to_json(s1[e]), stats_to_json(s2[e]));
  const auto a = p1.tensors();
  const auto b = p2.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->values(), b[i]->values());
}

TEST(Train, RejectsBadConfig) {
  Fixture f;
  const auto cases = f.world.plain_cases();
  auto p = noisy_params(7);
  auto cfg = tiny_train(1e-3);
  cfg.group_size = 1;
  EXPECT_THROW(train(cases, f.world.pool(), p, f.env, cfg), ConfigError);
  cfg = tiny_train(1e-3);
  cfg.gamma = 0.0;
  EXPECT_THROW(train(cases, f.world.pool(), p, f.env, cfg), ConfigError);
  EXPECT_THROW(train({}, f.world.pool(), p, f.env, tiny_train(1e-3)), ConfigError);
}

TEST(EvaluateGreedy, ForcedRouterSolvesItsSpecialty) {
  Fixture f;
  const auto& c = f.first();
  const std::vector<core::Case> one{c.base};
  const auto r = evaluate_greedy(one, f.world.pool(), forced_params(c.required_sequence[0]), f.env, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.mean_length, 1.0);
  EXPECT_EQ(r.n, 1u);
}

}  // namespace
}  // namespace medroute::rl
