#include <cmath>

#include "medroute/core/random.hpp"
#include "medroute/rl/rl.hpp"

namespace medroute::rl {

namespace {

numerics::Tensor random_unit(std::size_t dim, core::Rng& rng) {
  numerics::Tensor t({dim});
  double norm = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    t[i] = static_cast<float>(2.0 * core::uniform01(rng) - 1.0);
    norm += static_cast<double>(t[i]) * t[i];
  }
  for (std::size_t i = 0; i < dim; ++i) t[i] = static_cast<float>(t[i] / std::sqrt(norm));
  return t;
}

}  // namespace

numerics::GradcheckReport policy_gradcheck(const PolicyGradcheckOptions& o) {
  router::RouterConfig cfg;
  cfg.embed.dim = o.dim;
  cfg.model_dim = o.dim;
  cfg.heads = 4;
  cfg.blocks = 2;
  cfg.block_hidden = 2 * o.dim;
  cfg.head_hidden = o.dim;
  cfg.k_max = o.k;
  cfg.head = o.head;
  cfg.validate();
  if (o.k < 2) throw ConfigError("gradcheck needs k >= 2");

  auto base = router::BasicRouterParams<double>::init(cfg, o.seed);
  core::Rng rng(core::derive_seed(o.seed, {0x6772616463ULL}));
  // Move off the initial point: zero output layers would hide every upstream gradient.
  for (auto* t : base.tensors())
    for (auto& v : t->values()) v += 0.2 * (core::uniform01(rng) - 0.5);

  std::vector<numerics::Tensor> roles;
  for (std::size_t i = 0; i < o.k; ++i) roles.push_back(random_unit(o.dim, rng));

  // Two episodes: [1, k-1, STOP] and [0, STOP], exercising masking and history input.
  std::vector<orchestrator::EpisodeReplay> replays(2);
  const std::vector<std::vector<std::size_t>> paths{{1, o.k - 1, o.k}, {0, o.k}};
  for (std::size_t e = 0; e < 2; ++e) {
    auto& r = replays[e];
    r.task = random_unit(o.dim, rng);
    r.roles = roles;
    r.inv_temperature = 1.0 / 0.7;
    std::vector<std::size_t> consulted;
    for (std::size_t s = 0; s < paths[e].size(); ++s) {
      orchestrator::ReplayStep step;
      step.history = s == 0 ? numerics::Tensor({o.dim}) : random_unit(o.dim, rng);
      step.consulted = consulted;
      step.step = s + 1;
      step.index = paths[e][s];
      if (step.index < o.k) consulted.push_back(step.index);
      r.steps.push_back(std::move(step));
    }
  }
  const std::vector<const orchestrator::EpisodeReplay*> ptrs{&replays[0], &replays[1]};
  const std::vector<double> advantages{1.0, -1.0};

  const numerics::LossFunction f = [&](std::span<const numerics::DTensor> values,
                                       std::vector<numerics::DTensor>* grads) {
    auto p = base;
    const auto slots = p.tensors();
    for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = values[i];
    const double loss = group_loss<double>(p, ptrs, advantages, grads);
    if (grads && o.corrupt_backward)
      for (auto& g : *grads)
        for (auto& v : g.values()) v *= 1.05;
    return loss;
  };

  std::vector<numerics::DTensor> init;
  for (const auto* t : base.tensors()) init.push_back(*t);
  const auto names = base.names();
  return numerics::gradcheck(f, std::move(init), names, o.check);
}

}  // namespace medroute::rl
