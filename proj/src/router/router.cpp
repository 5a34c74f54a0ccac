#include "medroute/router/router.hpp"

#include <algorithm>
#include <cmath>

#include "medroute/core/error.hpp"

namespace medroute::router {

using numerics::BasicTape;
using numerics::BasicTensor;
using numerics::Shape;
using numerics::Var;

std::string_view head_name(HeadKind head) { return head == HeadKind::kMlp ? "mlp" : "cosine"; }

HeadKind parse_head(std::string_view name) {
  if (name == "mlp") return HeadKind::kMlp;
  if (name == "cosine") return HeadKind::kCosine;
  throw ConfigError("unknown router head \"" + std::string(name) + "\" (expected mlp or cosine)");
}

void RouterConfig::validate() const {
  embed.validate();
  if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
    throw ConfigError("model_dim must be a positive multiple of heads");
  if (blocks == 0 || block_hidden == 0 || head_hidden == 0)
    throw ConfigError("router widths and block count must be positive");
  if (k_max == 0) throw ConfigError("k_max must be at least 1");
}

template <typename T>
std::vector<Shape> BasicRouterParams<T>::expected_shapes(const RouterConfig& c) {
  const std::size_t d = c.model_dim;
  std::vector<Shape> shapes{{c.embed.dim, d}, {d, d}, {d, d}, {kTokenTypes, d}};
  for (std::size_t b = 0; b < c.blocks; ++b) {
    const std::vector<Shape> block{{d},    {d},    {d, d}, {d},   {d, d},
                                   {d, d}, {d},    {d, d}, {d},   {d},
                                   {d},    {d, c.block_hidden},   {c.block_hidden},
                                   {c.block_hidden, d},           {d}};
    shapes.insert(shapes.end(), block.begin(), block.end());
  }
  const std::vector<Shape> head{{d, c.head_hidden}, {c.head_hidden}, {c.head_hidden, c.k_max + 1},
                                {c.k_max + 1},      {1},             {1}};
  shapes.insert(shapes.end(), head.begin(), head.end());
  return shapes;
}

template <typename T>
BasicRouterParams<T> BasicRouterParams<T>::init(const RouterConfig& config, std::uint64_t seed) {
  config.validate();
  core::Rng rng(core::derive_seed(seed, {0x726F75746572ULL}));
  const std::size_t d = config.model_dim, e = config.embed.dim;
  BasicRouterParams p;
  p.config = config;
  p.input_proj = TensorT({e, d});
  numerics::xavier_uniform(p.input_proj, e, d, rng);
  p.sv_proj = TensorT({d, d});
  numerics::xavier_uniform(p.sv_proj, d, d, rng);
  p.shv_proj = TensorT({d, d});
  numerics::xavier_uniform(p.shv_proj, d, d, rng);
  // Small type embeddings keep content dominant in the initial tokens.
  p.type_embeddings = TensorT({kTokenTypes, d});
  numerics::xavier_uniform(p.type_embeddings, kTokenTypes, d, rng);
  for (auto& v : p.type_embeddings.values()) v *= T(0.1);
  for (std::size_t b = 0; b < config.blocks; ++b)
    p.blocks.push_back(numerics::init_block<T>(d, config.block_hidden, rng));
  p.head_w1 = TensorT({d, config.head_hidden});
  numerics::xavier_uniform(p.head_w1, d, config.head_hidden, rng);
  p.head_b1 = TensorT({config.head_hidden});
  // Zero output layer: the untrained policy is uniform over valid actions.
  p.head_w2 = TensorT({config.head_hidden, config.k_max + 1});
  p.head_b2 = TensorT({config.k_max + 1});
  p.cosine_log_temp = TensorT::scalar(T(0));  // temperature 1
  p.stop_bias = TensorT::scalar(T(0));
  return p;
}

template <typename T>
std::vector<BasicTensor<T>*> BasicRouterParams<T>::tensors() {
  std::vector<TensorT*> out;
  for_each([&](const std::string&, TensorT& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<const BasicTensor<T>*> BasicRouterParams<T>::tensors() const {
  std::vector<const TensorT*> out;
  for_each([&](const std::string&, const TensorT& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<std::string> BasicRouterParams<T>::names() const {
  std::vector<std::string> out;
  for_each([&](const std::string& name, const TensorT&) { out.push_back(name); });
  return out;
}

template <typename T>
BasicTape<T> make_tape(const BasicRouterParams<T>& params) {
  return BasicTape<T>(params.tensors());
}

std::vector<bool> action_mask(std::size_t k, std::span<const std::size_t> consulted,
                              std::size_t step) {
  std::vector<bool> mask(k + 1, true);
  for (auto i : consulted) {
    if (i >= k) throw Error("consulted index " + std::to_string(i) + " outside pool of " +
                            std::to_string(k));
    mask[i] = false;
  }
  const bool exhausted = std::none_of(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(k),
                                      [](bool b) { return b; });
  mask[k] = step > 1 || exhausted;
  return mask;
}

template <typename T>
RouterInput assemble_input(BasicTape<T>& tape, const BasicRouterParams<T>& params,
                           const RoutingContext& ctx) {
  const auto& cfg = params.config;
  const std::size_t k = ctx.roles.size();
  if (k == 0) throw Error("routing needs at least one specialist");
  if (k > cfg.k_max)
    throw ConfigError("pool of " + std::to_string(k) + " specialists exceeds router k_max " +
                      std::to_string(cfg.k_max));
  if (!ctx.task || !ctx.history) throw Error("routing context is missing embeddings");
  const std::size_t e = cfg.embed.dim;

  BasicTensor<T> emb({k + 2, e});
  auto put_row = [&](std::size_t r, const numerics::Tensor& v) {
    if (v.size() != e) throw numerics::ShapeError("embedding width does not match router");
    std::copy(v.values().begin(), v.values().end(), emb.data() + r * e);
  };
  put_row(0, *ctx.task);
  for (std::size_t i = 0; i < k; ++i) put_row(1 + i, ctx.roles[i]);
  put_row(k + 1, *ctx.history);

  const Var projected = tape.matmul(tape.constant(std::move(emb)), tape.param(params.input_proj));
  const Var task = tape.row(projected, 0);
  const Var sv = tape.matmul(task, tape.param(params.sv_proj));
  const Var shv = tape.matmul(task, tape.param(params.shv_proj));
  const Var parts[] = {projected, sv, shv};
  const Var stacked = tape.concat_rows(parts);

  RouterInput in;
  in.k = k;
  in.token_types.push_back(kTaskToken);
  in.token_types.insert(in.token_types.end(), k, kRoleToken);
  in.token_types.insert(in.token_types.end(), {kHistoryToken, kSvToken, kShvToken});
  const Var types = tape.gather_rows(tape.param(params.type_embeddings), in.token_types);
  in.tokens = tape.add(stacked, types);
  in.projected = projected;
  in.mask = action_mask(k, ctx.consulted, ctx.step);
  return in;
}

namespace {

template <typename T>
Var encode(BasicTape<T>& tape, const BasicRouterParams<T>& params, Var tokens) {
  Var h = tokens;
  for (const auto& block : params.blocks)
    h = numerics::block_forward(tape, block, h, params.config.heads);
  return tape.mean_rows(h);
}

template <typename T>
void finish(const BasicTape<T>& tape, RouterOutput& out, const RouterInput& input) {
  const auto& v = tape.value(out.logits);
  out.logit_values.assign(v.values().begin(), v.values().end());
  out.mask = input.mask;
  out.dist = numerics::masked_softmax(out.logit_values, out.mask);
}

}  // namespace

template <typename T>
RouterOutput forward_mlp(BasicTape<T>& tape, const BasicRouterParams<T>& params,
                         const RouterInput& input) {
  RouterOutput out;
  out.pooled = encode(tape, params, input.tokens);
  auto P = [&](const BasicTensor<T>& t) { return tape.param(t); };
  const Var hidden =
      tape.relu(tape.add(tape.matmul(out.pooled, P(params.head_w1)), P(params.head_b1)));
  const Var scores = tape.add(tape.matmul(hidden, P(params.head_w2)), P(params.head_b2));
  std::vector<std::size_t> pick(input.k);
  for (std::size_t i = 0; i < input.k; ++i) pick[i] = i;
  pick.push_back(params.config.k_max);
  out.logits = tape.select(scores, std::move(pick));
  finish(tape, out, input);
  return out;
}

template <typename T>
RouterOutput forward_cosine(BasicTape<T>& tape, const BasicRouterParams<T>& params,
                            const RouterInput& input) {
  RouterOutput out;
  out.pooled = encode(tape, params, input.tokens);
  const Var roles = tape.slice_rows(input.projected, 1, input.k);
  const Var cos = tape.cosine_logits(out.pooled, roles, tape.param(params.cosine_log_temp),
                                     static_cast<T>(kMinCosineTemperature));
  const Var parts[] = {cos, tape.param(params.stop_bias)};
  out.logits = tape.concat(parts);
  finish(tape, out, input);
  return out;
}

template <typename T>
RouterOutput forward(BasicTape<T>& tape, const BasicRouterParams<T>& params,
                     const RouterInput& input, HeadKind head) {
  return head == HeadKind::kMlp ? forward_mlp(tape, params, input)
                                : forward_cosine(tape, params, input);
}

SampledAction sample_action(const RouterOutput& out, double temperature, core::Rng& rng) {
  const std::size_t n = out.mask.size();
  if (n == 0 || out.logit_values.size() != n) throw Error("router output is empty");
  const std::size_t k = n - 1;
  SampledAction s;
  if (temperature <= 0.0) {
    s.distribution = out.dist;
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (out.mask[i] && (best == n || s.distribution[i] > s.distribution[best])) best = i;
    s.index = best;
  } else {
    s.distribution = numerics::masked_softmax(out.logit_values, out.mask, 1.0 / temperature);
    const double u = core::uniform01(rng);
    double cumulative = 0.0;
    std::size_t last = n;
    s.index = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!out.mask[i] || s.distribution[i] <= 0.0) continue;
      last = i;
      cumulative += s.distribution[i];
      if (u < cumulative) {
        s.index = i;
        break;
      }
    }
    if (s.index == n) s.index = last;
  }
  if (s.index >= n) throw Error("empty action set");
  s.log_prob = std::log(s.distribution[s.index]);
  s.action = s.index == k ? core::Action::stop() : core::Action::specialist(s.index);
  return s;
}

template struct BasicRouterParams<float>;
template struct BasicRouterParams<double>;
template BasicTape<float> make_tape(const BasicRouterParams<float>&);
template BasicTape<double> make_tape(const BasicRouterParams<double>&);
template RouterInput assemble_input(BasicTape<float>&, const BasicRouterParams<float>&,
                                    const RoutingContext&);
template RouterInput assemble_input(BasicTape<double>&, const BasicRouterParams<double>&,
                                    const RoutingContext&);
template RouterOutput forward_mlp(BasicTape<float>&, const BasicRouterParams<float>&,
                                  const RouterInput&);
template RouterOutput forward_mlp(BasicTape<double>&, const BasicRouterParams<double>&,
                                  const RouterInput&);
template RouterOutput forward_cosine(BasicTape<float>&, const BasicRouterParams<float>&,
                                     const RouterInput&);
template RouterOutput forward_cosine(BasicTape<double>&, const BasicRouterParams<double>&,
                                     const RouterInput&);
template RouterOutput forward(BasicTape<float>&, const BasicRouterParams<float>&,
                              const RouterInput&, HeadKind);
template RouterOutput forward(BasicTape<double>&, const BasicRouterParams<double>&,
                              const RouterInput&, HeadKind);

}  // namespace medroute::router
