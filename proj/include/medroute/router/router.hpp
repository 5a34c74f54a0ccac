#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medroute/core/random.hpp"
#include "medroute/core/types.hpp"
#include "medroute/embed/embed.hpp"
#include "medroute/numerics/ops.hpp"
#include "medroute/numerics/tape.hpp"

namespace medroute::router {

enum class HeadKind { kMlp, kCosine };

std::string_view head_name(HeadKind head);
HeadKind parse_head(std::string_view name);

struct RouterConfig {
  embed::EmbedConfig embed;        // embed.dim is the router's input width
  std::size_t model_dim = 64;      // d
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t block_hidden = 256;  // transformer feed-forward width
  std::size_t head_hidden = 128;   // routing MLP width
  std::size_t k_max = 8;
  HeadKind head = HeadKind::kMlp;

  void validate() const;
  friend bool operator==(const RouterConfig&, const RouterConfig&) = default;
};

/// Token type ids. Role tokens share one type and carry no position signal, so the
/// router treats the pool as an unordered set.
enum TokenType : std::size_t { kTaskToken = 0, kRoleToken, kHistoryToken, kSvToken, kShvToken };
inline constexpr std::size_t kTokenTypes = 5;

/// Minimum effective temperature of the cosine head.
inline constexpr double kMinCosineTemperature = 0.01;

template <typename T>
struct BasicRouterParams {
  using TensorT = numerics::BasicTensor<T>;

  RouterConfig config;
  TensorT input_proj;       // [embed_dim, d]
  TensorT sv_proj;          // [d, d]
  TensorT shv_proj;         // [d, d]
  TensorT type_embeddings;  // [5, d]
  std::vector<numerics::BasicBlockWeights<T>> blocks;
  TensorT head_w1;          // [d, head_hidden]
  TensorT head_b1;          // [head_hidden]
  TensorT head_w2;          // [head_hidden, k_max + 1]; last column scores STOP
  TensorT head_b2;          // [k_max + 1]
  TensorT cosine_log_temp;  // [1], log of the cosine head temperature
  TensorT stop_bias;        // [1], STOP logit of the cosine head

  /// Seeded Xavier-uniform initialization.
  static BasicRouterParams init(const RouterConfig& config, std::uint64_t seed);

  /// Visits every tensor in a fixed order with a stable dotted name.
  template <typename F>
  void for_each(F&& f);
  template <typename F>
  void for_each(F&& f) const;

  std::vector<TensorT*> tensors();
  std::vector<const TensorT*> tensors() const;
  std::vector<std::string> names() const;

  /// Expected shape of every tensor for `config`, in for_each order.
  static std::vector<numerics::Shape> expected_shapes(const RouterConfig& config);

  template <typename U>
  BasicRouterParams<U> cast() const;

  friend bool operator==(const BasicRouterParams&, const BasicRouterParams&) = default;
};

using RouterParams = BasicRouterParams<float>;

/// Tape with every router tensor registered as a trainable slot.
template <typename T>
numerics::BasicTape<T> make_tape(const BasicRouterParams<T>& params);

/// Embeddings the router consumes at one routing step.
struct RoutingContext {
  const numerics::Tensor* task = nullptr;
  std::span<const numerics::Tensor> roles;
  const numerics::Tensor* history = nullptr;
  std::span<const std::size_t> consulted;
  std::size_t step = 1;  // 1-based
};

struct RouterInput {
  numerics::Var tokens;      // [k + 4, d]: task, roles..., history, sv, shv
  numerics::Var projected;   // [k + 2, d]: input_proj rows before type embeddings
  std::size_t k = 0;         // role tokens occupy rows [1, k]
  std::vector<bool> mask;    // [k + 1]; true = selectable, index k = STOP
  std::vector<std::size_t> token_types;
};

/// Builds the routing token sequence and the action mask. STOP is unavailable at step 1
/// and the only choice once every specialist has been consulted.
template <typename T>
RouterInput assemble_input(numerics::BasicTape<T>& tape, const BasicRouterParams<T>& params,
                           const RoutingContext& ctx);

/// Mask alone, for callers that do not need the tokens.
std::vector<bool> action_mask(std::size_t k, std::span<const std::size_t> consulted,
                              std::size_t step);

struct RouterOutput {
  numerics::Var logits;  // [k + 1]
  numerics::Var pooled;  // [d]
  std::vector<double> logit_values;
  std::vector<double> dist;  // softmax of logits under the mask; masked entries are 0
  std::vector<bool> mask;
};

template <typename T>
RouterOutput forward_mlp(numerics::BasicTape<T>& tape, const BasicRouterParams<T>& params,
                         const RouterInput& input);
template <typename T>
RouterOutput forward_cosine(numerics::BasicTape<T>& tape, const BasicRouterParams<T>& params,
                            const RouterInput& input);
template <typename T>
RouterOutput forward(numerics::BasicTape<T>& tape, const BasicRouterParams<T>& params,
                     const RouterInput& input, HeadKind head);

struct SampledAction {
  core::Action action = core::Action::stop();
  std::size_t index = 0;          // position in the [k + 1] layout
  double log_prob = 0.0;          // under `distribution`
  std::vector<double> distribution;  // the distribution the action was drawn from
};

/// temperature > 0 samples from softmax(logits / temperature) under the mask;
/// temperature == 0 takes the argmax of out.dist with lowest-index tie-break.
SampledAction sample_action(const RouterOutput& out, double temperature, core::Rng& rng);

/// Index in the [k + 1] layout for an action.
inline std::size_t layout_index(core::Action a, std::size_t k) { return a.is_stop() ? k : a.index(); }

template <typename T>
template <typename F>
void BasicRouterParams<T>::for_each(F&& f) {
  f(std::string("input_proj"), input_proj);
  f(std::string("sv_proj"), sv_proj);
  f(std::string("shv_proj"), shv_proj);
  f(std::string("type_embeddings"), type_embeddings);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    blocks[b].for_each([&](const char* name, TensorT& t) { f(prefix + name, t); });
  }
  f(std::string("head_w1"), head_w1);
  f(std::string("head_b1"), head_b1);
  f(std::string("head_w2"), head_w2);
  f(std::string("head_b2"), head_b2);
  f(std::string("cosine_log_temp"), cosine_log_temp);
  f(std::string("stop_bias"), stop_bias);
}

template <typename T>
template <typename F>
void BasicRouterParams<T>::for_each(F&& f) const {
  const_cast<BasicRouterParams*>(this)->for_each(
      [&](const std::string& name, TensorT& t) { f(name, static_cast<const TensorT&>(t)); });
}

template <typename T>
template <typename U>
BasicRouterParams<U> BasicRouterParams<T>::cast() const {
  BasicRouterParams<U> o;
  o.config = config;
  o.input_proj = input_proj.template cast<U>();
  o.sv_proj = sv_proj.template cast<U>();
  o.shv_proj = shv_proj.template cast<U>();
  o.type_embeddings = type_embeddings.template cast<U>();
  for (const auto& b : blocks) o.blocks.push_back(b.template cast<U>());
  o.head_w1 = head_w1.template cast<U>();
  o.head_b1 = head_b1.template cast<U>();
  o.head_w2 = head_w2.template cast<U>();
  o.head_b2 = head_b2.template cast<U>();
  o.cosine_log_temp = cosine_log_temp.template cast<U>();
  o.stop_bias = stop_bias.template cast<U>();
  return o;
}

extern template struct BasicRouterParams<float>;
extern template struct BasicRouterParams<double>;

}  // namespace medroute::router
