#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "medroute/core/random.hpp"
#include "medroute/numerics/tape.hpp"

namespace medroute::numerics {

/// Logit value marking an action as unavailable.
inline constexpr float kMasked = -std::numeric_limits<float>::infinity();

/// Numerically stable softmax. Entries equal to -inf are masked and map to exactly 0.
/// Throws Error("empty action set") when every entry is masked.
Tensor softmax_row(const Tensor& logits);

/// Same as softmax_row on the entries where `mask` is true, computed in double precision
/// after scaling by `inv_temperature`.
std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& mask,
                                   double inv_temperature = 1.0);

/// Weights of one pre-norm transformer block.
template <typename T>
struct BasicBlockWeights {
  BasicTensor<T> ln1_gain, ln1_bias;
  BasicTensor<T> wq, bq, wk, wv, bv, wo, bo;  // no key bias: softmax cancels it
  BasicTensor<T> ln2_gain, ln2_bias;
  BasicTensor<T> w1, b1, w2, b2;

  /// Fixed-order view for registration, serialization and optimizers.
  template <typename F>
  void for_each(F&& f) {
    f("ln1_gain", ln1_gain); f("ln1_bias", ln1_bias);
    f("wq", wq); f("bq", bq); f("wk", wk);
    f("wv", wv); f("bv", bv); f("wo", wo); f("bo", bo);
    f("ln2_gain", ln2_gain); f("ln2_bias", ln2_bias);
    f("w1", w1); f("b1", b1); f("w2", w2); f("b2", b2);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<BasicBlockWeights*>(this)->for_each(
        [&](const char* name, BasicTensor<T>& t) { f(name, static_cast<const BasicTensor<T>&>(t)); });
  }

  template <typename U>
  BasicBlockWeights<U> cast() const;

  friend bool operator==(const BasicBlockWeights&, const BasicBlockWeights&) = default;
};

template <typename T>
template <typename U>
BasicBlockWeights<U> BasicBlockWeights<T>::cast() const {
  BasicBlockWeights<U> o;
  o.ln1_gain = ln1_gain.template cast<U>(); o.ln1_bias = ln1_bias.template cast<U>();
  o.wq = wq.template cast<U>(); o.bq = bq.template cast<U>();
  o.wk = wk.template cast<U>();
  o.wv = wv.template cast<U>(); o.bv = bv.template cast<U>();
  o.wo = wo.template cast<U>(); o.bo = bo.template cast<U>();
  o.ln2_gain = ln2_gain.template cast<U>(); o.ln2_bias = ln2_bias.template cast<U>();
  o.w1 = w1.template cast<U>(); o.b1 = b1.template cast<U>();
  o.w2 = w2.template cast<U>(); o.b2 = b2.template cast<U>();
  return o;
}

using BlockWeights = BasicBlockWeights<float>;

/// Xavier-uniform projections, unit LayerNorm gains, zero biases.
template <typename T>
BasicBlockWeights<T> init_block(std::size_t d, std::size_t hidden, core::Rng& rng);

/// y = x + Wo·Attn(LN1(x)); z = y + W2·relu(W1·LN2(y)). Attention is bidirectional.
template <typename T>
Var block_forward(BasicTape<T>& tape, const BasicBlockWeights<T>& w, Var x, std::size_t heads);

/// Convenience wrapper running one block on a constant input.
Tensor block_forward(const BlockWeights& w, const Tensor& x, std::size_t heads);

/// Fills `t` with U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void xavier_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, core::Rng& rng);

}  // namespace medroute::numerics
