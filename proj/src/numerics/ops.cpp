#include "medroute/numerics/ops.hpp"

#include <algorithm>
#include <cmath>

namespace medroute::numerics {

Tensor softmax_row(const Tensor& logits) {
  std::vector<bool> mask(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    mask[i] = !(std::isinf(logits[i]) && logits[i] < 0.0f);
  const std::vector<double> wide(logits.values().begin(), logits.values().end());
  const auto p = masked_softmax(wide, mask);
  return Tensor(logits.shape(), std::vector<float>(p.begin(), p.end()));
}

std::vector<double> masked_softmax(std::span<const double> logits, const std::vector<bool>& mask,
                                   double inv_temperature) {
  if (mask.size() != logits.size()) throw ShapeError("masked_softmax: mask length mismatch");
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    any = true;
    mx = std::max(mx, inv_temperature * logits[i]);
  }
  if (!any) throw Error("empty action set");
  std::vector<double> p(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    p[i] = std::exp(inv_temperature * logits[i] - mx);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

template <typename T>
void xavier_uniform(BasicTensor<T>& t, std::size_t fan_in, std::size_t fan_out, core::Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<T>((2.0 * core::uniform01(rng) - 1.0) * a);
}

template <typename T>
BasicBlockWeights<T> init_block(std::size_t d, std::size_t hidden, core::Rng& rng) {
  using TT = BasicTensor<T>;
  BasicBlockWeights<T> w;
  w.ln1_gain = TT({d});
  w.ln1_gain.fill(T(1));
  w.ln1_bias = TT({d});
  w.ln2_gain = TT({d});
  w.ln2_gain.fill(T(1));
  w.ln2_bias = TT({d});
  for (auto* m : {&w.wq, &w.wk, &w.wv, &w.wo}) {
    *m = TT({d, d});
    xavier_uniform(*m, d, d, rng);
  }
  w.bq = TT({d});
  w.bv = TT({d});
  w.bo = TT({d});
  w.w1 = TT({d, hidden});
  xavier_uniform(w.w1, d, hidden, rng);
  w.b1 = TT({hidden});
  w.w2 = TT({hidden, d});
  xavier_uniform(w.w2, hidden, d, rng);
  w.b2 = TT({d});
  return w;
}

template <typename T>
Var block_forward(BasicTape<T>& tape, const BasicBlockWeights<T>& w, Var x, std::size_t heads) {
  const auto& X = tape.value(x);
  if (X.rank() != 2 || X.cols() != w.wq.shape()[0])
    throw ShapeError("block_forward: input " + shape_string(X.shape()) +
                     " does not match model dim " + std::to_string(w.wq.shape()[0]));
  auto P = [&](const BasicTensor<T>& t) { return tape.param(t); };
  auto linear = [&](Var in, const BasicTensor<T>& wt, const BasicTensor<T>& b) {
    return tape.add_row(tape.matmul(in, P(wt)), P(b));
  };

  const Var a = tape.layernorm(x, P(w.ln1_gain), P(w.ln1_bias));
  const Var att = tape.attention(linear(a, w.wq, w.bq), tape.matmul(a, P(w.wk)),
                                 linear(a, w.wv, w.bv), heads);
  const Var y = tape.add(x, linear(att, w.wo, w.bo));
  const Var m = tape.layernorm(y, P(w.ln2_gain), P(w.ln2_bias));
  const Var f = linear(tape.relu(linear(m, w.w1, w.b1)), w.w2, w.b2);
  return tape.add(y, f);
}

Tensor block_forward(const BlockWeights& w, const Tensor& x, std::size_t heads) {
  Tape tape;
  const Var out = block_forward(tape, w, tape.constant(x), heads);
  return tape.value(out);
}

template void xavier_uniform(BasicTensor<float>&, std::size_t, std::size_t, core::Rng&);
template void xavier_uniform(BasicTensor<double>&, std::size_t, std::size_t, core::Rng&);
template BasicBlockWeights<float> init_block(std::size_t, std::size_t, core::Rng&);
template BasicBlockWeights<double> init_block(std::size_t, std::size_t, core::Rng&);
template Var block_forward(BasicTape<float>&, const BasicBlockWeights<float>&, Var, std::size_t);
template Var block_forward(BasicTape<double>&, const BasicBlockWeights<double>&, Var, std::size_t);

}  // namespace medroute::numerics
