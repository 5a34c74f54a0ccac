#include "medroute/numerics/tape.hpp"

#include <algorithm>
#include <cmath>

#include "medroute/numerics/kernels.hpp"

namespace medroute::numerics {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](T x) { return std::isfinite(x); });
}

template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);

namespace {

template <typename T>
void require_same_size(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <typename T>
BasicTensor<T> like(const BasicTensor<T>& t) {
  return BasicTensor<T>(t.shape());
}

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  kernels::axpy(T(1), src.data(), dst.data(), dst.size());
}

}  // namespace

template <typename T>
BasicTape<T>::BasicTape(std::vector<const TensorT*> params)
    : params_(std::move(params)), param_vars_(params_.size()) {}

template <typename T>
Var BasicTape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const typename BasicTape<T>::Node& BasicTape<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw Error("invalid tape variable");
  return nodes_[v.id];
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::value(Var v) const {
  const Node& n = node(v);
  return n.ref ? *n.ref : n.out;
}

template <typename T>
Var BasicTape<T>::constant(TensorT value) {
  Node n;
  n.out = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var BasicTape<T>::param(const TensorT& tensor) {
  for (std::size_t s = 0; s < params_.size(); ++s) {
    if (params_[s] != &tensor) continue;
    if (param_vars_[s].valid()) return param_vars_[s];
    Node n;
    n.ref = &tensor;
    n.slot = static_cast<std::ptrdiff_t>(s);
    n.requires_grad = true;
    param_vars_[s] = push(std::move(n));
    return param_vars_[s];
  }
  Node n;
  n.ref = &tensor;
  return push(std::move(n));
}

template <typename T>
Var BasicTape<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (B.rank() != 2) throw ShapeError("matmul: right operand must be a matrix");
  const std::size_t m = A.rows(), n = A.cols(), p = B.shape()[1];
  if (n != B.shape()[0])
    throw ShapeError("matmul: inner dimensions differ " + shape_string(A.shape()) + " x " +
                     shape_string(B.shape()));
  Node nd;
  nd.op = Op::kMatmul;
  nd.inputs = {a.id, b.id};
  nd.out = TensorT(A.rank() == 1 ? Shape{p} : Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    T* out_row = nd.out.data() + i * p;
    for (std::size_t j = 0; j < n; ++j) kernels::axpy(A.at(i, j), B.data() + j * p, out_row, p);
  }
  nd.requires_grad = needs(a.id) || needs(b.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_same_size(A, B, "add");
  Node nd;
  nd.op = Op::kAdd;
  nd.inputs = {a.id, b.id};
  nd.out = A;
  add_into(nd.out, B);
  nd.requires_grad = needs(a.id) || needs(b.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_same_size(A, B, "mul");
  Node nd;
  nd.op = Op::kMul;
  nd.inputs = {a.id, b.id};
  nd.out = like(A);
  for (std::size_t i = 0; i < A.size(); ++i) nd.out[i] = A[i] * B[i];
  nd.requires_grad = needs(a.id) || needs(b.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::add_row(Var a, Var bias) {
  const auto& A = value(a);
  const auto& b = value(bias);
  if (b.size() != A.cols()) throw ShapeError("add_row: bias length does not match columns");
  Node nd;
  nd.op = Op::kAddRow;
  nd.inputs = {a.id, bias.id};
  nd.out = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    kernels::axpy(T(1), b.data(), nd.out.data() + r * A.cols(), A.cols());
  nd.requires_grad = needs(a.id) || needs(bias.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::scale(Var a, T factor) {
  Node nd;
  nd.op = Op::kScale;
  nd.inputs = {a.id};
  nd.out = value(a);
  for (auto& x : nd.out.values()) x *= factor;
  nd.s0 = factor;
  nd.requires_grad = needs(a.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::relu(Var a) {
  Node nd;
  nd.op = Op::kRelu;
  nd.inputs = {a.id};
  nd.out = value(a);
  for (auto& x : nd.out.values()) x = x > T(0) ? x : T(0);
  nd.requires_grad = needs(a.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::layernorm(Var x, Var gain, Var bias, T eps) {
  const auto& X = value(x);
  const auto& g = value(gain);
  const auto& b = value(bias);
  const std::size_t m = X.rows(), n = X.cols();
  if (g.size() != n || b.size() != n) throw ShapeError("layernorm: gain/bias length mismatch");
  Node nd;
  nd.op = Op::kLayerNorm;
  nd.inputs = {x.id, gain.id, bias.id};
  nd.out = like(X);
  // saved: normalized activations (m*n) followed by per-row inverse std (m)
  nd.saved.resize(m * n + m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = X.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double dlt = row[c] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);
    const T rstd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    nd.saved[m * n + r] = rstd;
    for (std::size_t c = 0; c < n; ++c) {
      const T xhat = static_cast<T>(row[c] - mean) * rstd;
      nd.saved[r * n + c] = xhat;
      nd.out[r * n + c] = xhat * g[c] + b[c];
    }
  }
  nd.requires_grad = needs(x.id) || needs(gain.id) || needs(bias.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::attention(Var q, Var k, Var v, std::size_t heads) {
  const auto& Q = value(q);
  const auto& K = value(k);
  const auto& V = value(v);
  if (Q.rank() != 2 || K.shape() != Q.shape() || V.shape() != Q.shape())
    throw ShapeError("attention: q, k, v must share one [T, d] shape");
  const std::size_t tokens = Q.rows(), d = Q.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: model dim not divisible by heads");
  const std::size_t dh = d / heads;
  const T scl = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Node nd;
  nd.op = Op::kAttention;
  nd.inputs = {q.id, k.id, v.id};
  nd.out = like(Q);
  nd.saved.assign(heads * tokens * tokens, T(0));
  nd.indices = {heads};
  nd.s0 = scl;
  std::vector<double> scores(tokens);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < tokens; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tokens; ++j) {
        scores[j] = static_cast<double>(
            scl * kernels::dot(Q.data() + i * d + off, K.data() + j * d + off, dh));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < tokens; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      T* p = nd.saved.data() + (h * tokens + i) * tokens;
      T* o = nd.out.data() + i * d + off;
      for (std::size_t j = 0; j < tokens; ++j) {
        p[j] = static_cast<T>(scores[j] / z);
        kernels::axpy(p[j], V.data() + j * d + off, o, dh);
      }
    }
  }
  nd.requires_grad = needs(q.id) || needs(k.id) || needs(v.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::mean_rows(Var x) {
  const auto& X = value(x);
  const std::size_t m = X.rows(), n = X.cols();
  Node nd;
  nd.op = Op::kMeanRows;
  nd.inputs = {x.id};
  nd.out = TensorT(Shape{n});
  for (std::size_t r = 0; r < m; ++r) kernels::axpy(T(1), X.data() + r * n, nd.out.data(), n);
  const T inv = T(1) / static_cast<T>(m);
  for (auto& v : nd.out.values()) v *= inv;
  nd.requires_grad = needs(x.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::sum(Var x) {
  const auto& X = value(x);
  Node nd;
  nd.op = Op::kSum;
  nd.inputs = {x.id};
  T acc{0};
  for (auto v : X.values()) acc += v;
  nd.out = TensorT::scalar(acc);
  nd.requires_grad = needs(x.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::gather_rows(Var table, std::vector<std::size_t> ids) {
  const auto& W = value(table);
  const std::size_t n = W.cols();
  Node nd;
  nd.op = Op::kGatherRows;
  nd.inputs = {table.id};
  nd.out = TensorT(Shape{ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= W.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(W.data() + ids[i] * n, n, nd.out.data() + i * n);
  }
  nd.indices = std::move(ids);
  nd.requires_grad = needs(table.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t n = value(parts[0]).cols();
  std::size_t rows = 0;
  for (auto p : parts) {
    if (value(p).cols() != n) throw ShapeError("concat_rows: column count mismatch");
    rows += value(p).rows();
  }
  Node nd;
  nd.op = Op::kConcat;
  nd.out = TensorT(Shape{rows, n});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& P = value(p);
    std::copy(P.values().begin(), P.values().end(), nd.out.data() + off);
    off += P.size();
    nd.inputs.push_back(p.id);
    nd.requires_grad = nd.requires_grad || needs(p.id);
  }
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  std::size_t total = 0;
  for (auto p : parts) total += value(p).size();
  Node nd;
  nd.op = Op::kConcat;
  nd.out = TensorT(Shape{total});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& P = value(p);
    std::copy(P.values().begin(), P.values().end(), nd.out.data() + off);
    off += P.size();
    nd.inputs.push_back(p.id);
    nd.requires_grad = nd.requires_grad || needs(p.id);
  }
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::slice_rows(Var x, std::size_t begin, std::size_t count) {
  const auto& X = value(x);
  if (begin + count > X.rows() || count == 0) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t n = X.cols();
  Node nd;
  nd.op = Op::kSliceRows;
  nd.inputs = {x.id};
  nd.out = TensorT(Shape{count, n});
  std::copy_n(X.data() + begin * n, count * n, nd.out.data());
  nd.indices = {begin};
  nd.requires_grad = needs(x.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::row(Var x, std::size_t r) {
  const auto& X = value(x);
  if (r >= X.rows()) throw ShapeError("row: index out of range");
  const std::size_t n = X.cols();
  Node nd;
  nd.op = Op::kSliceRows;
  nd.inputs = {x.id};
  nd.out = TensorT(Shape{n});
  std::copy_n(X.data() + r * n, n, nd.out.data());
  nd.indices = {r};
  nd.requires_grad = needs(x.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::select(Var v, std::vector<std::size_t> indices) {
  const auto& X = value(v);
  Node nd;
  nd.op = Op::kSelect;
  nd.inputs = {v.id};
  nd.out = TensorT(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= X.size()) throw ShapeError("select: index out of range");
    nd.out[i] = X[indices[i]];
  }
  nd.indices = std::move(indices);
  nd.requires_grad = needs(v.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::cosine_logits(Var query, Var keys, Var log_temperature, T min_temperature) {
  const auto& q = value(query);
  const auto& K = value(keys);
  const auto& log_tau = value(log_temperature);
  const std::size_t d = q.size();
  if (K.cols() != d) throw ShapeError("cosine_logits: key width differs from query");
  if (log_tau.size() != 1) throw ShapeError("cosine_logits: temperature must be a scalar");
  const double qn = std::sqrt(static_cast<double>(kernels::dot(q.data(), q.data(), d)));
  if (!(qn > 0.0)) throw Error("degenerate pooled state");
  const T tau = std::exp(log_tau[0]);
  const bool clamped = !(tau > min_temperature);
  const T t = clamped ? min_temperature : tau;

  Node nd;
  nd.op = Op::kCosine;
  nd.inputs = {query.id, keys.id, log_temperature.id};
  const std::size_t k = K.rows();
  nd.out = TensorT(Shape{k});
  // saved: cosines (k), key norms (k), query norm (1)
  nd.saved.resize(2 * k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    const T* key = K.data() + i * d;
    const double kn = std::sqrt(static_cast<double>(kernels::dot(key, key, d)));
    const double c = kn > 0.0 ? static_cast<double>(kernels::dot(q.data(), key, d)) / (qn * kn) : 0.0;
    nd.saved[i] = static_cast<T>(c);
    nd.saved[k + i] = static_cast<T>(kn);
    nd.out[i] = static_cast<T>(c) / t;
  }
  nd.saved[2 * k] = static_cast<T>(qn);
  nd.s0 = t;
  nd.s1 = clamped ? T(1) : T(0);
  nd.requires_grad = needs(query.id) || needs(keys.id) || needs(log_temperature.id);
  return push(std::move(nd));
}

template <typename T>
Var BasicTape<T>::masked_log_softmax_pick(Var logits, std::vector<bool> mask, T inv_temperature,
                                          std::size_t index) {
  const auto& z = value(logits);
  const std::size_t n = z.size();
  if (mask.size() != n) throw ShapeError("masked_log_softmax_pick: mask length mismatch");
  if (index >= n || !mask[index]) throw Error("picked action is masked");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) mx = std::max(mx, static_cast<double>(inv_temperature) * z[i]);
  double total = 0.0;
  std::vector<double> e(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    e[i] = std::exp(static_cast<double>(inv_temperature) * z[i] - mx);
    total += e[i];
  }
  const double lse = mx + std::log(total);
  Node nd;
  nd.op = Op::kLogSoftmaxPick;
  nd.inputs = {logits.id};
  nd.out = TensorT::scalar(static_cast<T>(static_cast<double>(inv_temperature) * z[index] - lse));
  nd.saved.resize(n);
  for (std::size_t i = 0; i < n; ++i) nd.saved[i] = static_cast<T>(e[i] / total);
  nd.indices = {index};
  nd.mask = std::move(mask);
  nd.s0 = inv_temperature;
  nd.requires_grad = needs(logits.id);
  return push(std::move(nd));
}

template <typename T>
std::vector<BasicTensor<T>> BasicTape<T>::backward(Var loss) const {
  std::vector<TensorT> grads;
  grads.reserve(params_.size());
  for (const auto* p : params_) grads.emplace_back(p->shape());
  backward_into(loss, T(1), grads);
  return grads;
}

template <typename T>
void BasicTape<T>::backward_into(Var loss, T seed, std::span<TensorT> grads) const {
  if (value(loss).size() != 1)
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(value(loss).shape()));
  if (grads.size() != params_.size()) throw ShapeError("backward: gradient slot count mismatch");

  std::vector<TensorT> g(loss.id + 1);
  g[loss.id] = TensorT::scalar(seed);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    if (g[id].empty() || !nodes_[id].requires_grad) continue;
    const Node& n = nodes_[id];
    if (n.op == Op::kLeaf) {
      if (n.slot >= 0) add_into(grads[static_cast<std::size_t>(n.slot)], g[id]);
      continue;
    }
    backward_node(id, g[id], g);
    g[id] = TensorT();
  }
}

template <typename T>
void BasicTape<T>::backward_node(std::size_t id, const TensorT& G,
                                 std::vector<TensorT>& grads) const {
  const Node& n = nodes_[id];
  auto grad_for = [&](std::size_t input) -> TensorT* {
    if (!nodes_[input].requires_grad) return nullptr;
    if (grads[input].empty()) grads[input] = like(value(Var{input}));
    return &grads[input];
  };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kMatmul: {
      const auto& A = value(Var{n.inputs[0]});
      const auto& B = value(Var{n.inputs[1]});
      const std::size_t m = A.rows(), k = A.cols(), p = B.shape()[1];
      if (auto* dA = grad_for(n.inputs[0])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j)
            (*dA)[i * k + j] += kernels::dot(G.data() + i * p, B.data() + j * p, p);
      }
      if (auto* dB = grad_for(n.inputs[1])) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < k; ++j)
            kernels::axpy(A[i * k + j], G.data() + i * p, dB->data() + j * p, p);
      }
      break;
    }
    case Op::kAdd:
      if (auto* dA = grad_for(n.inputs[0])) add_into(*dA, G);
      if (auto* dB = grad_for(n.inputs[1])) add_into(*dB, G);
      break;
    case Op::kMul: {
      const auto& A = value(Var{n.inputs[0]});
      const auto& B = value(Var{n.inputs[1]});
      if (auto* dA = grad_for(n.inputs[0]))
        for (std::size_t i = 0; i < G.size(); ++i) (*dA)[i] += G[i] * B[i];
      if (auto* dB = grad_for(n.inputs[1]))
        for (std::size_t i = 0; i < G.size(); ++i) (*dB)[i] += G[i] * A[i];
      break;
    }
    case Op::kAddRow: {
      if (auto* dA = grad_for(n.inputs[0])) add_into(*dA, G);
      if (auto* db = grad_for(n.inputs[1])) {
        const std::size_t cols = G.cols();
        for (std::size_t r = 0; r < G.rows(); ++r)
          kernels::axpy(T(1), G.data() + r * cols, db->data(), cols);
      }
      break;
    }
    case Op::kScale:
      if (auto* dA = grad_for(n.inputs[0])) kernels::axpy(n.s0, G.data(), dA->data(), G.size());
      break;
    case Op::kRelu: {
      if (auto* dA = grad_for(n.inputs[0]))
        for (std::size_t i = 0; i < G.size(); ++i)
          if (n.out[i] > T(0)) (*dA)[i] += G[i];
      break;
    }
    case Op::kLayerNorm: {
      const auto& gain = value(Var{n.inputs[1]});
      const std::size_t m = G.rows(), cols = G.cols();
      const T* xhat = n.saved.data();
      const T* rstd = n.saved.data() + m * cols;
      if (auto* dg = grad_for(n.inputs[1]))
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < cols; ++c) (*dg)[c] += G[r * cols + c] * xhat[r * cols + c];
      if (auto* db = grad_for(n.inputs[2]))
        for (std::size_t r = 0; r < m; ++r)
          kernels::axpy(T(1), G.data() + r * cols, db->data(), cols);
      if (auto* dx = grad_for(n.inputs[0])) {
        std::vector<T> dxhat(cols);
        for (std::size_t r = 0; r < m; ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            dxhat[c] = G[r * cols + c] * gain[c];
            mean_d += dxhat[c];
            mean_dx += static_cast<double>(dxhat[c]) * xhat[r * cols + c];
          }
          mean_d /= static_cast<double>(cols);
          mean_dx /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c)
            (*dx)[r * cols + c] += rstd[r] * static_cast<T>(dxhat[c] - mean_d -
                                                            xhat[r * cols + c] * mean_dx);
        }
      }
      break;
    }
    case Op::kAttention: {
      const auto& Q = value(Var{n.inputs[0]});
      const auto& K = value(Var{n.inputs[1]});
      const auto& V = value(Var{n.inputs[2]});
      const std::size_t tokens = Q.rows(), d = Q.cols(), heads = n.indices[0], dh = d / heads;
      const T scl = n.s0;
      TensorT* dQ = grad_for(n.inputs[0]);
      TensorT* dK = grad_for(n.inputs[1]);
      TensorT* dV = grad_for(n.inputs[2]);
      std::vector<T> dP(tokens), dS(tokens);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < tokens; ++i) {
          const T* p = n.saved.data() + (h * tokens + i) * tokens;
          const T* go = G.data() + i * d + off;
          double rowdot = 0.0;
          for (std::size_t j = 0; j < tokens; ++j) {
            dP[j] = kernels::dot(go, V.data() + j * d + off, dh);
            rowdot += static_cast<double>(p[j]) * dP[j];
            if (dV) kernels::axpy(p[j], go, dV->data() + j * d + off, dh);
          }
          for (std::size_t j = 0; j < tokens; ++j)
            dS[j] = p[j] * static_cast<T>(dP[j] - rowdot) * scl;
          for (std::size_t j = 0; j < tokens; ++j) {
            if (dQ) kernels::axpy(dS[j], K.data() + j * d + off, dQ->data() + i * d + off, dh);
            if (dK) kernels::axpy(dS[j], Q.data() + i * d + off, dK->data() + j * d + off, dh);
          }
        }
      }
      break;
    }
    case Op::kMeanRows: {
      if (auto* dX = grad_for(n.inputs[0])) {
        const std::size_t m = dX->rows(), cols = dX->cols();
        const T inv = T(1) / static_cast<T>(m);
        for (std::size_t r = 0; r < m; ++r) kernels::axpy(inv, G.data(), dX->data() + r * cols, cols);
      }
      break;
    }
    case Op::kSum: {
      if (auto* dX = grad_for(n.inputs[0]))
        for (auto& v : dX->values()) v += G[0];
      break;
    }
    case Op::kGatherRows: {
      if (auto* dW = grad_for(n.inputs[0])) {
        const std::size_t cols = dW->cols();
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          kernels::axpy(T(1), G.data() + i * cols, dW->data() + n.indices[i] * cols, cols);
      }
      break;
    }
    case Op::kConcat: {
      std::size_t off = 0;
      for (auto in : n.inputs) {
        const std::size_t len = value(Var{in}).size();
        if (auto* dP = grad_for(in)) kernels::axpy(T(1), G.data() + off, dP->data(), len);
        off += len;
      }
      break;
    }
    case Op::kSliceRows: {
      if (auto* dX = grad_for(n.inputs[0])) {
        const std::size_t start = n.indices[0] * dX->cols();
        kernels::axpy(T(1), G.data(), dX->data() + start, G.size());
      }
      break;
    }
    case Op::kSelect: {
      if (auto* dX = grad_for(n.inputs[0]))
        for (std::size_t i = 0; i < n.indices.size(); ++i) (*dX)[n.indices[i]] += G[i];
      break;
    }
    case Op::kCosine: {
      const auto& q = value(Var{n.inputs[0]});
      const auto& K = value(Var{n.inputs[1]});
      const std::size_t k = K.rows(), d = q.size();
      const T t = n.s0;
      const T qn = n.saved[2 * k];
      TensorT* dq = grad_for(n.inputs[0]);
      TensorT* dK = grad_for(n.inputs[1]);
      TensorT* dlog_tau = grad_for(n.inputs[2]);
      for (std::size_t i = 0; i < k; ++i) {
        const T c = n.saved[i];
        const T kn = n.saved[k + i];
        const T dc = G[i] / t;
        // d(c / e^l)/dl = -c / t
        if (dlog_tau && n.s1 == T(0)) (*dlog_tau)[0] -= G[i] * c / t;
        if (kn == T(0)) continue;
        const T* key = K.data() + i * d;
        if (dq) {
          kernels::axpy(dc / (qn * kn), key, dq->data(), d);
          kernels::axpy(-dc * c / (qn * qn), q.data(), dq->data(), d);
        }
        if (dK) {
          kernels::axpy(dc / (qn * kn), q.data(), dK->data() + i * d, d);
          kernels::axpy(-dc * c / (kn * kn), key, dK->data() + i * d, d);
        }
      }
      break;
    }
    case Op::kLogSoftmaxPick: {
      if (auto* dz = grad_for(n.inputs[0])) {
        const std::size_t pick = n.indices[0];
        for (std::size_t i = 0; i < dz->size(); ++i) {
          if (!n.mask[i]) continue;
          const T indicator = i == pick ? T(1) : T(0);
          (*dz)[i] += G[0] * n.s0 * (indicator - n.saved[i]);
        }
      }
      break;
    }
  }
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace medroute::numerics
