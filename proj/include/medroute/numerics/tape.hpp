#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "medroute/numerics/tensor.hpp"

namespace medroute::numerics {

/// Handle to a node recorded on a tape.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

/// Reverse-mode recording of the op set the router needs.
///
/// Trainable tensors are registered up front; `param(t)` for a registered tensor yields a
/// leaf whose gradient lands in the slot matching its registration index. Leaves hold a
/// reference, so registered tensors must outlive the tape. Unregistered tensors passed to
/// `param` are treated as constants.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;

  BasicTape() = default;
  explicit BasicTape(std::vector<const TensorT*> params);

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;
  BasicTape(BasicTape&&) noexcept = default;
  BasicTape& operator=(BasicTape&&) noexcept = default;

  Var constant(TensorT value);
  Var param(const TensorT& tensor);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var bias);
  Var scale(Var a, T factor);
  Var relu(Var a);
  Var layernorm(Var x, Var gain, Var bias, T eps = T(1e-5));
  /// Bidirectional multi-head scaled dot-product attention over the rows of q, k, v.
  Var attention(Var q, Var k, Var v, std::size_t heads);
  Var mean_rows(Var x);
  Var sum(Var x);
  Var gather_rows(Var table, std::vector<std::size_t> ids);
  /// Stacks rows (rank-1 parts count as one row) into a matrix.
  Var concat_rows(std::span<const Var> parts);
  /// Flat concatenation into a rank-1 tensor.
  Var concat(std::span<const Var> parts);
  Var row(Var x, std::size_t r);
  Var slice_rows(Var x, std::size_t begin, std::size_t count);
  Var select(Var v, std::vector<std::size_t> indices);
  /// out_i = cos(query, keys_i) / max(exp(log_temperature), min_temperature).
  Var cosine_logits(Var query, Var keys, Var log_temperature, T min_temperature);
  /// log softmax(inv_temperature * logits)[index] over the entries where mask is true.
  Var masked_log_softmax_pick(Var logits, std::vector<bool> mask, T inv_temperature,
                              std::size_t index);

  const TensorT& value(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t slot_count() const { return params_.size(); }

  /// Gradients of a scalar node with respect to each registered tensor.
  std::vector<TensorT> backward(Var loss) const;
  /// Adds seed * d(loss)/d(param) into `grads` (one tensor per registered slot).
  void backward_into(Var loss, T seed, std::span<TensorT> grads) const;

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatmul,
    kAdd,
    kMul,
    kAddRow,
    kScale,
    kRelu,
    kLayerNorm,
    kAttention,
    kMeanRows,
    kSum,
    kGatherRows,
    kConcat,
    kSliceRows,
    kSelect,
    kCosine,
    kLogSoftmaxPick,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::size_t> inputs;
    TensorT out;
    const TensorT* ref = nullptr;
    std::ptrdiff_t slot = -1;
    bool requires_grad = false;
    std::vector<T> saved;
    std::vector<std::size_t> indices;
    std::vector<bool> mask;
    T s0{0};
    T s1{0};
  };

  Var push(Node node);
  const Node& node(Var v) const;
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  void backward_node(std::size_t id, const TensorT& g, std::vector<TensorT>& grads) const;

  std::vector<const TensorT*> params_;
  std::vector<Var> param_vars_;
  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace medroute::numerics
