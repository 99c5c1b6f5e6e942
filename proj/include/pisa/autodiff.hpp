#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pisa/tensor.hpp"

namespace pisa {

template <typename T>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode tape. Operations are appended in evaluation order, so the
// recording order is already a topological order of the graph.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  // With gradients disabled, leaves never require grad and no backward
  // closures are recorded (inference mode).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A value that never receives gradient.
  Var<T> constant(Tensor<T> value);
  // References an external tensor without copying it; the tensor must outlive
  // the tape. If it requires grad, backward() adds dloss/dtensor into its grad.
  Var<T> leaf(const Tensor<T>& tensor);

  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node during/after backward (zero-filled on first access).
  std::span<T> grad(std::size_t id);
  std::span<const T> grad(Var<T> v) { return grad(v.id); }

  // Seeds dloss/dloss = 1 and propagates to every reachable leaf. Leaf
  // gradients accumulate across calls; intermediate gradients are recomputed.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    const Tensor<T>* sink = nullptr;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<T> grad;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

extern template class Tape<float>;
extern template class Tape<double>;

// ---- operations --------------------------------------------------------------

// y = W x for W [m x k], x [k].
template <typename T>
Var<T> matvec(Var<T> w, Var<T> x);

// Y = A W^T for A [n x k], W [m x k]. The batched form of matvec.
template <typename T>
Var<T> matmul_t(Var<T> a, Var<T> w);

// Adds bias b [m] to every row of A [n x m].
template <typename T>
Var<T> add_bias(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> ew_mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> square(Var<T> a);
template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);

// Sum of all entries, as a rank-0 tensor.
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);

// Componentwise sum of equally shaped values, accumulated in list order in
// double precision.
// An empty list yields zeros of `shape`.
template <typename T>
Var<T> reduce_sum(Tape<T>& tape, std::span<const Var<T>> xs, const Shape& shape);

// Row-segment sums: out[s] = sum of rows offsets[s] .. offsets[s+1]-1 of A.
template <typename T>
Var<T> segment_sum(Var<T> a, std::span<const std::size_t> offsets);

// out[i] = A[index[i]].
template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> index);

// [A | B] for A [n x p], B [n x q].
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b);

// Mean binary cross-entropy of logits against 0/1 labels (same shape).
template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& labels);

}  // namespace pisa
