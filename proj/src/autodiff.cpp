#include "pisa/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace pisa {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(std::span<T> s, std::size_t r, std::size_t c) {
  return MatMap<T>(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
ConstMatMap<T> as_mat(std::span<const T> s, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ContractError("operands live on different tapes");
  return *a.tape;
}

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_matrix(const char* op, Var<T> a) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected matrix, got " + shape_str(a.shape()));
  }
}

// Elementwise unary op with derivative computed from input x and output y.
template <typename T, typename F, typename D>
Var<T> unary(Var<T> a, F f, D dfdx) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& x = a.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return tape.record(std::move(y), {a.id}, [ai = a.id, dfdx](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    auto gx = t.grad(ai);
    const Tensor<T>& xv = t.value(ai);
    const Tensor<T>& yv = t.value(self);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template struct Var<float>;
template struct Var<double>;

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::leaf(const Tensor<T>& tensor) {
  Node n;
  n.ref = &tensor;
  if (grad_enabled_ && tensor.requires_grad()) {
    n.sink = &tensor;
    n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (std::size_t in : inputs) n.needs_grad = n.needs_grad || nodes_.at(in).needs_grad;
  if (n.needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.owned;
}

template <typename T>
std::span<T> Tape<T>::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).numel(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ContractError("backward: loss recorded on another tape");
  if (value(loss.id).numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape()));
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id].needs_grad) return;
  grad(loss.id)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, i);
    } else if (n.sink) {
      auto g = n.sink->mutable_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

// ---- operations --------------------------------------------------------------

template <typename T>
Var<T> matvec(Var<T> w, Var<T> x) {
  Tape<T>& tape = same_tape(w, x);
  const Tensor<T>& W = w.value();
  const Tensor<T>& X = x.value();
  if (W.rank() != 2 || X.rank() != 1 || W.cols() != X.numel()) {
    throw DimensionError("matvec: incompatible shapes " + shape_str(W.shape()) + " and " +
                         shape_str(X.shape()));
  }
  const std::size_t m = W.rows(), k = W.cols();
  Tensor<T> y(Shape{m});
  as_mat(y.data(), m, 1).noalias() = as_mat(W.data(), m, k) * as_mat(X.data(), k, 1);
  return tape.record(std::move(y), {w.id, x.id}, [wi = w.id, xi = x.id, m, k](Tape<T>& t, std::size_t self) {
    auto gy = as_mat(std::span<const T>(t.grad(self)), m, 1);
    if (t.needs_grad(wi)) {
      as_mat(t.grad(wi), m, k).noalias() += gy * as_mat(t.value(xi).data(), k, 1).transpose();
    }
    if (t.needs_grad(xi)) {
      as_mat(t.grad(xi), k, 1).noalias() += as_mat(t.value(wi).data(), m, k).transpose() * gy;
    }
  });
}

template <typename T>
Var<T> matmul_t(Var<T> a, Var<T> w) {
  Tape<T>& tape = same_tape(a, w);
  const Tensor<T>& A = a.value();
  const Tensor<T>& W = w.value();
  if (W.rank() != 2 || A.rank() != 2 || A.cols() != W.cols()) {
    throw DimensionError("matmul_t: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(W.shape()));
  }
  const std::size_t n = A.rows(), k = A.cols(), m = W.rows();
  Tensor<T> y(Shape{n, m});
  as_mat(y.data(), n, m).noalias() = as_mat(A.data(), n, k) * as_mat(W.data(), m, k).transpose();
  return tape.record(std::move(y), {a.id, w.id},
                     [ai = a.id, wi = w.id, n, k, m](Tape<T>& t, std::size_t self) {
                       auto gy = as_mat(std::span<const T>(t.grad(self)), n, m);
                       if (t.needs_grad(ai)) {
                         as_mat(t.grad(ai), n, k).noalias() += gy * as_mat(t.value(wi).data(), m, k);
                       }
                       if (t.needs_grad(wi)) {
                         as_mat(t.grad(wi), m, k).noalias() +=
                             gy.transpose() * as_mat(t.value(ai).data(), n, k);
                       }
                     });
}

template <typename T>
Var<T> add_bias(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  const std::size_t n = A.rows(), m = A.cols();
  if (B.rank() != 1 || B.numel() != m) {
    throw DimensionError("add_bias: bias " + shape_str(B.shape()) + " vs input " + shape_str(A.shape()));
  }
  Tensor<T> y = A;
  y.set_requires_grad(false);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) y.at(r, c) += B[c];
  return tape.record(std::move(y), {a.id, b.id},
                     [ai = a.id, bi = b.id, n, m](Tape<T>& t, std::size_t self) {
                       auto gy = t.grad(self);
                       if (t.needs_grad(ai)) {
                         auto ga = t.grad(ai);
                         for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                       }
                       if (t.needs_grad(bi)) {
                         auto gb = t.grad(bi);
                         for (std::size_t r = 0; r < n; ++r)
                           for (std::size_t c = 0; c < m; ++c) gb[c] += gy[r * m + c];
                       }
                     });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b);
  require_same_shape("add", a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> y(A.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = A[i] + B[i];
  return tape.record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    for (std::size_t in : {ai, bi}) {
      if (!t.needs_grad(in)) continue;
      auto g = t.grad(in);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b);
  require_same_shape("sub", a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> y(A.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = A[i] - B[i];
  return tape.record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    if (t.needs_grad(ai)) {
      auto g = t.grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
    if (t.needs_grad(bi)) {
      auto g = t.grad(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> ew_mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b);
  require_same_shape("ew_mul", a, b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  Tensor<T> y(A.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = A[i] * B[i];
  return tape.record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    if (t.needs_grad(ai)) {
      auto g = t.grad(ai);
      const Tensor<T>& bv = t.value(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (t.needs_grad(bi)) {
      auto g = t.grad(bi);
      const Tensor<T>& av = t.value(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  return unary(a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& A = a.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < A.numel(); ++i) acc += A[i];
  return a.tape->record(Tensor<T>::scalar(static_cast<T>(acc)), {a.id}, [ai = a.id](Tape<T>& t, std::size_t self) {
    const T gy = t.grad(self)[0];
    for (T& g : t.grad(ai)) g += gy;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> reduce_sum(Tape<T>& tape, std::span<const Var<T>> xs, const Shape& shape) {
  Tensor<T> y(shape);
  std::vector<double> acc(y.numel(), 0.0);
  std::vector<std::size_t> ids;
  ids.reserve(xs.size());
  for (const Var<T>& x : xs) {
    if (x.tape != &tape) throw ContractError("reduce_sum: operand on another tape");
    if (x.shape() != shape) {
      throw DimensionError("reduce_sum: operand " + shape_str(x.shape()) + " vs " + shape_str(shape));
    }
    const Tensor<T>& xv = x.value();
    for (std::size_t i = 0; i < y.numel(); ++i) acc[i] += xv[i];
    ids.push_back(x.id);
  }
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = static_cast<T>(acc[i]);
  return tape.record(std::move(y), ids, [ids](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    for (std::size_t in : ids) {
      if (!t.needs_grad(in)) continue;
      auto g = t.grad(in);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> segment_sum(Var<T> a, std::span<const std::size_t> offsets) {
  require_matrix("segment_sum", a);
  const Tensor<T>& A = a.value();
  const std::size_t d = A.cols();
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != A.rows() ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ContractError("segment_sum: offsets must run monotonically from 0 to the row count");
  }
  const std::size_t segs = offsets.size() - 1;
  Tensor<T> y(Shape{segs, d});
  std::vector<double> acc(d);
  for (std::size_t s = 0; s < segs; ++s) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < d; ++c) acc[c] += A.at(r, c);
    for (std::size_t c = 0; c < d; ++c) y.at(s, c) = static_cast<T>(acc[c]);
  }
  std::vector<std::size_t> offs(offsets.begin(), offsets.end());
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, offs = std::move(offs), d](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    auto ga = t.grad(ai);
    for (std::size_t s = 0; s + 1 < offs.size(); ++s)
      for (std::size_t r = offs[s]; r < offs[s + 1]; ++r)
        for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += gy[s * d + c];
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> index) {
  require_matrix("gather_rows", a);
  const Tensor<T>& A = a.value();
  const std::size_t d = A.cols();
  Tensor<T> y(Shape{index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= A.rows()) throw DimensionError("gather_rows: row index out of range");
    for (std::size_t c = 0; c < d; ++c) y.at(i, c) = A.at(index[i], c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape->record(std::move(y), {a.id}, [ai = a.id, idx = std::move(idx), d](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    auto ga = t.grad(ai);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) ga[idx[i] * d + c] += gy[i * d + c];
  });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  Tape<T>& tape = same_tape(a, b);
  require_matrix("concat_cols", a);
  require_matrix("concat_cols", b);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.rows() != B.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t n = A.rows(), p = A.cols(), q = B.cols();
  Tensor<T> y(Shape{n, p + q});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < p; ++c) y.at(r, c) = A.at(r, c);
    for (std::size_t c = 0; c < q; ++c) y.at(r, p + c) = B.at(r, c);
  }
  return tape.record(std::move(y), {a.id, b.id}, [ai = a.id, bi = b.id, n, p, q](Tape<T>& t, std::size_t self) {
    auto gy = t.grad(self);
    if (t.needs_grad(ai)) {
      auto g = t.grad(ai);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < p; ++c) g[r * p + c] += gy[r * (p + q) + c];
    }
    if (t.needs_grad(bi)) {
      auto g = t.grad(bi);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < q; ++c) g[r * q + c] += gy[r * (p + q) + p + c];
    }
  });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& labels) {
  const Tensor<T>& X = logits.value();
  if (X.shape() != labels.shape()) throw DimensionError("bce_with_logits: label shape mismatch");
  if (X.numel() == 0) throw ContractError("bce_with_logits: empty batch");
  const std::size_t n = X.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T x = X[i];
    acc += std::max(x, T(0)) - x * labels[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return logits.tape->record(
      Tensor<T>::scalar(acc / static_cast<T>(n)), {logits.id},
      [li = logits.id, labels, n](Tape<T>& t, std::size_t self) {
        const T gy = t.grad(self)[0] / static_cast<T>(n);
        auto g = t.grad(li);
        const Tensor<T>& xv = t.value(li);
        for (std::size_t i = 0; i < n; ++i) {
          const T x = xv[i];
          const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
          g[i] += gy * (s - labels[i]);
        }
      });
}

#define PISA_INSTANTIATE_OPS(T)                                                          \
  template Var<T> matvec(Var<T>, Var<T>);                                                \
  template Var<T> matmul_t(Var<T>, Var<T>);                                              \
  template Var<T> add_bias(Var<T>, Var<T>);                                              \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> ew_mul(Var<T>, Var<T>);                                                \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> square(Var<T>);                                                        \
  template Var<T> relu(Var<T>);                                                          \
  template Var<T> sigmoid(Var<T>);                                                       \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean(Var<T>);                                                          \
  template Var<T> reduce_sum(Tape<T>&, std::span<const Var<T>>, const Shape&);           \
  template Var<T> segment_sum(Var<T>, std::span<const std::size_t>);                     \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                     \
  template Var<T> concat_cols(Var<T>, Var<T>);                                           \
  template Var<T> bce_with_logits(Var<T>, const Tensor<T>&);

PISA_INSTANTIATE_OPS(float)
PISA_INSTANTIATE_OPS(double)

}  // namespace pisa
