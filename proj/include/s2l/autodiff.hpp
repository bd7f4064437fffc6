#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "s2l/tensor.hpp"

namespace s2l {

/// Reverse-mode autodiff over TensorT values. Ops build a DAG of shared
/// nodes; backward() walks it once in reverse topological order. Nodes are
/// immutable after construction except for the gradient buffer, which
/// backward() zeroes before accumulation, so leaves can be bound once and
/// reused across many forward/backward passes.
template <typename Scalar>
struct NodeT {
  TensorT<Scalar> value;
  TensorT<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward;
};

template <typename Scalar>
using VarT = std::shared_ptr<NodeT<Scalar>>;

using Var = VarT<float>;

namespace detail {

[[noreturn]] inline void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

template <typename Scalar>
void require_same_shape(const std::string& op, const TensorT<Scalar>& a,
                        const TensorT<Scalar>& b) {
  if (!a.same_shape(b)) {
    shape_error(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace detail

template <typename Scalar>
VarT<Scalar> make_var(TensorT<Scalar> value, bool requires_grad) {
  auto n = std::make_shared<NodeT<Scalar>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename Scalar>
VarT<Scalar> constant(TensorT<Scalar> value) {
  return make_var(std::move(value), false);
}

template <typename Scalar>
VarT<Scalar> leaf(TensorT<Scalar> value) {
  return make_var(std::move(value), true);
}

template <typename Scalar>
VarT<Scalar> add(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::require_same_shape("add", a->value, b->value);
  auto out = make_var(TensorT<Scalar>(a->value.shape(),
                                      a->value.array() + b->value.array()),
                      a->requires_grad || b->requires_grad);
  out->parents = {a, b};
  out->backward = [a, b](NodeT<Scalar>& n) {
    if (a->requires_grad) a->grad.array() += n.grad.array();
    if (b->requires_grad) b->grad.array() += n.grad.array();
  };
  return out;
}

template <typename Scalar>
VarT<Scalar> mul(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::require_same_shape("mul", a->value, b->value);
  auto out = make_var(TensorT<Scalar>(a->value.shape(),
                                      a->value.array() * b->value.array()),
                      a->requires_grad || b->requires_grad);
  out->parents = {a, b};
  out->backward = [a, b](NodeT<Scalar>& n) {
    if (a->requires_grad) a->grad.array() += n.grad.array() * b->value.array();
    if (b->requires_grad) b->grad.array() += n.grad.array() * a->value.array();
  };
  return out;
}

template <typename Scalar>
VarT<Scalar> scale(const VarT<Scalar>& a, Scalar c) {
  auto out = make_var(TensorT<Scalar>(a->value.shape(), a->value.array() * c),
                      a->requires_grad);
  out->parents = {a};
  out->backward = [a, c](NodeT<Scalar>& n) {
    if (a->requires_grad) a->grad.array() += n.grad.array() * c;
  };
  return out;
}

/// Multiply each row of the 2-D view by its own coefficient.
template <typename Scalar>
VarT<Scalar> row_scale(const VarT<Scalar>& a, const std::vector<Scalar>& coeff) {
  const Eigen::Index rows = a->value.rows2d();
  if (static_cast<Eigen::Index>(coeff.size()) != rows) {
    detail::shape_error("row_scale", "coefficient count " +
                                         std::to_string(coeff.size()) +
                                         " vs rows " + std::to_string(rows));
  }
  TensorT<Scalar> v(a->value.shape(), a->value.array());
  auto m = v.mat();
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) *= coeff[r];
  auto out = make_var(std::move(v), a->requires_grad);
  out->parents = {a};
  out->backward = [a, coeff](NodeT<Scalar>& n) {
    if (!a->requires_grad) return;
    auto g = n.grad.mat();
    auto ag = a->grad.mat();
    for (Eigen::Index r = 0; r < g.rows(); ++r) ag.row(r) += g.row(r) * coeff[r];
  };
  return out;
}

template <typename Scalar>
VarT<Scalar> matmul(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2 ||
      a->value.dim(1) != b->value.dim(0)) {
    detail::shape_error("matmul", "incompatible shapes " + a->value.shape_str() +
                                      " x " + b->value.shape_str());
  }
  TensorT<Scalar> v({a->value.dim(0), b->value.dim(1)});
  v.mat().noalias() = a->value.mat() * b->value.mat();
  auto out = make_var(std::move(v), a->requires_grad || b->requires_grad);
  out->parents = {a, b};
  out->backward = [a, b](NodeT<Scalar>& n) {
    if (a->requires_grad) a->grad.mat().noalias() += n.grad.mat() * b->value.mat().transpose();
    if (b->requires_grad) b->grad.mat().noalias() += a->value.mat().transpose() * n.grad.mat();
  };
  return out;
}

/// Dense layer y = x W + b. x is viewed as [N, in]; b broadcasts over rows.
template <typename Scalar>
VarT<Scalar> affine(const VarT<Scalar>& x, const VarT<Scalar>& w,
                    const VarT<Scalar>& b) {
  if (w->value.rank() != 2 || x->value.cols2d() != w->value.dim(0) ||
      b->value.size() != w->value.dim(1)) {
    detail::shape_error("affine", "x " + x->value.shape_str() + ", w " +
                                      w->value.shape_str() + ", b " +
                                      b->value.shape_str());
  }
  std::vector<int> out_shape = x->value.shape();
  out_shape.back() = w->value.dim(1);
  TensorT<Scalar> v(out_shape);
  v.mat().noalias() = x->value.mat() * w->value.mat();
  v.mat().rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
      b->value.data(), b->value.size());
  auto out = make_var(std::move(v), x->requires_grad || w->requires_grad ||
                                        b->requires_grad);
  out->parents = {x, w, b};
  out->backward = [x, w, b](NodeT<Scalar>& n) {
    if (x->requires_grad) x->grad.mat().noalias() += n.grad.mat() * w->value.mat().transpose();
    if (w->requires_grad) w->grad.mat().noalias() += x->value.mat().transpose() * n.grad.mat();
    if (b->requires_grad) {
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(b->grad.data(), b->grad.size()) +=
          n.grad.mat().colwise().sum();
    }
  };
  return out;
}

/// Concatenate along the last axis; leading axes must match.
template <typename Scalar>
VarT<Scalar> concat_last(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  if (a->value.rows2d() != b->value.rows2d()) {
    detail::shape_error("concat_last", "row mismatch " + a->value.shape_str() +
                                           " vs " + b->value.shape_str());
  }
  const int ca = static_cast<int>(a->value.cols2d());
  const int cb = static_cast<int>(b->value.cols2d());
  std::vector<int> out_shape = a->value.shape();
  out_shape.back() = ca + cb;
  TensorT<Scalar> v(out_shape);
  v.mat().leftCols(ca) = a->value.mat();
  v.mat().rightCols(cb) = b->value.mat();
  auto out = make_var(std::move(v), a->requires_grad || b->requires_grad);
  out->parents = {a, b};
  out->backward = [a, b, ca, cb](NodeT<Scalar>& n) {
    if (a->requires_grad) a->grad.mat() += n.grad.mat().leftCols(ca);
    if (b->requires_grad) b->grad.mat() += n.grad.mat().rightCols(cb);
  };
  return out;
}

template <typename Scalar>
VarT<Scalar> tanh_act(const VarT<Scalar>& x) {
  TensorT<Scalar> v(x->value.shape(), x->value.array().tanh());
  auto out = make_var(std::move(v), x->requires_grad);
  out->parents = {x};
  out->backward = [x](NodeT<Scalar>& n) {
    if (!x->requires_grad) return;
    x->grad.array() += n.grad.array() * (Scalar(1) - n.value.array().square());
  };
  return out;
}

/// Exact GELU: x * Phi(x).
template <typename Scalar>
VarT<Scalar> gelu(const VarT<Scalar>& x) {
  auto cdf = [](Scalar v) {
    return Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(0.7071067811865475244)));
  };
  auto phi = x->value.array().unaryExpr(cdf).eval();
  TensorT<Scalar> v(x->value.shape(), x->value.array() * phi);
  auto out = make_var(std::move(v), x->requires_grad);
  out->parents = {x};
  out->backward = [x, phi](NodeT<Scalar>& n) {
    if (!x->requires_grad) return;
    const Scalar inv_sqrt2pi = Scalar(0.3989422804014326779);
    auto pdf = (Scalar(-0.5) * x->value.array().square()).exp() * inv_sqrt2pi;
    x->grad.array() += n.grad.array() * (phi + x->value.array() * pdf);
  };
  return out;
}

/// Softmax over the last axis, stabilised by row max subtraction.
template <typename Scalar>
VarT<Scalar> softmax_last(const VarT<Scalar>& x) {
  TensorT<Scalar> v(x->value.shape());
  auto xm = x->value.mat();
  auto vm = v.mat();
  for (Eigen::Index r = 0; r < xm.rows(); ++r) {
    auto row = xm.row(r).array();
    auto e = (row - row.maxCoeff()).exp().eval();
    vm.row(r) = e / e.sum();
  }
  auto out = make_var(std::move(v), x->requires_grad);
  out->parents = {x};
  out->backward = [x](NodeT<Scalar>& n) {
    if (!x->requires_grad) return;
    auto p = n.value.mat();
    auto g = n.grad.mat();
    auto xg = x->grad.mat();
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const Scalar dot = (g.row(r).array() * p.row(r).array()).sum();
      xg.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
    }
  };
  return out;
}

/// Single-head scaled dot-product attention.
/// q: [B, Lq, d], k: [B, Lk, d], v: [B, Lk, dv] -> [B, Lq, dv].
template <typename Scalar>
VarT<Scalar> attention(const VarT<Scalar>& q, const VarT<Scalar>& k,
                       const VarT<Scalar>& v) {
  const auto& qs = q->value.shape();
  const auto& ks = k->value.shape();
  const auto& vs = v->value.shape();
  if (qs.size() != 3 || ks.size() != 3 || vs.size() != 3 || qs[0] != ks[0] ||
      qs[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1]) {
    detail::shape_error("attention", "q " + q->value.shape_str() + ", k " +
                                         k->value.shape_str() + ", v " +
                                         v->value.shape_str());
  }
  const int B = qs[0], Lq = qs[1], d = qs[2], Lk = ks[1], dv = vs[2];
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  using Mat = typename TensorT<Scalar>::MatrixRM;

  TensorT<Scalar> outv({B, Lq, dv});
  // Row-softmaxed score matrices, saved for the backward pass.
  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(static_cast<size_t>(B));
  for (int bi = 0; bi < B; ++bi) {
    typename TensorT<Scalar>::ConstMatMap Q(q->value.data() + static_cast<Eigen::Index>(bi) * Lq * d, Lq, d);
    typename TensorT<Scalar>::ConstMatMap K(k->value.data() + static_cast<Eigen::Index>(bi) * Lk * d, Lk, d);
    typename TensorT<Scalar>::ConstMatMap V(v->value.data() + static_cast<Eigen::Index>(bi) * Lk * dv, Lk, dv);
    Mat S = (Q * K.transpose()) * inv_sqrt_d;
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
      auto row = S.row(r).array();
      auto e = (row - row.maxCoeff()).exp().eval();
      S.row(r) = e / e.sum();
    }
    typename TensorT<Scalar>::MatMap O(outv.data() + static_cast<Eigen::Index>(bi) * Lq * dv, Lq, dv);
    O.noalias() = S * V;
    probs->push_back(std::move(S));
  }
  auto out = make_var(std::move(outv),
                      q->requires_grad || k->requires_grad || v->requires_grad);
  out->parents = {q, k, v};
  out->backward = [q, k, v, probs, B, Lq, Lk, d, dv, inv_sqrt_d](NodeT<Scalar>& n) {
    for (int bi = 0; bi < B; ++bi) {
      typename TensorT<Scalar>::ConstMatMap Q(q->value.data() + static_cast<Eigen::Index>(bi) * Lq * d, Lq, d);
      typename TensorT<Scalar>::ConstMatMap K(k->value.data() + static_cast<Eigen::Index>(bi) * Lk * d, Lk, d);
      typename TensorT<Scalar>::ConstMatMap V(v->value.data() + static_cast<Eigen::Index>(bi) * Lk * dv, Lk, dv);
      typename TensorT<Scalar>::ConstMatMap dO(n.grad.data() + static_cast<Eigen::Index>(bi) * Lq * dv, Lq, dv);
      const Mat& P = (*probs)[static_cast<size_t>(bi)];
      if (v->requires_grad) {
        typename TensorT<Scalar>::MatMap dV(v->grad.data() + static_cast<Eigen::Index>(bi) * Lk * dv, Lk, dv);
        dV.noalias() += P.transpose() * dO;
      }
      if (q->requires_grad || k->requires_grad) {
        Mat dP = dO * V.transpose();  // [Lq, Lk]
        Mat dS(Lq, Lk);
        for (Eigen::Index r = 0; r < Lq; ++r) {
          const Scalar dot = (dP.row(r).array() * P.row(r).array()).sum();
          dS.row(r).array() = P.row(r).array() * (dP.row(r).array() - dot);
        }
        dS *= inv_sqrt_d;
        if (q->requires_grad) {
          typename TensorT<Scalar>::MatMap dQ(q->grad.data() + static_cast<Eigen::Index>(bi) * Lq * d, Lq, d);
          dQ.noalias() += dS * K;
        }
        if (k->requires_grad) {
          typename TensorT<Scalar>::MatMap dK(k->grad.data() + static_cast<Eigen::Index>(bi) * Lk * d, Lk, d);
          dK.noalias() += dS.transpose() * Q;
        }
      }
    }
  };
  return out;
}

/// Embedding lookup: table [V, e], ids of length prod(id_shape) -> [id_shape..., e].
template <typename Scalar>
VarT<Scalar> embedding(const VarT<Scalar>& table, const std::vector<int>& ids,
                       std::vector<int> id_shape) {
  if (table->value.rank() != 2) {
    detail::shape_error("embedding", "table must be 2-D, got " + table->value.shape_str());
  }
  Eigen::Index n = 1;
  for (int dmn : id_shape) n *= dmn;
  if (static_cast<Eigen::Index>(ids.size()) != n) {
    detail::shape_error("embedding", "id count does not match id shape");
  }
  const int vocab = table->value.dim(0);
  const int e = table->value.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw std::invalid_argument("embedding: unknown token id " + std::to_string(id));
    }
  }
  std::vector<int> out_shape = std::move(id_shape);
  out_shape.push_back(e);
  TensorT<Scalar> v(out_shape);
  auto tm = table->value.mat();
  auto vm = v.mat();
  for (Eigen::Index r = 0; r < n; ++r) vm.row(r) = tm.row(ids[static_cast<size_t>(r)]);
  auto out = make_var(std::move(v), table->requires_grad);
  out->parents = {table};
  out->backward = [table, ids](NodeT<Scalar>& n_) {
    if (!table->requires_grad) return;
    auto g = n_.grad.mat();
    auto tg = table->grad.mat();
    for (Eigen::Index r = 0; r < g.rows(); ++r) tg.row(ids[static_cast<size_t>(r)]) += g.row(r);
  };
  return out;
}

/// Mean over one axis.
template <typename Scalar>
VarT<Scalar> mean_axis(const VarT<Scalar>& x, int axis) {
  const auto& s = x->value.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    detail::shape_error("mean_axis", "axis " + std::to_string(axis) +
                                         " out of range for " + x->value.shape_str());
  }
  Eigen::Index outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  const Eigen::Index mid = s[static_cast<size_t>(axis)];
  std::vector<int> out_shape;
  for (size_t i = 0; i < s.size(); ++i) {
    if (static_cast<int>(i) != axis) out_shape.push_back(s[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  TensorT<Scalar> v(out_shape);
  const Scalar inv = Scalar(1) / static_cast<Scalar>(mid);
  for (Eigen::Index o = 0; o < outer; ++o) {
    for (Eigen::Index i = 0; i < inner; ++i) {
      Scalar acc = 0;
      for (Eigen::Index m = 0; m < mid; ++m) acc += x->value[(o * mid + m) * inner + i];
      v[o * inner + i] = acc * inv;
    }
  }
  auto out = make_var(std::move(v), x->requires_grad);
  out->parents = {x};
  out->backward = [x, outer, mid, inner, inv](NodeT<Scalar>& n) {
    if (!x->requires_grad) return;
    for (Eigen::Index o = 0; o < outer; ++o) {
      for (Eigen::Index i = 0; i < inner; ++i) {
        const Scalar g = n.grad[o * inner + i] * inv;
        for (Eigen::Index m = 0; m < mid; ++m) x->grad[(o * mid + m) * inner + i] += g;
      }
    }
  };
  return out;
}

/// Mean squared error over all elements; scalar output.
template <typename Scalar>
VarT<Scalar> mse(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::require_same_shape("mse", a->value, b->value);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(a->value.size());
  TensorT<Scalar> v({1});
  v[0] = (a->value.array() - b->value.array()).square().sum() * inv_n;
  auto out = make_var(std::move(v), a->requires_grad || b->requires_grad);
  out->parents = {a, b};
  out->backward = [a, b, inv_n](NodeT<Scalar>& n) {
    const Scalar c = Scalar(2) * inv_n * n.grad[0];
    if (a->requires_grad) a->grad.array() += c * (a->value.array() - b->value.array());
    if (b->requires_grad) b->grad.array() -= c * (a->value.array() - b->value.array());
  };
  return out;
}

/// Sum of squared error; scalar output.
template <typename Scalar>
VarT<Scalar> sse(const VarT<Scalar>& a, const VarT<Scalar>& b) {
  detail::require_same_shape("sse", a->value, b->value);
  TensorT<Scalar> v({1});
  v[0] = (a->value.array() - b->value.array()).square().sum();
  auto out = make_var(std::move(v), a->requires_grad || b->requires_grad);
  out->parents = {a, b};
  out->backward = [a, b](NodeT<Scalar>& n) {
    const Scalar c = Scalar(2) * n.grad[0];
    if (a->requires_grad) a->grad.array() += c * (a->value.array() - b->value.array());
    if (b->requires_grad) b->grad.array() -= c * (a->value.array() - b->value.array());
  };
  return out;
}

template <typename Scalar>
VarT<Scalar> reshape(const VarT<Scalar>& x, std::vector<int> shape) {
  auto out = make_var(x->value.reshaped(std::move(shape)), x->requires_grad);
  out->parents = {x};
  out->backward = [x](NodeT<Scalar>& n) {
    if (x->requires_grad) x->grad.array() += n.grad.array();
  };
  return out;
}

/// Backpropagate from a scalar loss. Gradients of every reachable node are
/// zeroed first, so repeated calls on reused leaves do not accumulate.
template <typename Scalar>
void backward(const VarT<Scalar>& loss) {
  if (loss->value.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                loss->value.shape_str());
  }
  // Iterative post-order DFS.
  std::vector<NodeT<Scalar>*> topo;
  std::unordered_set<const NodeT<Scalar>*> visited;
  struct Frame {
    NodeT<Scalar>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      NodeT<Scalar>* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }
  for (NodeT<Scalar>* n : topo) {
    if (!n->requires_grad) continue;
    if (n->grad.same_shape(n->value)) {
      n->grad.array().setZero();
    } else {
      n->grad = TensorT<Scalar>::zeros(n->value.shape());
    }
  }
  loss->grad = TensorT<Scalar>::full({1}, Scalar(1));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    NodeT<Scalar>* n = *it;
    if (n->requires_grad && n->backward) n->backward(*n);
  }
}

}  // namespace s2l
