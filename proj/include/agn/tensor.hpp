#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "agn/common.hpp"

namespace agn {

// One vertex of the computation graph. Value storage plus the rule that
// pushes an upstream gradient into the parents.
template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily; empty means "all zeros so far"
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Shared handle to a graph node. Copies alias the same storage, so a
// parameter held by a layer and by the ParamStore is one tensor.
template <typename S>
class TensorT {
 public:
  using Node = TensorNode<S>;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static TensorT zeros(Shape shape) { return full(std::move(shape), S(0)); }

  static TensorT full(Shape shape, S fill) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (n->shape.empty()) throw ShapeError("tensor rank must be >= 1");
    n->value.assign(agn::numel(n->shape), fill);
    return TensorT(std::move(n));
  }

  static TensorT from_data(Shape shape, std::vector<S> data) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (n->shape.empty()) throw ShapeError("tensor rank must be >= 1");
    if (agn::numel(n->shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not fill shape " + shape_str(n->shape));
    }
    n->value = std::move(data);
    return TensorT(std::move(n));
  }

  static TensorT scalar(S v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t numel() const { return node_->size(); }

  std::vector<S>& data() { return node_->value; }
  const std::vector<S>& data() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty()) throw ContractError("gradient not populated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

  S item() const {
    if (numel() != 1) throw ContractError("item() requires a single-element tensor");
    return node_->value[0];
  }

  S at(const Shape& idx) const {
    const Shape st = strides_of(shape());
    if (idx.size() != st.size()) throw ShapeError("index rank mismatch");
    std::int64_t flat = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= shape()[i]) throw ShapeError("index out of bounds");
      flat += idx[i] * st[i];
    }
    return node_->value[flat];
  }

  // Deep copy detached from the graph.
  TensorT clone() const {
    return from_data(shape(), data());
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = std::move(shape);
  n->value.assign(numel(n->shape), S(0));
  return n;
}

// Attach graph edges only when some input needs gradients.
template <typename S>
void wire(const std::shared_ptr<TensorNode<S>>& out,
          std::vector<std::shared_ptr<TensorNode<S>>> parents,
          std::function<void(TensorNode<S>&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (!rg) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward_fn = std::move(backward_fn);
}

// Broadcasting is limited to size-1 axes on tensors of equal rank.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw ShapeError("broadcast rank mismatch: " + shape_str(a) + " vs " + shape_str(b));
  }
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1) {
      out[i] = std::max(a[i], b[i]);
    } else {
      throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

// Walk the output index space of `shape`, calling fn(out_flat, a_flat, b_flat)
// where the input flat indices use stride 0 along broadcast axes.
template <typename Fn>
void for_each_broadcast(const Shape& shape, const Shape& a_shape, const Shape& b_shape,
                        Fn&& fn) {
  const std::int64_t total = numel(shape);
  const std::size_t rank = shape.size();
  const Shape sa_full = strides_of(a_shape);
  const Shape sb_full = strides_of(b_shape);
  Shape sa(rank), sb(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    sa[i] = (a_shape[i] == 1 && shape[i] != 1) ? 0 : sa_full[i];
    sb[i] = (b_shape[i] == 1 && shape[i] != 1) ? 0 : sb_full[i];
  }
  Shape idx(rank, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::int64_t ax = static_cast<std::int64_t>(rank) - 1; ax >= 0; --ax) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < shape[ax]) break;
      ia -= sa[ax] * shape[ax];
      ib -= sb[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

template <typename S>
TensorT<S> binary_op(const TensorT<S>& a, const TensorT<S>& b,
                     S (*fwd)(S, S), S (*dfda)(S, S), S (*dfdb)(S, S)) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto out = make_node<S>(out_shape);
  auto an = a.node(), bn = b.node();
  for_each_broadcast(out_shape, an->shape, bn->shape,
                     [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                       out->value[o] = fwd(an->value[ia], bn->value[ib]);
                     });
  wire<S>(out, {an, bn}, [an, bn, out_shape, dfda, dfdb](TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for_each_broadcast(out_shape, an->shape, bn->shape,
                       [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                         const S g = self.grad[o];
                         if (an->requires_grad)
                           an->grad[ia] += g * dfda(an->value[ia], bn->value[ib]);
                         if (bn->requires_grad)
                           bn->grad[ib] += g * dfdb(an->value[ia], bn->value[ib]);
                       });
  });
  return TensorT<S>(out);
}

template <typename S>
TensorT<S> unary_op(const TensorT<S>& a, S (*fwd)(S), S (*dfdx)(S)) {
  auto an = a.node();
  auto out = make_node<S>(an->shape);
  for (std::int64_t i = 0; i < an->size(); ++i) out->value[i] = fwd(an->value[i]);
  wire<S>(out, {an}, [an, dfdx](TensorNode<S>& self) {
    an->ensure_grad();
    for (std::int64_t i = 0; i < an->size(); ++i) {
      an->grad[i] += self.grad[i] * dfdx(an->value[i]);
    }
  });
  return TensorT<S>(out);
}

}  // namespace detail

// ---- elementwise ----

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op<S>(
      a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op<S>(
      a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return detail::binary_op<S>(
      a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  return detail::unary_op<S>(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x) { return x > S(0) ? S(1) : S(0); });
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  auto an = a.node();
  auto out = detail::make_node<S>(an->shape);
  for (std::int64_t i = 0; i < an->size(); ++i) {
    const S x = an->value[i];
    out->value[i] = x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                              : std::exp(x) / (S(1) + std::exp(x));
  }
  detail::wire<S>(out, {an}, [an](TensorNode<S>& self) {
    an->ensure_grad();
    for (std::int64_t i = 0; i < an->size(); ++i) {
      const S s = self.value[i];
      an->grad[i] += self.grad[i] * s * (S(1) - s);
    }
  });
  return TensorT<S>(out);
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  auto an = a.node();
  auto out = detail::make_node<S>(an->shape);
  for (std::int64_t i = 0; i < an->size(); ++i) out->value[i] = an->value[i] * factor;
  detail::wire<S>(out, {an}, [an, factor](TensorNode<S>& self) {
    an->ensure_grad();
    for (std::int64_t i = 0; i < an->size(); ++i) an->grad[i] += self.grad[i] * factor;
  });
  return TensorT<S>(out);
}

// ---- matmul ----

// [M x K] * [K x P], or batched [B x M x K] * [B x K x P].
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool batched = as.size() == 3;
  if (!((as.size() == 2 && bs.size() == 2) || (as.size() == 3 && bs.size() == 3))) {
    throw ShapeError("matmul expects two 2-d or two 3-d tensors, got " +
                     shape_str(as) + " and " + shape_str(bs));
  }
  const std::int64_t B = batched ? as[0] : 1;
  const std::int64_t M = as[batched ? 1 : 0];
  const std::int64_t K = as[batched ? 2 : 1];
  const std::int64_t Kb = bs[batched ? 1 : 0];
  const std::int64_t P = bs[batched ? 2 : 1];
  if (K != Kb || (batched && bs[0] != B)) {
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(as) + " vs " +
                     shape_str(bs));
  }
  Shape out_shape = batched ? Shape{B, M, P} : Shape{M, P};
  auto out = detail::make_node<S>(out_shape);
  auto an = a.node(), bn = b.node();
  for (std::int64_t batch = 0; batch < B; ++batch) {
    const S* pa = an->value.data() + batch * M * K;
    const S* pb = bn->value.data() + batch * K * P;
    S* po = out->value.data() + batch * M * P;
    for (std::int64_t m = 0; m < M; ++m) {
      for (std::int64_t k = 0; k < K; ++k) {
        const S av = pa[m * K + k];
        for (std::int64_t p = 0; p < P; ++p) po[m * P + p] += av * pb[k * P + p];
      }
    }
  }
  detail::wire<S>(out, {an, bn}, [an, bn, B, M, K, P](TensorNode<S>& self) {
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (std::int64_t batch = 0; batch < B; ++batch) {
      const S* pa = an->value.data() + batch * M * K;
      const S* pb = bn->value.data() + batch * K * P;
      const S* pg = self.grad.data() + batch * M * P;
      for (std::int64_t m = 0; m < M; ++m) {
        for (std::int64_t p = 0; p < P; ++p) {
          const S g = pg[m * P + p];
          if (g == S(0)) continue;
          for (std::int64_t k = 0; k < K; ++k) {
            if (an->requires_grad)
              an->grad[batch * M * K + m * K + k] += g * pb[k * P + p];
            if (bn->requires_grad)
              bn->grad[batch * K * P + k * P + p] += g * pa[m * K + k];
          }
        }
      }
    }
  });
  return TensorT<S>(out);
}

// ---- structural ----

template <typename S>
TensorT<S> transpose(const TensorT<S>& a, const std::vector<std::int64_t>& perm) {
  auto an = a.node();
  const std::size_t rank = an->shape.size();
  if (perm.size() != rank) throw ShapeError("transpose permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (auto p : perm) {
    if (p < 0 || p >= static_cast<std::int64_t>(rank) || seen[p]) {
      throw ShapeError("transpose permutation invalid for " + shape_str(an->shape));
    }
    seen[p] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = an->shape[perm[i]];
  auto out = detail::make_node<S>(out_shape);

  const Shape a_strides = strides_of(an->shape);
  Shape walk(rank);  // stride in `a` while walking the output index space
  for (std::size_t i = 0; i < rank; ++i) walk[i] = a_strides[perm[i]];
  const std::int64_t total = numel(out_shape);
  std::vector<std::int64_t> src(total);
  {
    Shape idx(rank, 0);
    std::int64_t ia = 0;
    for (std::int64_t o = 0; o < total; ++o) {
      src[o] = ia;
      for (std::int64_t ax = static_cast<std::int64_t>(rank) - 1; ax >= 0; --ax) {
        ++idx[ax];
        ia += walk[ax];
        if (idx[ax] < out_shape[ax]) break;
        ia -= walk[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }
  for (std::int64_t o = 0; o < total; ++o) out->value[o] = an->value[src[o]];
  detail::wire<S>(out, {an}, [an, src](TensorNode<S>& self) {
    an->ensure_grad();
    for (std::size_t o = 0; o < src.size(); ++o) an->grad[src[o]] += self.grad[o];
  });
  return TensorT<S>(out);
}

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape new_shape) {
  auto an = a.node();
  if (numel(new_shape) != an->size()) {
    throw ShapeError("reshape " + shape_str(an->shape) + " -> " + shape_str(new_shape) +
                     " changes element count");
  }
  auto out = detail::make_node<S>(std::move(new_shape));
  out->value = an->value;
  detail::wire<S>(out, {an}, [an](TensorNode<S>& self) {
    an->ensure_grad();
    for (std::int64_t i = 0; i < an->size(); ++i) an->grad[i] += self.grad[i];
  });
  return TensorT<S>(out);
}

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  const std::int64_t rank = static_cast<std::int64_t>(first.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<std::int64_t>(s.size()) != rank) {
      throw ShapeError("concat rank mismatch: " + shape_str(first) + " vs " + shape_str(s));
    }
    for (std::int64_t i = 0; i < rank; ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat shapes disagree off-axis: " + shape_str(first) +
                         " vs " + shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  auto out = detail::make_node<S>(out_shape);

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];

  std::vector<std::shared_ptr<TensorNode<S>>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());

  std::int64_t offset = 0;
  for (const auto& n : nodes) {
    const std::int64_t ext = n->shape[axis];
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(n->value.data() + o * ext * inner, ext * inner,
                  out->value.data() + (o * out_shape[axis] + offset) * inner);
    }
    offset += ext;
  }
  const std::int64_t out_ext = out_shape[axis];
  std::vector<std::int64_t> extents;
  extents.reserve(nodes.size());
  for (const auto& n : nodes) extents.push_back(n->shape[axis]);
  detail::wire<S>(out, nodes, [nodes, extents, outer, inner, out_ext](TensorNode<S>& self) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const auto& n = nodes[k];
      const std::int64_t ext = extents[k];
      if (n->requires_grad) {
        n->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* g = self.grad.data() + (o * out_ext + off) * inner;
          S* dst = n->grad.data() + o * ext * inner;
          for (std::int64_t i = 0; i < ext * inner; ++i) dst[i] += g[i];
        }
      }
      off += ext;
    }
  });
  return TensorT<S>(out);
}

// Contiguous sub-range along one axis.
template <typename S>
TensorT<S> slice(const TensorT<S>& a, std::int64_t axis, std::int64_t start,
                 std::int64_t length) {
  auto an = a.node();
  const std::int64_t rank = static_cast<std::int64_t>(an->shape.size());
  if (axis < 0 || axis >= rank) throw ShapeError("slice axis out of range");
  if (start < 0 || length < 1 || start + length > an->shape[axis]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of range for " +
                     shape_str(an->shape));
  }
  Shape out_shape = an->shape;
  out_shape[axis] = length;
  auto out = detail::make_node<S>(out_shape);

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= an->shape[i];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= an->shape[i];
  const std::int64_t src_ext = an->shape[axis];

  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(an->value.data() + (o * src_ext + start) * inner, length * inner,
                out->value.data() + o * length * inner);
  }
  detail::wire<S>(out, {an}, [an, outer, inner, src_ext, start, length](TensorNode<S>& self) {
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      const S* g = self.grad.data() + o * length * inner;
      S* dst = an->grad.data() + (o * src_ext + start) * inner;
      for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += g[i];
    }
  });
  return TensorT<S>(out);
}

// Mean over the given axes. With keepdim the reduced axes stay as size 1,
// otherwise they are removed (a fully reduced tensor becomes shape [1]).
template <typename S>
TensorT<S> mean_over(const TensorT<S>& a, std::vector<std::int64_t> axes,
                     bool keepdim = false) {
  auto an = a.node();
  const std::int64_t rank = static_cast<std::int64_t>(an->shape.size());
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(rank, false);
  for (auto ax : axes) {
    if (ax < 0 || ax >= rank) throw ShapeError("mean_over axis out of range");
    reduced[ax] = true;
  }
  Shape keep_shape = an->shape;
  std::int64_t count = 1;
  for (auto ax : axes) {
    count *= an->shape[ax];
    keep_shape[ax] = 1;
  }
  auto out = detail::make_node<S>(keep_shape);

  const Shape keep_strides = strides_of(keep_shape);
  Shape walk(rank);
  for (std::int64_t i = 0; i < rank; ++i) walk[i] = reduced[i] ? 0 : keep_strides[i];

  const std::int64_t total = an->size();
  const S inv = S(1) / S(count);
  {
    Shape idx(rank, 0);
    std::int64_t io = 0;
    for (std::int64_t i = 0; i < total; ++i) {
      out->value[io] += an->value[i] * inv;
      for (std::int64_t ax = rank - 1; ax >= 0; --ax) {
        ++idx[ax];
        io += walk[ax];
        if (idx[ax] < an->shape[ax]) break;
        io -= walk[ax] * an->shape[ax];
        idx[ax] = 0;
      }
    }
  }
  const Shape a_shape = an->shape;
  detail::wire<S>(out, {an}, [an, walk, inv, a_shape](TensorNode<S>& self) {
    an->ensure_grad();
    const std::int64_t rank2 = static_cast<std::int64_t>(a_shape.size());
    Shape idx(rank2, 0);
    std::int64_t io = 0;
    for (std::int64_t i = 0; i < an->size(); ++i) {
      an->grad[i] += self.grad[io] * inv;
      for (std::int64_t ax = rank2 - 1; ax >= 0; --ax) {
        ++idx[ax];
        io += walk[ax];
        if (idx[ax] < a_shape[ax]) break;
        io -= walk[ax] * a_shape[ax];
        idx[ax] = 0;
      }
    }
  });
  TensorT<S> result(out);
  if (keepdim) return result;
  Shape dropped;
  for (std::int64_t i = 0; i < rank; ++i) {
    if (!reduced[i]) dropped.push_back(an->shape[i]);
  }
  if (dropped.empty()) dropped = {1};
  return reshape(result, dropped);
}

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  auto an = a.node();
  auto out = detail::make_node<S>(Shape{1});
  S acc = 0;
  for (std::int64_t i = 0; i < an->size(); ++i) acc += an->value[i];
  out->value[0] = acc;
  detail::wire<S>(out, {an}, [an](TensorNode<S>& self) {
    an->ensure_grad();
    const S g = self.grad[0];
    for (std::int64_t i = 0; i < an->size(); ++i) an->grad[i] += g;
  });
  return TensorT<S>(out);
}

// ---- row softmax / row cosine ----

// Stabilised softmax along the rows of a 2-d tensor.
template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& m) {
  auto mn = m.node();
  if (mn->shape.size() != 2) {
    throw ShapeError("softmax_rows expects a 2-d tensor, got " + shape_str(mn->shape));
  }
  const std::int64_t R = mn->shape[0], C = mn->shape[1];
  auto out = detail::make_node<S>(mn->shape);
  for (std::int64_t r = 0; r < R; ++r) {
    const S* row = mn->value.data() + r * C;
    S* orow = out->value.data() + r * C;
    S mx = row[0];
    for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    S denom = 0;
    for (std::int64_t c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      denom += orow[c];
    }
    for (std::int64_t c = 0; c < C; ++c) orow[c] /= denom;
  }
  detail::wire<S>(out, {mn}, [mn, R, C](TensorNode<S>& self) {
    mn->ensure_grad();
    for (std::int64_t r = 0; r < R; ++r) {
      const S* y = self.value.data() + r * C;
      const S* g = self.grad.data() + r * C;
      S dot = 0;
      for (std::int64_t c = 0; c < C; ++c) dot += y[c] * g[c];
      for (std::int64_t c = 0; c < C; ++c) mn->grad[r * C + c] += y[c] * (g[c] - dot);
    }
  });
  return TensorT<S>(out);
}

namespace detail {
// Rows with norm below this are treated as directionless: similarity 0.
inline constexpr double kCosineNormEps = 1e-8;
}  // namespace detail

// Pairwise cosine similarity between the rows of an [N x D] matrix.
// Entries are clamped to [-1, 1]; rows with near-zero norm yield 0.
template <typename S>
TensorT<S> cosine_rows(const TensorT<S>& m) {
  auto mn = m.node();
  if (mn->shape.size() != 2) {
    throw ShapeError("cosine_rows expects a 2-d tensor, got " + shape_str(mn->shape));
  }
  const std::int64_t N = mn->shape[0], D = mn->shape[1];
  auto out = detail::make_node<S>(Shape{N, N});
  std::vector<S> norms(N);
  for (std::int64_t i = 0; i < N; ++i) {
    S s = 0;
    for (std::int64_t d = 0; d < D; ++d) {
      const S v = mn->value[i * D + d];
      s += v * v;
    }
    norms[i] = std::sqrt(s);
  }
  const S eps = S(detail::kCosineNormEps);
  for (std::int64_t i = 0; i < N; ++i) {
    for (std::int64_t j = 0; j < N; ++j) {
      if (norms[i] < eps || norms[j] < eps) {
        out->value[i * N + j] = 0;
        continue;
      }
      S dot = 0;
      for (std::int64_t d = 0; d < D; ++d) {
        dot += mn->value[i * D + d] * mn->value[j * D + d];
      }
      S c = dot / (norms[i] * norms[j]);
      out->value[i * N + j] = std::clamp(c, S(-1), S(1));
    }
  }
  detail::wire<S>(out, {mn}, [mn, norms, N, D, eps](TensorNode<S>& self) {
    mn->ensure_grad();
    for (std::int64_t i = 0; i < N; ++i) {
      for (std::int64_t j = 0; j < N; ++j) {
        const S g = self.grad[i * N + j];
        if (g == S(0)) continue;
        if (norms[i] < eps || norms[j] < eps) continue;
        // At saturated entries (parallel rows, c == +-1) the analytic
        // gradient collapses to zero on its own, so no special case.
        const S c = self.value[i * N + j];
        const S inv_ij = S(1) / (norms[i] * norms[j]);
        const S inv_ii = S(1) / (norms[i] * norms[i]);
        const S inv_jj = S(1) / (norms[j] * norms[j]);
        for (std::int64_t d = 0; d < D; ++d) {
          const S ai = mn->value[i * D + d];
          const S aj = mn->value[j * D + d];
          mn->grad[i * D + d] += g * (aj * inv_ij - c * ai * inv_ii);
          mn->grad[j * D + d] += g * (ai * inv_ij - c * aj * inv_jj);
        }
      }
    }
  });
  return TensorT<S>(out);
}

// ---- tape / backward ----

// Topologically ordered record of the graph below a root: every node's
// parents appear earlier in the list.
template <typename S>
class TapeT {
 public:
  static TapeT record_from(const TensorT<S>& root) {
    TapeT tape;
    tape.root_ = root.node();
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::vector<std::pair<std::shared_ptr<TensorNode<S>>, std::size_t>> stack;
    std::unordered_set<const TensorNode<S>*> seen;
    stack.push_back({tape.root_, 0});
    seen.insert(tape.root_.get());
    while (!stack.empty()) {
      auto& [node, child] = stack.back();
      if (child < node->parents.size()) {
        auto p = node->parents[child];
        ++child;
        if (seen.insert(p.get()).second) stack.push_back({std::move(p), 0});
      } else {
        tape.nodes_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  // Seed d(root)/d(root) = 1 and sweep the tape in reverse. Gradients
  // accumulate additively; zeroing is the caller's job.
  void backward() {
    if (root_->size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          shape_str(root_->shape));
    }
    for (auto& n : nodes_) {
      if (n->requires_grad) n->ensure_grad();
    }
    root_->grad[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto& n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
  }

  const std::vector<std::shared_ptr<TensorNode<S>>>& nodes() const { return nodes_; }

 private:
  std::shared_ptr<TensorNode<S>> root_;
  std::vector<std::shared_ptr<TensorNode<S>>> nodes_;
};

template <typename S>
void backward(const TensorT<S>& loss) {
  TapeT<S>::record_from(loss).backward();
}

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace agn
