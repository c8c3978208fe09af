#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "taperkit/errors.hpp"
#include "taperkit/rng.hpp"

namespace taperkit {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Dense row-major tensor over S (float in the model, double in gradient
// checking). Copies share storage; every op allocates a fresh output, so a
// value never changes after construction. When an input carries
// requires_grad, the op records a reverse-mode tape node; backward() walks
// the tape from a scalar root. Stored values are checked finite after every
// op -- NaN/Inf raises NumericError instead of propagating.
template <typename S>
class TensorT {
 public:
  struct Impl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<TensorT> parents;
    std::function<void(Impl&)> backward_fn;
  };

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), S(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(Shape shape, S value) {
    TensorT t = zeros(std::move(shape));
    for (auto& v : t.impl_->data) v = value;
    t.check_finite("full");
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ValidationError("from_data: shape " + shape_str(shape) + " does not match data length " +
                            std::to_string(data.size()));
    TensorT t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    t.check_finite("from_data");
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  // Negative axes count from the back.
  int64_t dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ValidationError("dim: axis out of range");
    return impl_->shape[static_cast<size_t>(i)];
  }

  std::vector<S>& values() { return impl_->data; }
  const std::vector<S>& values() const { return impl_->data; }

  S at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) throw ValidationError("at: index rank mismatch");
    const auto st = row_major_strides(impl_->shape);
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) off += i * st[d++];
    return impl_->data[static_cast<size_t>(off)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) {
    if (b && impl_->backward_fn) throw ValidationError("set_requires_grad: not a leaf");
    impl_->requires_grad = b;
  }

  std::vector<S>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), S(0));
    return impl_->grad;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() { impl_->grad.clear(); }

  // Reverse pass from a scalar root: topological order over the recorded
  // tape, then each node scatters into its parents' grad buffers.
  void backward() {
    if (numel() != 1) throw ValidationError("backward: root must be a scalar");
    if (!impl_->requires_grad) throw ValidationError("backward: root is not on the tape");
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    struct Frame {
      Impl* node;
      size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({impl_.get(), 0});
    visited.insert(impl_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        Impl* p = f.node->parents[f.next++].impl_.get();
        if (visited.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    grad()[0] = S(1);
    for (size_t i = order.size(); i-- > 0;) {
      Impl* node = order[i];
      if (node->backward_fn) {
        if (node->grad.empty()) node->grad.assign(node->data.size(), S(0));
        node->backward_fn(*node);
      }
    }
  }

  // Used by ops to build results that participate in the tape. The op name
  // only labels the finite check each op runs on its result.
  static TensorT make_op_result(Shape shape, std::vector<S> data, const char* op,
                                std::vector<TensorT> parents,
                                std::function<void(Impl&)> backward_fn) {
    (void)op;
    TensorT t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      t.impl_->requires_grad = true;
      t.impl_->parents = std::move(parents);
      t.impl_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

  static std::vector<S>& grad_of(TensorT& t) { return t.grad(); }

  void check_finite(const char* op) const {
    for (S v : impl_->data) {
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string(op) + ": produced a non-finite value");
    }
  }

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

// Strides of `shape` aligned to the trailing axes of `out`, with 0 on
// broadcast axes. Throws when the shapes are not broadcast-compatible.
inline std::vector<int64_t> broadcast_strides(const Shape& out, const Shape& shape) {
  const auto base = row_major_strides(shape);
  std::vector<int64_t> st(out.size(), 0);
  const size_t off = out.size() - shape.size();
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == out[off + i]) {
      st[off + i] = base[i];
    } else if (shape[i] == 1) {
      st[off + i] = 0;
    } else {
      throw ValidationError("broadcast: cannot map " + shape_str(shape) + " onto " + shape_str(out));
    }
  }
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ValidationError("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Walk every element of `shape`, passing (flat_index, strided_offset).
template <typename F>
void for_each_strided(const Shape& shape, const std::vector<int64_t>& strides, F&& f) {
  const int64_t n = shape_numel(shape);
  const int r = static_cast<int>(shape.size());
  std::vector<int64_t> idx(shape.size(), 0);
  int64_t off = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    f(flat, off);
    for (int d = r - 1; d >= 0; --d) {
      idx[d]++;
      off += strides[d];
      if (idx[d] < shape[d]) break;
      idx[d] = 0;
      off -= strides[d] * shape[d];
    }
  }
}

// As above but tracking two strided offsets at once.
template <typename F>
void for_each_strided2(const Shape& shape, const std::vector<int64_t>& sa,
                       const std::vector<int64_t>& sb, F&& f) {
  const int64_t n = shape_numel(shape);
  const int r = static_cast<int>(shape.size());
  std::vector<int64_t> idx(shape.size(), 0);
  int64_t offa = 0, offb = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    f(flat, offa, offb);
    for (int d = r - 1; d >= 0; --d) {
      idx[d]++;
      offa += sa[d];
      offb += sb[d];
      if (idx[d] < shape[d]) break;
      idx[d] = 0;
      offa -= sa[d] * shape[d];
      offb -= sb[d] * shape[d];
    }
  }
}

// Accumulate `src` (laid out as `out_shape`) into a buffer of shape
// `target`, summing over broadcast axes. Inverse of broadcasting.
template <typename S>
void reduce_into(const Shape& out_shape, const std::vector<S>& src, const Shape& target,
                 std::vector<S>& dst) {
  const auto st = broadcast_strides(out_shape, target);
  for_each_strided(out_shape, st, [&](int64_t flat, int64_t off) {
    dst[static_cast<size_t>(off)] += src[static_cast<size_t>(flat)];
  });
}

// c[m,n] = a[m,k] * b[k,n]; c must be zeroed. i-k-j order keeps the inner
// loop contiguous for vectorization.
template <typename S>
void mm_nn(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
template <typename S>
void mm_nt_acc(S* da, const S* dc, const S* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* dcrow = dc + i * n;
    S* darow = da + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const S* brow = b + p * n;
      S acc = S(0);
      for (int64_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
template <typename S>
void mm_tn_acc(S* db, const S* a, const S* dc, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* dcrow = dc + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      S* dbrow = db + p * n;
      for (int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  using Impl = typename TensorT<S>::Impl;
  const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
  const int64_t n = shape_numel(out_shape);
  std::vector<S> out(static_cast<size_t>(n));
  if (a.shape() == b.shape()) {
    const auto& av = a.values();
    const auto& bv = b.values();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  } else {
    const auto sa = detail::broadcast_strides(out_shape, a.shape());
    const auto sb = detail::broadcast_strides(out_shape, b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    detail::for_each_strided2(out_shape, sa, sb, [&](int64_t flat, int64_t oa, int64_t ob) {
      out[static_cast<size_t>(flat)] = av[static_cast<size_t>(oa)] + bv[static_cast<size_t>(ob)];
    });
  }
  auto backward = [out_shape](Impl& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa.requires_grad()) detail::reduce_into(out_shape, self.grad, pa.shape(), pa.grad());
    if (pb.requires_grad()) detail::reduce_into(out_shape, self.grad, pb.shape(), pb.grad());
  };
  auto t = TensorT<S>::make_op_result(out_shape, std::move(out), "add", {a, b}, backward);
  t.check_finite("add");
  return t;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  using Impl = typename TensorT<S>::Impl;
  const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
  const int64_t n = shape_numel(out_shape);
  std::vector<S> out(static_cast<size_t>(n));
  const auto sa = detail::broadcast_strides(out_shape, a.shape());
  const auto sb = detail::broadcast_strides(out_shape, b.shape());
  {
    const auto& av = a.values();
    const auto& bv = b.values();
    detail::for_each_strided2(out_shape, sa, sb, [&](int64_t flat, int64_t oa, int64_t ob) {
      out[static_cast<size_t>(flat)] = av[static_cast<size_t>(oa)] * bv[static_cast<size_t>(ob)];
    });
  }
  auto backward = [out_shape, sa, sb](Impl& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa.requires_grad()) {
      auto& ga = pa.grad();
      const auto& bv = pb.values();
      detail::for_each_strided2(out_shape, sa, sb, [&](int64_t flat, int64_t oa, int64_t ob) {
        ga[static_cast<size_t>(oa)] += self.grad[static_cast<size_t>(flat)] * bv[static_cast<size_t>(ob)];
      });
    }
    if (pb.requires_grad()) {
      auto& gb = pb.grad();
      const auto& av = pa.values();
      detail::for_each_strided2(out_shape, sa, sb, [&](int64_t flat, int64_t oa, int64_t ob) {
        gb[static_cast<size_t>(ob)] += self.grad[static_cast<size_t>(flat)] * av[static_cast<size_t>(oa)];
      });
    }
  };
  auto t = TensorT<S>::make_op_result(out_shape, std::move(out), "mul", {a, b}, backward);
  t.check_finite("mul");
  return t;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  using Impl = typename TensorT<S>::Impl;
  std::vector<S> out(a.values());
  for (auto& v : out) v *= factor;
  auto backward = [factor](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  };
  auto t = TensorT<S>::make_op_result(a.shape(), std::move(out), "scale", {a}, backward);
  t.check_finite("scale");
  return t;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return add(a, scale(b, S(-1)));
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& a) {
  using Impl = typename TensorT<S>::Impl;
  double acc = 0.0;
  for (S v : a.values()) acc += static_cast<double>(v);
  auto backward = [](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    const S gout = self.grad[0];
    for (auto& v : g) v += gout;
  };
  auto t = TensorT<S>::make_op_result({1}, {static_cast<S>(acc)}, "sum_all", {a}, backward);
  t.check_finite("sum_all");
  return t;
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape new_shape) {
  using Impl = typename TensorT<S>::Impl;
  if (shape_numel(new_shape) != a.numel())
    throw ValidationError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                          shape_str(new_shape));
  auto backward = [](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  };
  return TensorT<S>::make_op_result(std::move(new_shape), std::vector<S>(a.values()), "reshape", {a},
                                    backward);
}

// Swap two axes (copying).
template <typename S>
TensorT<S> transpose(const TensorT<S>& a, int axis0, int axis1) {
  using Impl = typename TensorT<S>::Impl;
  const int r = a.rank();
  if (axis0 < 0) axis0 += r;
  if (axis1 < 0) axis1 += r;
  if (axis0 < 0 || axis0 >= r || axis1 < 0 || axis1 >= r)
    throw ValidationError("transpose: axis out of range");
  Shape out_shape = a.shape();
  std::swap(out_shape[axis0], out_shape[axis1]);
  const auto in_strides = row_major_strides(a.shape());
  std::vector<int64_t> walk = in_strides;
  std::swap(walk[axis0], walk[axis1]);  // source strides in output order
  std::vector<S> out(a.values().size());
  {
    const auto& av = a.values();
    detail::for_each_strided(out_shape, walk, [&](int64_t flat, int64_t off) {
      out[static_cast<size_t>(flat)] = av[static_cast<size_t>(off)];
    });
  }
  auto backward = [out_shape, walk](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    detail::for_each_strided(out_shape, walk, [&](int64_t flat, int64_t off) {
      g[static_cast<size_t>(off)] += self.grad[static_cast<size_t>(flat)];
    });
  };
  return TensorT<S>::make_op_result(std::move(out_shape), std::move(out), "transpose", {a}, backward);
}

// ---------------------------------------------------------------------------
// matmul: a [..., m, k] x b [..., k, n]. Leading axes must match exactly, or
// b may be rank-2 and is then shared across every leading index of a.
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  using Impl = typename TensorT<S>::Impl;
  if (a.rank() < 2 || b.rank() < 2) throw ValidationError("matmul: operands must have rank >= 2");
  const int64_t m = a.dim(-2), k = a.dim(-1);
  const int64_t kb = b.dim(-2), n = b.dim(-1);
  if (k != kb)
    throw ValidationError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  const bool b_shared = b.rank() == 2;
  if (!b_shared && !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin(),
                               b.shape().end() - 2))
    throw ValidationError("matmul: leading extents differ, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  const int64_t batch = shape_numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<S> out(static_cast<size_t>(batch * m * n), S(0));
  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    for (int64_t t = 0; t < batch; ++t)
      detail::mm_nn(out.data() + t * m * n, pa + t * m * k, b_shared ? pb : pb + t * k * n, m, k, n);
  }
  auto backward = [batch, m, k, n, b_shared](Impl& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const S* dc = self.grad.data();
    if (pa.requires_grad()) {
      S* da = pa.grad().data();
      const S* bv = pb.values().data();
      for (int64_t t = 0; t < batch; ++t)
        detail::mm_nt_acc(da + t * m * k, dc + t * m * n, b_shared ? bv : bv + t * k * n, m, k, n);
    }
    if (pb.requires_grad()) {
      S* db = pb.grad().data();
      const S* av = pa.values().data();
      for (int64_t t = 0; t < batch; ++t)
        detail::mm_tn_acc(b_shared ? db : db + t * k * n, av + t * m * k, dc + t * m * n, m, k, n);
    }
  };
  auto t = TensorT<S>::make_op_result(std::move(out_shape), std::move(out), "matmul", {a, b}, backward);
  t.check_finite("matmul");
  return t;
}

// ---------------------------------------------------------------------------
// softmax over the last axis, stabilized by max subtraction.
template <typename S>
TensorT<S> softmax_lastdim(const TensorT<S>& x) {
  using Impl = typename TensorT<S>::Impl;
  if (x.rank() < 1 || x.dim(-1) < 1) throw ValidationError("softmax_lastdim: empty last axis");
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / d;
  std::vector<S> out(x.values().size());
  const auto& xv = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = xv.data() + r * d;
    S* orow = out.data() + r * d;
    S mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const S e = std::exp(row[j] - mx);
      orow[j] = e;
      denom += static_cast<double>(e);
    }
    const S inv = static_cast<S>(1.0 / denom);
    for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  auto backward = [rows, d](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    for (int64_t r = 0; r < rows; ++r) {
      const S* y = self.data.data() + r * d;
      const S* dy = self.grad.data() + r * d;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += static_cast<double>(dy[j]) * y[j];
      const S dots = static_cast<S>(dot);
      S* gr = g.data() + r * d;
      for (int64_t j = 0; j < d; ++j) gr[j] += y[j] * (dy[j] - dots);
    }
  };
  auto t = TensorT<S>::make_op_result(x.shape(), std::move(out), "softmax", {x}, backward);
  t.check_finite("softmax_lastdim");
  return t;
}

// ---------------------------------------------------------------------------
// layer norm over the last axis, biased variance (1/N), then affine.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5)) {
  using Impl = typename TensorT<S>::Impl;
  const int64_t d = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw ValidationError("layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
  const int64_t rows = x.numel() / d;
  std::vector<S> out(x.values().size());
  auto xhat = std::make_shared<std::vector<S>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int64_t r = 0; r < rows; ++r) {
    const S* row = xv.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    (*inv_std)[r] = istd;
    S* xh = xhat->data() + r * d;
    S* orow = out.data() + r * d;
    const S meanS = static_cast<S>(mean);
    for (int64_t j = 0; j < d; ++j) {
      xh[j] = (row[j] - meanS) * istd;
      orow[j] = xh[j] * gv[j] + bv[j];
    }
  }
  auto backward = [rows, d, xhat, inv_std](Impl& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const auto& gv = pg.values();
    if (pg.requires_grad()) {
      auto& gg = pg.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const S* dy = self.grad.data() + r * d;
        const S* xh = xhat->data() + r * d;
        for (int64_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
      }
    }
    if (pb.requires_grad()) {
      auto& gb = pb.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const S* dy = self.grad.data() + r * d;
        for (int64_t j = 0; j < d; ++j) gb[j] += dy[j];
      }
    }
    if (px.requires_grad()) {
      auto& gx = px.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const S* dy = self.grad.data() + r * d;
        const S* xh = xhat->data() + r * d;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double dxh = static_cast<double>(dy[j]) * gv[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const S istd = (*inv_std)[r];
        S* gr = gx.data() + r * d;
        for (int64_t j = 0; j < d; ++j) {
          const double dxh = static_cast<double>(dy[j]) * gv[j];
          gr[j] += static_cast<S>((dxh - mean_dxhat - xh[j] * mean_dxhat_xhat) * istd);
        }
      }
    }
  };
  auto t = TensorT<S>::make_op_result(x.shape(), std::move(out), "layer_norm", {x, gamma, beta}, backward);
  t.check_finite("layer_norm");
  return t;
}

// ---------------------------------------------------------------------------
// Exact GELU: x * Phi(x) with Phi the Gaussian CDF.
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
  using Impl = typename TensorT<S>::Impl;
  const S inv_sqrt2 = static_cast<S>(0.70710678118654752440);
  std::vector<S> out(x.values().size());
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) {
    const S phi = S(0.5) * (S(1) + std::erf(xv[i] * inv_sqrt2));
    out[i] = xv[i] * phi;
  }
  auto backward = [inv_sqrt2](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    const auto& xv = pa.values();
    const S inv_sqrt_2pi = static_cast<S>(0.39894228040143267794);
    for (size_t i = 0; i < g.size(); ++i) {
      const S xi = xv[i];
      const S phi = S(0.5) * (S(1) + std::erf(xi * inv_sqrt2));
      const S pdf = inv_sqrt_2pi * std::exp(S(-0.5) * xi * xi);
      g[i] += self.grad[i] * (phi + xi * pdf);
    }
  };
  auto t = TensorT<S>::make_op_result(x.shape(), std::move(out), "gelu", {x}, backward);
  t.check_finite("gelu");
  return t;
}

// ---------------------------------------------------------------------------
// Inverted dropout. Inference mode returns the input tensor itself, so the
// identity is bit-exact and consumes no randomness.
template <typename S>
TensorT<S> dropout(const TensorT<S>& x, double p, Rng& rng, bool training) {
  using Impl = typename TensorT<S>::Impl;
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout: p must be in [0, 1)");
  if (!training) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<uint8_t>>(x.values().size());
  std::vector<S> out(x.values().size());
  const auto& xv = x.values();
  for (size_t i = 0; i < out.size(); ++i) {
    const bool keep = rng.uniform() >= p;
    (*mask)[i] = keep;
    out[i] = keep ? xv[i] * keep_scale : S(0);
  }
  auto backward = [mask, keep_scale](Impl& self) {
    auto& pa = self.parents[0];
    if (!pa.requires_grad()) return;
    auto& g = pa.grad();
    for (size_t i = 0; i < g.size(); ++i)
      if ((*mask)[i]) g[i] += self.grad[i] * keep_scale;
  };
  auto t = TensorT<S>::make_op_result(x.shape(), std::move(out), "dropout", {x}, backward);
  t.check_finite("dropout");
  return t;
}

// Fraction of elements kept by the dropout mask, measured against the input.
template <typename S>
double dropout_kept_fraction(const TensorT<S>& x, const TensorT<S>& dropped) {
  int64_t kept = 0;
  for (size_t i = 0; i < x.values().size(); ++i)
    if (dropped.values()[i] != S(0) || x.values()[i] == S(0)) kept++;
  return static_cast<double>(kept) / static_cast<double>(x.numel());
}

// ---------------------------------------------------------------------------
// Embedding lookup: rows of `table` [V, d] gathered by ids; output shape is
// id_shape + [d].
template <typename S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int32_t>& ids, Shape id_shape) {
  using Impl = typename TensorT<S>::Impl;
  if (table.rank() != 2) throw ValidationError("embedding: table must be rank 2");
  if (shape_numel(id_shape) != static_cast<int64_t>(ids.size()))
    throw ValidationError("embedding: id shape does not match id count");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw ValidationError("embedding: id " + std::to_string(id) + " outside table of " +
                            std::to_string(v) + " rows");
  Shape out_shape = id_shape;
  out_shape.push_back(d);
  std::vector<S> out(static_cast<size_t>(ids.size()) * d);
  const auto& tv = table.values();
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<int64_t>(ids[i]) * d, d, out.data() + i * d);
  auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
  auto backward = [ids_copy, d](Impl& self) {
    auto& pt = self.parents[0];
    if (!pt.requires_grad()) return;
    auto& g = pt.grad();
    for (size_t i = 0; i < ids_copy->size(); ++i) {
      const S* src = self.grad.data() + i * d;
      S* dst = g.data() + static_cast<int64_t>((*ids_copy)[i]) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  };
  return TensorT<S>::make_op_result(std::move(out_shape), std::move(out), "embedding", {table}, backward);
}

// ---------------------------------------------------------------------------
// Mean negative log-likelihood over selected rows of `logits` [rows, V]
// (flattened view). Log-softmax is fused; the sum is accumulated in double.
template <typename S>
TensorT<S> masked_cross_entropy(const TensorT<S>& logits, const std::vector<int64_t>& rows,
                                const std::vector<int32_t>& labels) {
  using Impl = typename TensorT<S>::Impl;
  if (rows.size() != labels.size()) throw ValidationError("masked_cross_entropy: rows/labels mismatch");
  if (rows.empty()) throw ValidationError("masked_cross_entropy: no positions selected");
  const int64_t v = logits.dim(-1);
  const int64_t nrows = logits.numel() / v;
  const auto& lv = logits.values();
  double total = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    const int64_t r = rows[i];
    if (r < 0 || r >= nrows) throw ValidationError("masked_cross_entropy: row index out of range");
    if (labels[i] < 0 || labels[i] >= v) throw ValidationError("masked_cross_entropy: label out of range");
    const S* row = lv.data() + r * v;
    S mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(denom) + static_cast<double>(mx) - static_cast<double>(row[labels[i]]);
  }
  const double mean = total / static_cast<double>(rows.size());
  auto rows_copy = std::make_shared<std::vector<int64_t>>(rows);
  auto labels_copy = std::make_shared<std::vector<int32_t>>(labels);
  auto backward = [rows_copy, labels_copy, v](Impl& self) {
    auto& pl = self.parents[0];
    if (!pl.requires_grad()) return;
    auto& g = pl.grad();
    const auto& lv = pl.values();
    const S gscale = self.grad[0] / static_cast<S>(rows_copy->size());
    for (size_t i = 0; i < rows_copy->size(); ++i) {
      const int64_t r = (*rows_copy)[i];
      const S* row = lv.data() + r * v;
      S* gr = g.data() + r * v;
      S mx = row[0];
      for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
      const double inv = 1.0 / denom;
      for (int64_t j = 0; j < v; ++j) {
        const S p = static_cast<S>(std::exp(static_cast<double>(row[j] - mx)) * inv);
        gr[j] += gscale * (p - S(j == (*labels_copy)[i] ? 1 : 0));
      }
    }
  };
  auto t = TensorT<S>::make_op_result({1}, {static_cast<S>(mean)}, "masked_cross_entropy",
                                      {logits}, backward);
  t.check_finite("masked_cross_entropy");
  return t;
}

// Forward-only NLL sum over selected rows, in double, for evaluation.
template <typename S>
double masked_nll_sum(const TensorT<S>& logits, const std::vector<int64_t>& rows,
                      const std::vector<int32_t>& labels) {
  const int64_t v = logits.dim(-1);
  const auto& lv = logits.values();
  double total = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    const S* row = lv.data() + rows[i] * v;
    S mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(denom) + static_cast<double>(mx) - static_cast<double>(row[labels[i]]);
  }
  return total;
}

// Widen or narrow scalar type, e.g. for 64-bit verification runs.
template <typename T, typename F>
TensorT<T> cast_tensor(const TensorT<F>& x) {
  std::vector<T> data(x.values().size());
  for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(x.values()[i]);
  return TensorT<T>::from_data(x.shape(), std::move(data));
}

}  // namespace taperkit
