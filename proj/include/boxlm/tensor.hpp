#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "boxlm/rng.hpp"

namespace boxlm {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Additive mask value treated as "fully blocked". Finite so float arithmetic stays
// NaN-free; softmax detects rows where every entry is at or below this threshold.
constexpr double kMaskNegInf = -1e9;

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Thread-local switch: while disabled, ops build no graph (values only).
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled_flag()) { grad_enabled_flag() = false; }
  ~NoGradGuard() { grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Counter for softmax rows whose every input was fully masked (output zeroed).
inline int64_t& softmax_masked_row_count() {
  thread_local int64_t count = 0;
  return count;
}

template <class Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // allocated lazily; empty means "all zero"
  bool requires_grad = false;
  bool backward_done = false;  // set on a node consumed as a backward root
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates (+=) into parents' grads.
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return shape_numel(shape); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

// Value-semantics handle on a shared graph node.
template <class Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<Real>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), Real(0), requires_grad);
  }

  static Tensor filled(Shape shape, Real v, bool requires_grad = false) {
    auto n = std::make_shared<Node<Real>>();
    n->value.assign(static_cast<size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("data size " + std::to_string(data.size()) + " does not fill shape " +
                       shape_str(shape));
    auto n = std::make_shared<Node<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor randn(Shape shape, Rng& rng, Real stddev, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->value) v = static_cast<Real>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check()->shape; }
  int dim(int i) const { return check()->shape.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(check()->shape.size()); }
  int64_t numel() const { return check()->numel(); }
  bool requires_grad() const { return check()->requires_grad; }
  const char* op() const { return check()->op; }

  std::vector<Real>& value() { return check()->value; }
  const std::vector<Real>& value() const { return check()->value; }
  std::vector<Real>& grad() {
    check()->ensure_grad();
    return node_->grad;
  }
  const std::vector<Real>& grad() const {
    check()->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    check();
    std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    node_->backward_done = false;
  }

  Real at(int i) const { return check()->value.at(static_cast<size_t>(i)); }
  Real at(int i, int j) const {
    const auto& s = check()->shape;
    if (s.size() != 2) throw ShapeError("at(i,j) on tensor of shape " + shape_str(s));
    return node_->value.at(static_cast<size_t>(i) * s[1] + j);
  }
  Real& at(int i, int j) {
    const auto& s = check()->shape;
    if (s.size() != 2) throw ShapeError("at(i,j) on tensor of shape " + shape_str(s));
    return node_->value.at(static_cast<size_t>(i) * s[1] + j);
  }
  Real at(int i, int j, int k) const {
    const auto& s = check()->shape;
    if (s.size() != 3) throw ShapeError("at(i,j,k) on tensor of shape " + shape_str(s));
    return node_->value.at((static_cast<size_t>(i) * s[1] + j) * s[2] + k);
  }

  Real scalar() const {
    if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  std::shared_ptr<Node<Real>> node() const { return node_; }

 private:
  std::shared_ptr<Node<Real>> check() const {
    if (!node_) throw GraphError("operation on empty tensor");
    return node_;
  }
  std::shared_ptr<Node<Real>> node_;
};

namespace detail {

template <class Real>
Tensor<Real> make_op(Shape shape, const char* op, std::vector<Tensor<Real>> parents) {
  auto n = std::make_shared<Node<Real>>();
  n->value.assign(static_cast<size_t>(shape_numel(shape)), Real(0));
  n->shape = std::move(shape);
  n->op = op;
  if (grad_enabled_flag()) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node());
    }
  }
  return Tensor<Real>(std::move(n));
}

template <class Real>
void require_matrix(const Tensor<Real>& t, const char* who) {
  if (t.ndim() != 2)
    throw ShapeError(std::string(who) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <class Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* who) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(who) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
}

// Matmul kernels. All accumulate into C; callers zero C beforehand when needed.
// Four explicit accumulators let the compiler vectorize without -ffast-math.

// C[m,n] += A[m,k] * B[k,n]
template <class Real>
void mm_nn(const Real* A, const Real* B, Real* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* a = A + static_cast<size_t>(i) * k;
    Real* c = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      Real av = a[p];
      if (av == Real(0)) continue;
      const Real* b = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

template <class Real>
Real dot4(const Real* a, const Real* b, int k) {
  Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  int p = 0;
  for (; p + 4 <= k; p += 4) {
    s0 += a[p] * b[p];
    s1 += a[p + 1] * b[p + 1];
    s2 += a[p + 2] * b[p + 2];
    s3 += a[p + 3] * b[p + 3];
  }
  for (; p < k; ++p) s0 += a[p] * b[p];
  return ((s0 + s1) + (s2 + s3));
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class Real>
void mm_nt(const Real* A, const Real* B, Real* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* a = A + static_cast<size_t>(i) * k;
    Real* c = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) c[j] += dot4(a, B + static_cast<size_t>(j) * k, k);
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class Real>
void mm_tn(const Real* A, const Real* B, Real* C, int k, int m, int n) {
  for (int p = 0; p < k; ++p) {
    const Real* a = A + static_cast<size_t>(p) * m;
    const Real* b = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      Real av = a[i];
      if (av == Real(0)) continue;
      Real* c = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

// ---- elementwise and structural ops ----

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = detail::make_op<Real>(a.shape(), "add", {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<Real>& n) {
      for (int s = 0; s < 2; ++s) {
        auto& p = *n.parents[static_cast<size_t>(s)];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
      }
    };
  }
  return out;
}

// a[m,n] + bias[n] broadcast over rows. The only broadcast the engine supports.
template <class Real>
Tensor<Real> add_bias_row(const Tensor<Real>& a, const Tensor<Real>& bias) {
  detail::require_matrix(a, "add_bias_row");
  if (bias.ndim() != 1 || bias.dim(0) != a.dim(1))
    throw ShapeError("add_bias_row: bias " + shape_str(bias.shape()) + " does not match columns of " +
                     shape_str(a.shape()));
  auto out = detail::make_op<Real>(a.shape(), "add_bias_row", {a, bias});
  int m = a.dim(0), ncol = a.dim(1);
  const auto& av = a.value();
  const auto& bv = bias.value();
  auto& ov = out.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < ncol; ++j)
      ov[static_cast<size_t>(i) * ncol + j] = av[static_cast<size_t>(i) * ncol + j] + bv[static_cast<size_t>(j)];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, ncol](Node<Real>& n) {
      auto& pa = *n.parents[0];
      auto& pb = *n.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < ncol; ++j)
            pb.grad[static_cast<size_t>(j)] += n.grad[static_cast<size_t>(i) * ncol + j];
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = detail::make_op<Real>(a.shape(), "mul", {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<Real>& n) {
      auto& pa = *n.parents[0];
      auto& pb = *n.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        pb.ensure_grad();
        for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
  auto out = detail::make_op<Real>(a.shape(), "scale", {a});
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
  if (out.requires_grad()) {
    out.node()->backward_fn = [s](Node<Real>& n) {
      auto& p = *n.parents[0];
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * s;
    };
  }
  return out;
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
  constexpr Real inv_sqrt2 = Real(0.7071067811865475244);
  auto out = detail::make_op<Real>(a.shape(), "gelu", {a});
  const auto& av = a.value();
  auto& ov = out.value();
  for (size_t i = 0; i < ov.size(); ++i) {
    Real x = av[i];
    ov[i] = Real(0.5) * x * (Real(1) + std::erf(x * inv_sqrt2));
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<Real>& n) {
      auto& p = *n.parents[0];
      p.ensure_grad();
      const Real inv_sqrt2pi = Real(0.3989422804014326779);
      for (size_t i = 0; i < n.grad.size(); ++i) {
        Real x = p.value[i];
        Real phi = Real(0.5) * (Real(1) + std::erf(x * inv_sqrt2));
        Real d = phi + x * inv_sqrt2pi * std::exp(Real(-0.5) * x * x);
        p.grad[i] += n.grad[i] * d;
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  detail::require_matrix(a, "transpose");
  int m = a.dim(0), n = a.dim(1);
  auto out = detail::make_op<Real>({n, m}, "transpose", {a});
  const auto& av = a.value();
  auto& ov = out.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          p.grad[static_cast<size_t>(i) * n + j] += nd.grad[static_cast<size_t>(j) * m + i];
    };
  }
  return out;
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  auto out = detail::make_op<Real>(shape, "reshape", {a});
  out.value() = a.value();
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<Real>& n) {
      auto& p = *n.parents[0];
      p.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    };
  }
  return out;
}

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dims of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = detail::make_op<Real>({m, n}, "matmul", {a, b});
  detail::mm_nn(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, k, n](Node<Real>& nd) {
      auto& pa = *nd.parents[0];
      auto& pb = *nd.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();  // dA += dC * B^T
        detail::mm_nt(nd.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();  // dB += A^T * dC
        detail::mm_tn(pa.value.data(), nd.grad.data(), pb.grad.data(), m, k, n);
      }
    };
  }
  return out;
}

// a[m,k] * b[n,k]^T without materializing the transpose.
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: inner dims of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto out = detail::make_op<Real>({m, n}, "matmul_nt", {a, b});
  detail::mm_nt(a.value().data(), b.value().data(), out.value().data(), m, k, n);
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, k, n](Node<Real>& nd) {
      auto& pa = *nd.parents[0];
      auto& pb = *nd.parents[1];
      if (pa.requires_grad) {
        pa.ensure_grad();  // dA += dC * B
        detail::mm_nn(nd.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
      }
      if (pb.requires_grad) {
        pb.ensure_grad();  // dB += dC^T * A
        detail::mm_tn(nd.grad.data(), pa.value.data(), pb.grad.data(), m, n, k);
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, int start, int len) {
  detail::require_matrix(a, "slice_rows");
  int m = a.dim(0), n = a.dim(1);
  if (start < 0 || len < 0 || start + len > m)
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of " + shape_str(a.shape()));
  auto out = detail::make_op<Real>({len, n}, "slice_rows", {a});
  const auto& av = a.value();
  std::copy(av.begin() + static_cast<size_t>(start) * n,
            av.begin() + static_cast<size_t>(start + len) * n, out.value().begin());
  if (out.requires_grad()) {
    out.node()->backward_fn = [start, n](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      for (size_t i = 0; i < nd.grad.size(); ++i)
        p.grad[static_cast<size_t>(start) * n + i] += nd.grad[i];
    };
  }
  return out;
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, int start, int len) {
  detail::require_matrix(a, "slice_cols");
  int m = a.dim(0), n = a.dim(1);
  if (start < 0 || len < 0 || start + len > n)
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of " + shape_str(a.shape()));
  auto out = detail::make_op<Real>({m, len}, "slice_cols", {a});
  const auto& av = a.value();
  auto& ov = out.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      ov[static_cast<size_t>(i) * len + j] = av[static_cast<size_t>(i) * n + start + j];
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n, start, len](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
          p.grad[static_cast<size_t>(i) * n + start + j] += nd.grad[static_cast<size_t>(i) * len + j];
    };
  }
  return out;
}

template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  int n = parts[0].dim(1);
  int m = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.dim(1) != n)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    m += p.dim(0);
  }
  auto out = detail::make_op<Real>({m, n}, "concat_rows", parts);
  auto& ov = out.value();
  size_t off = 0;
  std::vector<int> rows;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), ov.begin() + static_cast<ptrdiff_t>(off));
    off += p.value().size();
    rows.push_back(p.dim(0));
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [rows, n](Node<Real>& nd) {
      size_t base = 0;
      for (size_t s = 0; s < nd.parents.size(); ++s) {
        auto& p = *nd.parents[s];
        size_t cnt = static_cast<size_t>(rows[s]) * n;
        if (p.requires_grad) {
          p.ensure_grad();
          for (size_t i = 0; i < cnt; ++i) p.grad[i] += nd.grad[base + i];
        }
        base += cnt;
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  int m = parts[0].dim(0);
  int n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.dim(0) != m)
      throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    n += p.dim(1);
  }
  auto out = detail::make_op<Real>({m, n}, "concat_cols", parts);
  auto& ov = out.value();
  std::vector<int> cols;
  int coff = 0;
  for (const auto& p : parts) {
    int pc = p.dim(1);
    const auto& pv = p.value();
    for (int i = 0; i < m; ++i)
      std::copy(pv.begin() + static_cast<size_t>(i) * pc, pv.begin() + static_cast<size_t>(i + 1) * pc,
                ov.begin() + static_cast<size_t>(i) * n + coff);
    cols.push_back(pc);
    coff += pc;
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [cols, m, n](Node<Real>& nd) {
      int base = 0;
      for (size_t s = 0; s < nd.parents.size(); ++s) {
        auto& p = *nd.parents[s];
        int pc = cols[s];
        if (p.requires_grad) {
          p.ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
              p.grad[static_cast<size_t>(i) * pc + j] += nd.grad[static_cast<size_t>(i) * n + base + j];
        }
        base += pc;
      }
    };
  }
  return out;
}

// Stacks equal-shape matrices into a [count, rows, cols] tensor.
template <class Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  for (const auto& p : parts) detail::require_same_shape(p, parts[0], "stack");
  detail::require_matrix(parts[0], "stack");
  int m = parts[0].dim(0), n = parts[0].dim(1);
  auto out = detail::make_op<Real>({static_cast<int>(parts.size()), m, n}, "stack", parts);
  auto& ov = out.value();
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().begin(), p.value().end(), ov.begin() + static_cast<ptrdiff_t>(off));
    off += p.value().size();
  }
  if (out.requires_grad()) {
    size_t per = static_cast<size_t>(m) * n;
    out.node()->backward_fn = [per](Node<Real>& nd) {
      for (size_t s = 0; s < nd.parents.size(); ++s) {
        auto& p = *nd.parents[s];
        if (!p.requires_grad) continue;
        p.ensure_grad();
        for (size_t i = 0; i < per; ++i) p.grad[i] += nd.grad[s * per + i];
      }
    };
  }
  return out;
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  auto out = detail::make_op<Real>({1}, "sum", {a});
  Real s0 = 0;
  for (Real v : a.value()) s0 += v;
  out.value()[0] = s0;
  if (out.requires_grad()) {
    out.node()->backward_fn = [](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      Real g = nd.grad[0];
      for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
    };
  }
  return out;
}

// Rows of `table` gathered by id. Backward scatter-adds into the table rows.
template <class Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& table, const std::vector<int>& ids) {
  detail::require_matrix(table, "embedding_lookup");
  int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v) + " rows");
  auto out = detail::make_op<Real>({static_cast<int>(ids.size()), d}, "embedding_lookup", {table});
  const auto& tv = table.value();
  auto& ov = out.value();
  for (size_t t = 0; t < ids.size(); ++t)
    std::copy(tv.begin() + static_cast<size_t>(ids[t]) * d, tv.begin() + static_cast<size_t>(ids[t] + 1) * d,
              ov.begin() + t * d);
  if (out.requires_grad()) {
    out.node()->backward_fn = [ids, d](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      for (size_t t = 0; t < ids.size(); ++t)
        for (int j = 0; j < d; ++j)
          p.grad[static_cast<size_t>(ids[t]) * d + j] += nd.grad[t * d + j];
    };
  }
  return out;
}

// Row-wise layer norm with learned gain/bias over the last dimension.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps = Real(1e-5)) {
  detail::require_matrix(x, "layer_norm");
  int m = x.dim(0), n = x.dim(1);
  if (gamma.ndim() != 1 || gamma.dim(0) != n || beta.ndim() != 1 || beta.dim(0) != n)
    throw ShapeError("layer_norm: gain " + shape_str(gamma.shape()) + " / bias " +
                     shape_str(beta.shape()) + " do not match columns of " + shape_str(x.shape()));
  auto out = detail::make_op<Real>(x.shape(), "layer_norm", {x, gamma, beta});
  auto xhat = std::make_shared<std::vector<Real>>(static_cast<size_t>(m) * n);
  auto inv_std = std::make_shared<std::vector<Real>>(static_cast<size_t>(m));
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  auto& ov = out.value();
  for (int i = 0; i < m; ++i) {
    const Real* row = xv.data() + static_cast<size_t>(i) * n;
    Real mean = 0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= Real(n);
    Real var = 0;
    for (int j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= Real(n);
    Real is = Real(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = is;
    for (int j = 0; j < n; ++j) {
      Real xh = (row[j] - mean) * is;
      (*xhat)[static_cast<size_t>(i) * n + j] = xh;
      ov[static_cast<size_t>(i) * n + j] = gv[static_cast<size_t>(j)] * xh + bv[static_cast<size_t>(j)];
    }
  }
  if (out.requires_grad()) {
    out.node()->backward_fn = [m, n, xhat, inv_std](Node<Real>& nd) {
      auto& px = *nd.parents[0];
      auto& pg = *nd.parents[1];
      auto& pb = *nd.parents[2];
      const auto& gv = pg.value;
      if (pg.requires_grad) pg.ensure_grad();
      if (pb.requires_grad) pb.ensure_grad();
      if (px.requires_grad) px.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const Real* dy = nd.grad.data() + static_cast<size_t>(i) * n;
        const Real* xh = xhat->data() + static_cast<size_t>(i) * n;
        if (pg.requires_grad || pb.requires_grad) {
          for (int j = 0; j < n; ++j) {
            if (pg.requires_grad) pg.grad[static_cast<size_t>(j)] += dy[j] * xh[j];
            if (pb.requires_grad) pb.grad[static_cast<size_t>(j)] += dy[j];
          }
        }
        if (px.requires_grad) {
          Real sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int j = 0; j < n; ++j) {
            Real dxh = dy[j] * gv[static_cast<size_t>(j)];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
          }
          Real is = (*inv_std)[static_cast<size_t>(i)];
          for (int j = 0; j < n; ++j) {
            Real dxh = dy[j] * gv[static_cast<size_t>(j)];
            px.grad[static_cast<size_t>(i) * n + j] +=
                is * (dxh - sum_dxhat / Real(n) - xh[j] * sum_dxhat_xhat / Real(n));
          }
        }
      }
    };
  }
  return out;
}

namespace detail {

template <class Real>
Tensor<Real> softmax_rows_impl(const Tensor<Real>& a, const Tensor<Real>* mask) {
  require_matrix(a, "softmax_rows");
  if (mask) require_same_shape(a, *mask, "softmax_rows(mask)");
  int m = a.dim(0), n = a.dim(1);
  std::vector<Tensor<Real>> parents = {a};
  auto out = make_op<Real>(a.shape(), "softmax_rows", parents);
  const auto& av = a.value();
  const Real* mv = mask ? mask->value().data() : nullptr;
  auto& ov = out.value();
  const Real blocked = Real(kMaskNegInf) * Real(0.5);
  for (int i = 0; i < m; ++i) {
    const Real* row = av.data() + static_cast<size_t>(i) * n;
    const Real* mrow = mv ? mv + static_cast<size_t>(i) * n : nullptr;
    Real mx = -std::numeric_limits<Real>::infinity();
    bool any_open = false;
    for (int j = 0; j < n; ++j) {
      Real z = row[j] + (mrow ? mrow[j] : Real(0));
      if (z > blocked) any_open = true;
      if (z > mx) mx = z;
    }
    Real* orow = ov.data() + static_cast<size_t>(i) * n;
    if (!any_open) {
      // Every position masked out: emit a zero row rather than NaN and count it.
      ++softmax_masked_row_count();
      for (int j = 0; j < n; ++j) orow[j] = Real(0);
      continue;
    }
    Real denom = 0;
    for (int j = 0; j < n; ++j) {
      Real z = row[j] + (mrow ? mrow[j] : Real(0));
      Real e = std::exp(z - mx);
      orow[j] = e;
      denom += e;
    }
    Real inv = Real(1) / denom;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  if (out.requires_grad()) {
    auto probs = std::make_shared<std::vector<Real>>(out.value());
    out.node()->backward_fn = [m, n, probs](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      for (int i = 0; i < m; ++i) {
        const Real* pr = probs->data() + static_cast<size_t>(i) * n;
        const Real* dy = nd.grad.data() + static_cast<size_t>(i) * n;
        Real dot = 0;
        for (int j = 0; j < n; ++j) dot += pr[j] * dy[j];
        for (int j = 0; j < n; ++j)
          p.grad[static_cast<size_t>(i) * n + j] += pr[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

}  // namespace detail

template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
  return detail::softmax_rows_impl<Real>(a, nullptr);
}

// `mask` is additive (0 where allowed, kMaskNegInf where blocked) and gets no gradient.
template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a, const Tensor<Real>& mask) {
  return detail::softmax_rows_impl<Real>(a, &mask);
}

// Mean negative log likelihood over positions where loss_mask is set.
// targets[i] is ignored wherever loss_mask[i] is false.
template <class Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, const std::vector<int>& targets,
                           const std::vector<uint8_t>& loss_mask) {
  detail::require_matrix(logits, "cross_entropy");
  int t = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != t || static_cast<int>(loss_mask.size()) != t)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets / " +
                     std::to_string(loss_mask.size()) + " mask entries for " + shape_str(logits.shape()));
  int64_t n_sup = 0;
  for (int i = 0; i < t; ++i) {
    if (!loss_mask[static_cast<size_t>(i)]) continue;
    ++n_sup;
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v)
      throw ShapeError("cross_entropy: target " + std::to_string(targets[static_cast<size_t>(i)]) +
                       " outside vocab of " + std::to_string(v));
  }
  if (n_sup == 0) throw NumericError("cross_entropy: loss mask selects no positions");
  auto out = detail::make_op<Real>({1}, "cross_entropy", {logits});
  const auto& lv = logits.value();
  double acc = 0;  // accumulate the mean in double even in float mode
  for (int i = 0; i < t; ++i) {
    if (!loss_mask[static_cast<size_t>(i)]) continue;
    const Real* row = lv.data() + static_cast<size_t>(i) * v;
    Real mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    double logp = static_cast<double>(row[targets[static_cast<size_t>(i)]] - mx) - std::log(denom);
    acc -= logp;
  }
  out.value()[0] = static_cast<Real>(acc / static_cast<double>(n_sup));
  if (out.requires_grad()) {
    out.node()->backward_fn = [t, v, targets, loss_mask, n_sup](Node<Real>& nd) {
      auto& p = *nd.parents[0];
      p.ensure_grad();
      Real g = nd.grad[0] / static_cast<Real>(n_sup);
      for (int i = 0; i < t; ++i) {
        if (!loss_mask[static_cast<size_t>(i)]) continue;
        const Real* row = p.value.data() + static_cast<size_t>(i) * v;
        Real mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        Real denom = 0;
        for (int j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        Real inv = Real(1) / denom;
        Real* grow = p.grad.data() + static_cast<size_t>(i) * v;
        for (int j = 0; j < v; ++j) grow[j] += g * std::exp(row[j] - mx) * inv;
        grow[targets[static_cast<size_t>(i)]] -= g;
      }
    };
  }
  return out;
}

// Reverse-mode sweep from a scalar root. Gradients accumulate (+=) into every
// reachable node that requires grad; leaf grads persist until zero_grad().
template <class Real>
void backward(const Tensor<Real>& root) {
  if (root.numel() != 1)
    throw GraphError("backward: root must be scalar, got " + shape_str(root.shape()));
  auto rn = root.node();
  if (!rn->requires_grad)
    throw GraphError("backward: root does not require grad");
  if (rn->backward_done)
    throw GraphError("backward: called twice on the same root without zero_grad reset");
  rn->backward_done = true;

  // Iterative post-order DFS; reversed, consumers come before producers.
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::pair<Node<Real>*, size_t>> stack;
  stack.emplace_back(rn.get(), 0);
  seen.insert(rn.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Real>* par = node->parents[next].get();
      ++next;
      if (par->requires_grad && seen.insert(par).second) stack.emplace_back(par, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  rn->ensure_grad();
  rn->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

// Greedy per-row argmax over the value buffer; no graph interaction.
template <class Real>
std::vector<int> argmax_rows(const Tensor<Real>& a) {
  if (a.ndim() != 2) throw ShapeError("argmax_rows: expected a matrix, got " + shape_str(a.shape()));
  int m = a.dim(0), n = a.dim(1);
  std::vector<int> out(static_cast<size_t>(m));
  const auto& av = a.value();
  for (int i = 0; i < m; ++i) {
    const Real* row = av.data() + static_cast<size_t>(i) * n;
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace boxlm
