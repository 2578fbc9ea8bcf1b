#pragma once

// Minimal dense-tensor reverse-mode autodiff core. Only the operations the
// model needs are provided; broadcasting is limited to adding a vector over
// the last dimension. Matrix products are delegated to Eigen; everything
// else is explicit loops. Backward walks the graph in reverse topological
// order and visits each node exactly once.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "clozespan/rng.hpp"

namespace clozespan {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// RAII guard disabling graph construction (inference paths).
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename Real>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // sized lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
    const char* op = "leaf";

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<Real> value, bool requires_grad = false) {
    if (numel(shape) != value.size())
      throw std::invalid_argument("Tensor::from: data length does not match shape " +
                                  shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<Real> v(numel(shape), Real(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, Real fill, bool requires_grad = false) {
    std::vector<Real> v(numel(shape), fill);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from(Shape{}, std::vector<Real>{v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::vector<Real>& value() { return n_->value; }
  const std::vector<Real>& value() const { return n_->value; }
  std::vector<Real>& grad() { return n_->grad; }
  const std::vector<Real>& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  Node* node() const { return n_.get(); }
  const std::shared_ptr<Node>& handle() const { return n_; }

  Real item() const {
    if (size() != 1)
      throw std::invalid_argument("Tensor::item: tensor is not a scalar, shape " +
                                  shape_str(shape()));
    return n_->value[0];
  }

  void zero_grad() { n_->grad.clear(); }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

template <typename Real>
Tensor<Real> make_result(Shape shape, std::vector<Real> value,
                         std::vector<Tensor<Real>> parents, const char* op,
                         std::function<void(typename Tensor<Real>::Node&)> backprop) {
  auto n = std::make_shared<typename Tensor<Real>::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  n->requires_grad = needs;
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.handle());
    n->backprop = std::move(backprop);
  }
  return Tensor<Real>(std::move(n));
}

template <typename Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<EMat<Real>>;
template <typename Real>
using CMapMat = Eigen::Map<const EMat<Real>>;

// Rows/cols view of a tensor treated as a 2-D array over its last dimension.
inline std::pair<std::size_t, std::size_t> as_rows(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  std::size_t cols = shape.back();
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, cols};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast arithmetic

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  const bool same = a.shape() == b.shape();
  const auto [rows, cols] = detail::as_rows(a.shape());
  const bool bias = !same && b.shape().size() == 1 && !a.shape().empty() &&
                    b.shape()[0] == a.shape().back();
  if (!same && !bias) shape_error("add", a.shape(), b.shape());
  std::vector<Real> out(a.size());
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[r * cols + c] = a.value()[r * cols + c] + b.value()[c];
  }
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a, b}, "add",
      [an, bn, same, rows = rows, cols = cols](typename Tensor<Real>::Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          if (same) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
          } else {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += self.grad[r * cols + c];
          }
        }
      });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a, b}, "sub",
      [an, bn](typename Tensor<Real>::Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
      });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a, b}, "mul",
      [an, bn](typename Tensor<Real>::Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i] * an->value[i];
        }
      });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) shape_error("div", a.shape(), b.shape());
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a, b}, "div",
      [an, bn](typename Tensor<Real>::Node& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] -= self.grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
        }
      });
}

template <typename Real>
Tensor<Real> mul_scalar(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  auto an = a.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a}, "mul_scalar",
      [an, s](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
      });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real s) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + s;
  auto an = a.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a}, "add_scalar",
      [an](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      });
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  return mul_scalar(a, Real(-1));
}

// ---------------------------------------------------------------------------
// unary elementwise

namespace detail {
template <typename Real, typename F, typename DF>
Tensor<Real> unary_op(const Tensor<Real>& a, const char* name, F f, DF df) {
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
  auto an = a.handle();
  return make_result<Real>(a.shape(), std::move(out), {a}, name,
                           [an, df](typename Tensor<Real>::Node& self) {
                             if (!an->requires_grad) return;
                             an->ensure_grad();
                             for (std::size_t i = 0; i < self.grad.size(); ++i)
                               an->grad[i] += self.grad[i] * df(an->value[i], self.value[i]);
                           });
}
}  // namespace detail

template <typename Real>
Tensor<Real> exp_t(const Tensor<Real>& a) {
  return detail::unary_op(
      a, "exp", [](Real x) { return std::exp(x); },
      [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log_t(const Tensor<Real>& a) {
  return detail::unary_op(
      a, "log", [](Real x) { return std::log(x); },
      [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> sqrt_t(const Tensor<Real>& a) {
  return detail::unary_op(
      a, "sqrt", [](Real x) { return std::sqrt(x); },
      [](Real, Real y) { return Real(0.5) / y; });
}

template <typename Real>
Tensor<Real> tanh_t(const Tensor<Real>& a) {
  return detail::unary_op(
      a, "tanh", [](Real x) { return std::tanh(x); },
      [](Real, Real y) { return Real(1) - y * y; });
}

// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename Real>
Tensor<Real> gelu_fast(const Tensor<Real>& a) {
  constexpr Real kC = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real kA = Real(0.044715);
  return detail::unary_op(
      a, "gelu_fast",
      [](Real x) {
        const Real u = kC * (x + kA * x * x * x);
        return Real(0.5) * x * (Real(1) + std::tanh(u));
      },
      [](Real x, Real) {
        const Real u = kC * (x + kA * x * x * x);
        const Real t = std::tanh(u);
        const Real du = kC * (Real(1) + Real(3) * kA * x * x);
        return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
      });
}

// ---------------------------------------------------------------------------
// matrix ops

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<Real> out(m * n);
  {
    detail::CMapMat<Real> A(a.value().data(), m, k);
    detail::CMapMat<Real> B(b.value().data(), k, n);
    detail::MapMat<Real> C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_result<Real>(
      Shape{m, n}, std::move(out), {a, b}, "matmul",
      [an, bn, m, k, n](typename Tensor<Real>::Node& self) {
        detail::CMapMat<Real> G(self.grad.data(), m, n);
        if (an->requires_grad) {
          an->ensure_grad();
          detail::CMapMat<Real> B(bn->value.data(), k, n);
          detail::MapMat<Real> dA(an->grad.data(), m, k);
          dA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          detail::CMapMat<Real> A(an->value.data(), m, k);
          detail::MapMat<Real> dB(bn->grad.data(), k, n);
          dB.noalias() += A.transpose() * G;
        }
      });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
  if (a.shape().size() != 2) shape_error("transpose", a.shape(), a.shape());
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<Real> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  auto an = a.handle();
  return detail::make_result<Real>(
      Shape{n, m}, std::move(out), {a}, "transpose",
      [an, m, n](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
      });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  std::vector<Real> out = a.value();
  auto an = a.handle();
  return detail::make_result<Real>(
      std::move(shape), std::move(out), {a}, "reshape",
      [an](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      });
}

// ---------------------------------------------------------------------------
// row-structured ops (last dimension treated as the row)

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a) {
  const auto [rows, cols] = detail::as_rows(a.shape());
  if (cols == 0) shape_error("softmax", a.shape(), a.shape());
  std::vector<Real> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.value().data() + r * cols;
    Real* y = out.data() + r * cols;
    Real m = x[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x[c]);
    Real sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - m);
      sum += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
  }
  auto an = a.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a}, "softmax",
      [an, rows = rows, cols = cols](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* y = self.value.data() + r * cols;
          const Real* g = self.grad.data() + r * cols;
          Real dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
          for (std::size_t c = 0; c < cols; ++c)
            an->grad[r * cols + c] += y[c] * (g[c] - dot);
        }
      });
}

// logsumexp over the last dimension; the reduced axis is dropped.
template <typename Real>
Tensor<Real> logsumexp(const Tensor<Real>& a) {
  if (a.shape().empty()) shape_error("logsumexp", a.shape(), a.shape());
  const auto [rows, cols] = detail::as_rows(a.shape());
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<Real> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.value().data() + r * cols;
    Real m = x[0];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, x[c]);
    Real sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(x[c] - m);
    out[r] = m + std::log(sum);
  }
  auto an = a.handle();
  return detail::make_result<Real>(
      std::move(out_shape), std::move(out), {a}, "logsumexp",
      [an, rows = rows, cols = cols](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real lse = self.value[r];
          const Real g = self.grad[r];
          for (std::size_t c = 0; c < cols; ++c)
            an->grad[r * cols + c] += g * std::exp(an->value[r * cols + c] - lse);
        }
      });
}

template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain,
                        const Tensor<Real>& bias, Real eps = Real(1e-5)) {
  const auto [rows, cols] = detail::as_rows(x.shape());
  if (gain.shape() != Shape{cols}) shape_error("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{cols}) shape_error("layer_norm", x.shape(), bias.shape());
  std::vector<Real> out(x.size());
  std::vector<Real> inv_std(rows), mean(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* v = x.value().data() + r * cols;
    Real mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += v[c];
    mu /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (v[c] - mu) * (v[c] - mu);
    var /= static_cast<Real>(cols);
    const Real is = Real(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = (v[c] - mu) * is * gain.value()[c] + bias.value()[c];
  }
  auto xn = x.handle();
  auto gn = gain.handle();
  auto bn = bias.handle();
  return detail::make_result<Real>(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [xn, gn, bn, rows = rows, cols = cols, mean = std::move(mean),
       inv_std = std::move(inv_std)](typename Tensor<Real>::Node& self) {
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* v = xn->value.data() + r * cols;
          const Real* g = self.grad.data() + r * cols;
          const Real is = inv_std[r];
          const Real mu = mean[r];
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (std::size_t c = 0; c < cols; ++c)
              gn->grad[c] += g[c] * (v[c] - mu) * is;
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += g[c];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            Real sum_gg = 0, sum_ggx = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              const Real gg = g[c] * gn->value[c];
              const Real xhat = (v[c] - mu) * is;
              sum_gg += gg;
              sum_ggx += gg * xhat;
            }
            const Real inv_n = Real(1) / static_cast<Real>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
              const Real gg = g[c] * gn->value[c];
              const Real xhat = (v[c] - mu) * is;
              xn->grad[r * cols + c] +=
                  is * (gg - inv_n * sum_gg - xhat * inv_n * sum_ggx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// gather / structure ops

template <typename Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2) shape_error("embedding_lookup", table.shape(), Shape{});
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<Real> out(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const int id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                  " out of range for table " + shape_str(table.shape()));
    std::copy_n(table.value().data() + static_cast<std::size_t>(id) * d, d,
                out.data() + t * d);
  }
  auto tn = table.handle();
  return detail::make_result<Real>(
      Shape{ids.size(), d}, std::move(out), {table}, "embedding_lookup",
      [tn, ids, d](typename Tensor<Real>::Node& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t t = 0; t < ids.size(); ++t)
          for (std::size_t c = 0; c < d; ++c)
            tn->grad[static_cast<std::size_t>(ids[t]) * d + c] += self.grad[t * d + c];
      });
}

// Inverted dropout; identity when not training or rate is zero.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const Real scale = Real(1.0 / (1.0 - rate));
  std::vector<Real> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = rng.next_unit() < rate ? Real(0) : scale;
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  auto xn = x.handle();
  return detail::make_result<Real>(
      x.shape(), std::move(out), {x}, "dropout",
      [xn, mask = std::move(mask)](typename Tensor<Real>::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[i] += self.grad[i] * mask[i];
      });
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, std::size_t begin, std::size_t end) {
  if (a.shape().size() != 2 || begin >= end || end > a.shape()[0])
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") for " + shape_str(a.shape()));
  const std::size_t cols = a.shape()[1];
  std::vector<Real> out(a.value().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                        a.value().begin() + static_cast<std::ptrdiff_t>(end * cols));
  auto an = a.handle();
  return detail::make_result<Real>(
      Shape{end - begin, cols}, std::move(out), {a}, "slice_rows",
      [an, begin, cols](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          an->grad[begin * cols + i] += self.grad[i];
      });
}

template <typename Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, std::size_t begin, std::size_t end) {
  if (a.shape().size() != 2 || begin >= end || end > a.shape()[1])
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(begin) + "," +
                                std::to_string(end) + ") for " + shape_str(a.shape()));
  const std::size_t rows = a.shape()[0], cols = a.shape()[1], width = end - begin;
  std::vector<Real> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.value().data() + r * cols + begin, width, out.data() + r * width);
  auto an = a.handle();
  return detail::make_result<Real>(
      Shape{rows, width}, std::move(out), {a}, "slice_cols",
      [an, begin, rows, cols, width](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < width; ++c)
            an->grad[r * cols + begin + c] += self.grad[r * width + c];
      });
}

template <typename Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != rows)
      shape_error("concat_cols", parts[0].shape(), p.shape());
    total += p.shape()[1];
  }
  std::vector<Real> out(rows * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.value().data() + r * w, w, out.data() + r * total + off);
    off += w;
  }
  std::vector<std::shared_ptr<typename Tensor<Real>::Node>> handles;
  for (const auto& p : parts) handles.push_back(p.handle());
  return detail::make_result<Real>(
      Shape{rows, total}, std::move(out), parts, "concat_cols",
      [handles, rows, total](typename Tensor<Real>::Node& self) {
        std::size_t off = 0;
        for (const auto& h : handles) {
          const std::size_t w = h->shape[1];
          if (h->requires_grad) {
            h->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < w; ++c)
                h->grad[r * w + c] += self.grad[r * total + off + c];
          }
          off += w;
        }
      });
}

template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = parts[0].shape().back();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[1] != cols)
      shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.shape()[0];
  }
  std::vector<Real> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  std::vector<std::shared_ptr<typename Tensor<Real>::Node>> handles;
  for (const auto& p : parts) handles.push_back(p.handle());
  return detail::make_result<Real>(
      Shape{rows, cols}, std::move(out), parts, "concat_rows",
      [handles](typename Tensor<Real>::Node& self) {
        std::size_t off = 0;
        for (const auto& h : handles) {
          const std::size_t n = h->value.size();
          if (h->requires_grad) {
            h->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) h->grad[i] += self.grad[off + i];
          }
          off += n;
        }
      });
}

// Stacks N vectors of equal length D into an (N, D) matrix.
template <typename Real>
Tensor<Real> stack_rows(const std::vector<Tensor<Real>>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t d = rows[0].size();
  std::vector<Real> out;
  out.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.shape().size() != 1 || r.size() != d)
      shape_error("stack_rows", rows[0].shape(), r.shape());
    out.insert(out.end(), r.value().begin(), r.value().end());
  }
  std::vector<std::shared_ptr<typename Tensor<Real>::Node>> handles;
  for (const auto& r : rows) handles.push_back(r.handle());
  return detail::make_result<Real>(
      Shape{rows.size(), d}, std::move(out), rows, "stack_rows",
      [handles, d](typename Tensor<Real>::Node& self) {
        for (std::size_t r = 0; r < handles.size(); ++r) {
          if (!handles[r]->requires_grad) continue;
          handles[r]->ensure_grad();
          for (std::size_t c = 0; c < d; ++c)
            handles[r]->grad[c] += self.grad[r * d + c];
        }
      });
}

// ---------------------------------------------------------------------------
// reductions and similarity

template <typename Real>
Tensor<Real> reduce_sum(const Tensor<Real>& a) {
  Real s = 0;
  for (Real v : a.value()) s += v;
  auto an = a.handle();
  return detail::make_result<Real>(
      Shape{}, std::vector<Real>{s}, {a}, "reduce_sum",
      [an](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
      });
}

template <typename Real>
Tensor<Real> reduce_mean(const Tensor<Real>& a) {
  return mul_scalar(reduce_sum(a), Real(1) / static_cast<Real>(a.size()));
}

// sum_i x_i * mask_i as one node; used to pick out gold potentials.
template <typename Real>
Tensor<Real> sum_masked(const Tensor<Real>& a, std::vector<Real> mask) {
  if (mask.size() != a.size())
    throw std::invalid_argument("sum_masked: mask length does not match " +
                                shape_str(a.shape()));
  Real s = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) s += a.value()[i] * mask[i];
  auto an = a.handle();
  return detail::make_result<Real>(
      Shape{}, std::vector<Real>{s}, {a}, "sum_masked",
      [an, mask = std::move(mask)](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < mask.size(); ++i)
          an->grad[i] += self.grad[0] * mask[i];
      });
}

template <typename Real>
Tensor<Real> diag(const Tensor<Real>& a) {
  if (a.shape().size() != 2 || a.shape()[0] != a.shape()[1])
    shape_error("diag", a.shape(), a.shape());
  const std::size_t n = a.shape()[0];
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i * n + i];
  auto an = a.handle();
  return detail::make_result<Real>(
      Shape{n}, std::move(out), {a}, "diag",
      [an, n](typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i * n + i] += self.grad[i];
      });
}

// Rows scaled to unit L2 norm. Norms are clamped away from zero, which only
// affects exactly-zero rows.
template <typename Real>
Tensor<Real> l2_normalize_rows(const Tensor<Real>& a) {
  const auto [rows, cols] = detail::as_rows(a.shape());
  constexpr Real kTiny = Real(1e-30);
  std::vector<Real> out(a.size());
  std::vector<Real> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = a.value().data() + r * cols;
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += x[c] * x[c];
    const Real norm = std::max(std::sqrt(s), kTiny);
    norms[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] / norm;
  }
  auto an = a.handle();
  return detail::make_result<Real>(
      a.shape(), std::move(out), {a}, "l2_normalize_rows",
      [an, rows = rows, cols = cols, norms = std::move(norms)](
          typename Tensor<Real>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* y = self.value.data() + r * cols;
          const Real* g = self.grad.data() + r * cols;
          Real dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
          for (std::size_t c = 0; c < cols; ++c)
            an->grad[r * cols + c] += (g[c] - y[c] * dot) / norms[r];
        }
      });
}

template <typename Real>
Tensor<Real> cosine_similarity(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().size() != 1 || a.shape() != b.shape())
    shape_error("cosine_similarity", a.shape(), b.shape());
  constexpr Real kTiny = Real(1e-30);
  const std::size_t d = a.size();
  Real dot = 0, na2 = 0, nb2 = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += a.value()[i] * b.value()[i];
    na2 += a.value()[i] * a.value()[i];
    nb2 += b.value()[i] * b.value()[i];
  }
  const Real na = std::max(std::sqrt(na2), kTiny);
  const Real nb = std::max(std::sqrt(nb2), kTiny);
  const Real s = dot / (na * nb);
  auto an = a.handle();
  auto bn = b.handle();
  return detail::make_result<Real>(
      Shape{}, std::vector<Real>{s}, {a, b}, "cosine_similarity",
      [an, bn, na, nb, s, d](typename Tensor<Real>::Node& self) {
        const Real g = self.grad[0];
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < d; ++i)
            an->grad[i] += g * (bn->value[i] / (na * nb) - s * an->value[i] / (na * na));
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < d; ++i)
            bn->grad[i] += g * (an->value[i] / (na * nb) - s * bn->value[i] / (nb * nb));
        }
      });
}

// ---------------------------------------------------------------------------
// backward

template <typename Real>
void backward(const Tensor<Real>& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  using Node = typename Tensor<Real>::Node;

  // iterative post-order DFS; post-order reversed = topological order
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, i] = stack.back();
    if (i < node->parents.size()) {
      Node* parent = node->parents[i++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

}  // namespace clozespan
