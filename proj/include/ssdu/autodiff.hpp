#pragma once

#include <cmath>
#include <functional>
#include <initializer_list>
#include <optional>
#include <variant>
#include <vector>

#include "ssdu/conv.hpp"
#include "ssdu/fft.hpp"
#include "ssdu/tensor.hpp"

/// Reverse-mode differentiation over real and complex tensors.
///
/// Complex quantities are differentiated by treating real and imaginary parts
/// as independent real variables. The cotangent of a complex node is stored as
/// dL/dRe + i dL/dIm, so for a complex-linear map y = A x the input cotangent
/// is simply A^H applied to the output cotangent.
namespace ssdu::ad {

template <class Real>
class Tape;

template <class T>
class Var {
 public:
  using Real = real_of_t<T>;
  using element_type = T;

  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const noexcept { return id_; }
  Tape<Real>& tape() const noexcept { return *tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor<T>& value() const { return tape_->template value<T>(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class Real>
class Tape {
 public:
  using RealTensor = Tensor<Real>;
  using CplxTensor = ComplexTensor<Real>;
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  /// Node of the recorded graph. Inputs always have smaller ids than the node.
  struct Node {
    const char* op;
    std::vector<std::size_t> inputs;
    std::variant<RealTensor, CplxTensor> value;
    std::variant<std::monostate, RealTensor, CplxTensor> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  const std::vector<Node>& nodes() const { return nodes_; }

  template <class T>
  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{"constant", {}, std::move(value), std::monostate{}, nullptr, false});
    return {this, nodes_.size() - 1};
  }

  /// Leaf that accumulates a gradient during backward().
  template <class T>
  Var<T> variable(Tensor<T> value) {
    nodes_.push_back(Node{"variable", {}, std::move(value), std::monostate{}, nullptr, true});
    return {this, nodes_.size() - 1};
  }

  /// Appends an op node. The backward closure is dropped when no input
  /// requires a gradient.
  template <class T>
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (auto id : inputs) needs = needs || nodes_.at(id).requires_grad;
    nodes_.push_back(Node{op, std::vector<std::size_t>(inputs), std::move(value), std::monostate{},
                          needs ? std::move(backward) : BackwardFn{}, needs});
    return {this, nodes_.size() - 1};
  }

  template <class T>
  const Tensor<T>& value(std::size_t id) const {
    return std::get<Tensor<T>>(nodes_.at(id).value);
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Cotangent buffer of a node, zero-initialized on first access.
  template <class T>
  Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_.at(id);
    if (std::holds_alternative<std::monostate>(n.grad)) n.grad = Tensor<T>(std::get<Tensor<T>>(n.value).shape());
    return std::get<Tensor<T>>(n.grad);
  }

  template <class T>
  const Tensor<T>* grad_if_any(std::size_t id) const {
    return std::get_if<Tensor<T>>(&nodes_.at(id).grad);
  }

  /// Adds g into the cotangent of `id` if that node takes part in differentiation.
  template <class T>
  void accumulate(std::size_t id, const Tensor<T>& g) {
    if (!requires_grad(id)) return;
    grad<T>(id) += g;
  }

  /// Reverse sweep from a real scalar. Previous cotangents are discarded.
  void backward(const Var<Real>& loss) {
    if (loss.value().size() != 1)
      throw UsageError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
    for (auto& n : nodes_) n.grad = std::monostate{};
    grad<Real>(loss.id())[0] = Real(1);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.backward || std::holds_alternative<std::monostate>(n.grad)) continue;
      n.backward(*this, id);
    }
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

template <class Real>
inline void require_scalar(const Tensor<Real>& t, const char* op) {
  if (t.size() != 1) throw DimensionError(std::string(op) + " expects a scalar, got " + shape_string(t.shape()));
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  return a.tape().record("add", a.value() + b.value(), {a.id(), b.id()}, [a = a.id(), b = b.id()](auto& t, std::size_t self) {
    const auto& g = t.template grad<T>(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  return a.tape().record("sub", a.value() - b.value(), {a.id(), b.id()}, [a = a.id(), b = b.id()](auto& t, std::size_t self) {
    const auto& g = t.template grad<T>(self);
    t.accumulate(a, g);
    if (t.requires_grad(b)) t.template grad<T>(b) -= g;
  });
}

/// Multiplication by a fixed real constant.
template <class T>
Var<T> scale(const Var<T>& x, real_of_t<T> c) {
  return x.tape().record("scale", c * x.value(), {x.id()}, [x = x.id(), c](auto& t, std::size_t self) {
    if (t.requires_grad(x)) axpy(c, t.template grad<T>(self), t.template grad<T>(x));
  });
}

/// Multiplication of a tensor by a differentiable real scalar.
template <class T>
Var<T> mul(const Var<real_of_t<T>>& s, const Var<T>& x) {
  using Real = real_of_t<T>;
  detail::require_scalar(s.value(), "mul");
  const Real sv = s.value()[0];
  return x.tape().record("mul_scalar", sv * x.value(), {s.id(), x.id()},
                         [s = s.id(), x = x.id(), sv](auto& t, std::size_t self) {
                           const auto& g = t.template grad<T>(self);
                           if (t.requires_grad(x)) axpy(sv, g, t.template grad<T>(x));
                           if (t.requires_grad(s)) t.template grad<Real>(s)[0] += real_dot(t.template value<T>(x), g);
                         });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}
template <class T>
Var<T> operator*(const Var<real_of_t<T>>& s, const Var<T>& x)
  requires is_complex_v<T>
{
  return mul(s, x);
}

template <class Real>
Var<Real> relu(const Var<Real>& x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.data()) v = v > Real(0) ? v : Real(0);
  return x.tape().record("relu", std::move(out), {x.id()}, [x = x.id()](auto& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const auto& in = t.template value<Real>(x);
    const auto& g = t.template grad<Real>(self);
    auto& gx = t.template grad<Real>(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > Real(0)) gx[i] += g[i];
  });
}

template <class Real>
Var<Real> exp(const Var<Real>& x) {
  Tensor<Real> out = x.value();
  for (auto& v : out.data()) v = std::exp(v);
  return x.tape().record("exp", std::move(out), {x.id()}, [x = x.id()](auto& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const auto& y = t.template value<Real>(self);
    const auto& g = t.template grad<Real>(self);
    auto& gx = t.template grad<Real>(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  });
}

/// Quotient of two real scalars.
template <class Real>
Var<Real> div(const Var<Real>& a, const Var<Real>& b) {
  detail::require_scalar(a.value(), "div");
  detail::require_scalar(b.value(), "div");
  const Real av = a.value()[0], bv = b.value()[0];
  return a.tape().record("div", Tensor<Real>::scalar(av / bv), {a.id(), b.id()},
                         [a = a.id(), b = b.id(), av, bv](auto& t, std::size_t self) {
                           const Real g = t.template grad<Real>(self)[0];
                           if (t.requires_grad(a)) t.template grad<Real>(a)[0] += g / bv;
                           if (t.requires_grad(b)) t.template grad<Real>(b)[0] -= g * av / (bv * bv);
                         });
}

template <class Real>
Var<Real> operator/(const Var<Real>& a, const Var<Real>& b) {
  return div(a, b);
}

/// Re(sum(conj(a) * b)) as a scalar node.
template <class T>
Var<real_of_t<T>> dot(const Var<T>& a, const Var<T>& b) {
  using Real = real_of_t<T>;
  return a.tape().record("dot", Tensor<Real>::scalar(real_dot(a.value(), b.value())), {a.id(), b.id()},
                         [a = a.id(), b = b.id()](auto& t, std::size_t self) {
                           const Real g = t.template grad<Real>(self)[0];
                           if (t.requires_grad(a)) axpy(g, t.template value<T>(b), t.template grad<T>(a));
                           if (t.requires_grad(b)) axpy(g, t.template value<T>(a), t.template grad<T>(b));
                         });
}

template <class Real>
Var<Real> sum(const Var<Real>& x) {
  Real s = 0;
  for (auto v : x.value().data()) s += v;
  return x.tape().record("sum", Tensor<Real>::scalar(s), {x.id()}, [x = x.id()](auto& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Real g = t.template grad<Real>(self)[0];
    for (auto& v : t.template grad<Real>(x).data()) v += g;
  });
}

/// Euclidean norm over all entries (moduli for complex entries).
template <class T>
Var<real_of_t<T>> l2_norm(const Var<T>& x) {
  using Real = real_of_t<T>;
  const Real n = norm2(x.value());
  return x.tape().record("l2_norm", Tensor<Real>::scalar(n), {x.id()}, [x = x.id(), n](auto& t, std::size_t self) {
    if (!t.requires_grad(x) || n == Real(0)) return;
    axpy(t.template grad<Real>(self)[0] / n, t.template value<T>(x), t.template grad<T>(x));
  });
}

/// Sum of entry moduli. The subgradient at a zero entry is taken as zero.
template <class T>
Var<real_of_t<T>> l1_norm(const Var<T>& x) {
  using Real = real_of_t<T>;
  return x.tape().record("l1_norm", Tensor<Real>::scalar(norm1(x.value())), {x.id()}, [x = x.id()](auto& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const Real g = t.template grad<Real>(self)[0];
    const auto& xv = t.template value<T>(x);
    auto& gx = t.template grad<T>(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const Real m = std::abs(xv[i]);
      if (m > Real(0)) gx[i] += (g / m) * xv[i];
    }
  });
}

/// Complex [H,W] image to real [2,H,W] (real part, imaginary part).
template <class Real>
Var<Real> to_channels(const Var<std::complex<Real>>& x) {
  const auto& v = x.value();
  if (v.rank() != 2) throw DimensionError("to_channels expects [H,W], got " + shape_string(v.shape()));
  const std::size_t plane = v.size();
  Tensor<Real> out({2, v.extent(0), v.extent(1)});
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = v[i].real();
    out[plane + i] = v[i].imag();
  }
  return x.tape().record("to_channels", std::move(out), {x.id()}, [x = x.id(), plane](auto& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const auto& g = t.template grad<Real>(self);
    auto& gx = t.template grad<std::complex<Real>>(x);
    for (std::size_t i = 0; i < plane; ++i) gx[i] += std::complex<Real>(g[i], g[plane + i]);
  });
}

/// Real [2,H,W] back to a complex [H,W] image.
template <class Real>
Var<std::complex<Real>> from_channels(const Var<Real>& x) {
  const auto& v = x.value();
  if (v.rank() != 3 || v.extent(0) != 2) throw DimensionError("from_channels expects [2,H,W], got " + shape_string(v.shape()));
  const std::size_t plane = v.extent(1) * v.extent(2);
  ComplexTensor<Real> out({v.extent(1), v.extent(2)});
  for (std::size_t i = 0; i < plane; ++i) out[i] = {v[i], v[plane + i]};
  return x.tape().record("from_channels", std::move(out), {x.id()}, [x = x.id(), plane](auto& t, std::size_t self) {
    if (!t.requires_grad(x)) return;
    const auto& g = t.template grad<std::complex<Real>>(self);
    auto& gx = t.template grad<Real>(x);
    for (std::size_t i = 0; i < plane; ++i) {
      gx[i] += g[i].real();
      gx[plane + i] += g[i].imag();
    }
  });
}

template <class Real>
Var<std::complex<Real>> fft2c(const Var<std::complex<Real>>& x) {
  return x.tape().record("fft2c", fft2_centered(x.value()), {x.id()}, [x = x.id()](auto& t, std::size_t self) {
    t.accumulate(x, ifft2_centered(t.template grad<std::complex<Real>>(self)));
  });
}

template <class Real>
Var<std::complex<Real>> ifft2c(const Var<std::complex<Real>>& x) {
  return x.tape().record("ifft2c", ifft2_centered(x.value()), {x.id()}, [x = x.id()](auto& t, std::size_t self) {
    t.accumulate(x, fft2_centered(t.template grad<std::complex<Real>>(self)));
  });
}

/// Same-padded convolution; bias may be an invalid Var for no bias.
template <class Real>
Var<Real> conv2d(const Var<Real>& input, const Var<Real>& kernel, const Var<Real>& bias = {}) {
  auto out = ssdu::conv2d(input.value(), kernel.value(), bias.valid() ? &bias.value() : nullptr);
  auto backward = [in = input.id(), k = kernel.id(), b = bias.valid() ? std::optional(bias.id()) : std::nullopt](
                      auto& t, std::size_t self) {
    const auto& g = t.template grad<Real>(self);
    Tensor<Real>* gin = t.requires_grad(in) ? &t.template grad<Real>(in) : nullptr;
    Tensor<Real>* gk = t.requires_grad(k) ? &t.template grad<Real>(k) : nullptr;
    Tensor<Real>* gb = (b && t.requires_grad(*b)) ? &t.template grad<Real>(*b) : nullptr;
    conv2d_backward(t.template value<Real>(in), t.template value<Real>(k), g, gin, gk, gb);
  };
  if (bias.valid()) return input.tape().record("conv2d", std::move(out), {input.id(), kernel.id(), bias.id()}, backward);
  return input.tape().record("conv2d", std::move(out), {input.id(), kernel.id()}, backward);
}

}  // namespace ssdu::ad
