#include "drbd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace drbd {

namespace {

struct AxisSplit {
  std::size_t outer;
  std::size_t extent;
  std::size_t inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, const char* who) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(who) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Strides of `shape` expressed in the index space of `out` (right-aligned),
// zero along broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - shape.size();
  for (std::size_t d = shape.size(); d-- > 0;) {
    strides[d + offset] = shape[d] == 1 ? 0 : stride;
    stride *= shape[d];
  }
  return strides;
}

template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
    case Activation::exp: return "exp";
    case Activation::log: return "log";
  }
  return "?";
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast: incompatible shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <class T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> value(numel(out));
  const bool same = a.shape() == b.shape();
  auto apply = [op](T x, T y) {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
      case BinaryOp::div: return x / y;
    }
    return T(0);
  };
  if (same) {
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
      value[i] = apply(av[ia], bv[ib]);
    });
  }
  return make_result<T>(
      binary_name(op), out, std::move(value), {a, b}, [op, out, sa, sb](Node<T>& self) {
        Node<T>& na = *self.inputs[0];
        Node<T>& nb = *self.inputs[1];
        const auto& g = self.grad;
        const auto& x = na.value;
        const auto& y = nb.value;
        std::span<T> ga = na.requires_grad ? na.grad_buffer() : std::span<T>{};
        std::span<T> gb = nb.requires_grad ? nb.grad_buffer() : std::span<T>{};
        for_each_broadcast(out, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
          switch (op) {
            case BinaryOp::add:
              if (!ga.empty()) ga[ia] += g[i];
              if (!gb.empty()) gb[ib] += g[i];
              break;
            case BinaryOp::sub:
              if (!ga.empty()) ga[ia] += g[i];
              if (!gb.empty()) gb[ib] -= g[i];
              break;
            case BinaryOp::mul:
              if (!ga.empty()) ga[ia] += g[i] * y[ib];
              if (!gb.empty()) gb[ib] += g[i] * x[ia];
              break;
            case BinaryOp::div:
              if (!ga.empty()) ga[ia] += g[i] / y[ib];
              if (!gb.empty()) gb[ib] -= g[i] * x[ia] / (y[ib] * y[ib]);
              break;
          }
        });
      });
}

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  const auto xv = x.data();
  std::vector<T> value(xv.size());
  std::vector<std::uint8_t> gate;
  if (kind == Activation::relu) {
    gate.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) gate[i] = xv[i] > T(0);
    testing_hooks::relu_gate(gate);
  }
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    switch (kind) {
      case Activation::relu: value[i] = gate[i] ? v : T(0); break;
      case Activation::silu: value[i] = v * stable_sigmoid(v); break;
      case Activation::sigmoid: value[i] = stable_sigmoid(v); break;
      case Activation::softplus:
        value[i] = std::log1p(std::exp(-std::abs(v))) + std::max(v, T(0));
        break;
      case Activation::exp: value[i] = std::exp(v); break;
      case Activation::log:
        if (!(v > T(0))) {
          throw DomainError("log: input must be strictly positive, got " + std::to_string(v) +
                            " at index " + std::to_string(i));
        }
        value[i] = std::log(v);
        break;
    }
  }
  return make_result<T>(activation_name(kind), x.shape(), std::move(value), {x},
                        [kind, gate = std::move(gate)](Node<T>& self) {
                          Node<T>& in = *self.inputs[0];
                          auto gi = in.grad_buffer();
                          const auto& g = self.grad;
                          const auto& xs = in.value;
                          const auto& ys = self.value;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            T d = T(0);
                            switch (kind) {
                              case Activation::relu: d = gate[i] ? T(1) : T(0); break;
                              case Activation::silu: {
                                const T s = stable_sigmoid(xs[i]);
                                d = s * (T(1) + xs[i] * (T(1) - s));
                                break;
                              }
                              case Activation::sigmoid: d = ys[i] * (T(1) - ys[i]); break;
                              case Activation::softplus: d = stable_sigmoid(xs[i]); break;
                              case Activation::exp: d = ys[i]; break;
                              case Activation::log: d = T(1) / xs[i]; break;
                            }
                            gi[i] += g[i] * d;
                          }
                        });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return mul_scalar(x, T(-1));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  std::vector<T> value(x.data().begin(), x.data().end());
  for (auto& v : value) v += s;
  return make_result<T>("add_scalar", x.shape(), std::move(value), {x}, [](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  std::vector<T> value(x.data().begin(), x.data().end());
  for (auto& v : value) v *= s;
  return make_result<T>("mul_scalar", x.shape(), std::move(value), {x}, [s](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * s;
  });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  std::vector<T> value(x.data().begin(), x.data().end());
  for (auto& v : value) v *= v;
  return make_result<T>("square", x.shape(), std::move(value), {x}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    auto gi = in.grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i] * T(2) * in.value[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_result<T>("sum", {}, {total}, {x}, [](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    const T g = self.grad[0];
    for (auto& v : gi) v += g;
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "sum_axis");
  Shape out = x.shape();
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> value(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t i = 0; i < s.inner; ++i)
        value[o * s.inner + i] += xv[(o * s.extent + k) * s.inner + i];
  return make_result<T>("sum_axis", out, std::move(value), {x}, [s](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.extent; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          gi[(o * s.extent + k) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> value(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = &bv[p * n];
      T* crow = &value[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  return make_result<T>("matmul", {m, n}, std::move(value), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    const auto& g = self.grad;
    if (na.requires_grad) {
      auto ga = na.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc = T(0);
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * nb.value[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (nb.requires_grad) {
      auto gb = nb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = na.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> value(r * c);
  const auto av = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) value[j * r + i] = av[i * c + j];
  return make_result<T>("transpose", {c, r}, std::move(value), {a}, [r, c](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += self.grad[j * r + i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  std::vector<T> value(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(value), {x}, [](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x, std::size_t factor) {
  if (factor < 1) throw ShapeError("upsample_nearest3d: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("upsample_nearest3d: expected [C,X,Y,Z], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const std::size_t OX = X * factor, OY = Y * factor, OZ = Z * factor;
  std::vector<T> value(c * OX * OY * OZ);
  const auto xv = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < OX; ++i)
      for (std::size_t j = 0; j < OY; ++j) {
        const T* src = &xv[((ch * X + i / factor) * Y + j / factor) * Z];
        T* dst = &value[((ch * OX + i) * OY + j) * OZ];
        for (std::size_t k = 0; k < OZ; ++k) dst[k] = src[k / factor];
      }
  return make_result<T>(
      "upsample_nearest3d", {c, OX, OY, OZ}, std::move(value), {x},
      [=](Node<T>& self) {
        auto gi = self.inputs[0]->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < OX; ++i)
            for (std::size_t j = 0; j < OY; ++j) {
              T* dst = &gi[((ch * X + i / factor) * Y + j / factor) * Z];
              const T* src = &self.grad[((ch * OX + i) * OY + j) * OZ];
              for (std::size_t k = 0; k < OZ; ++k) dst[k / factor] += src[k];
            }
      });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, T eps) {
  const auto s = split_at(x.shape(), axis, "layer_norm");
  const auto xv = x.data();
  std::vector<T> value(xv.size());
  std::vector<T> inv_std(s.outer * s.inner);
  const T n = static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
      T mu = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) mu += xv[at(k)];
      mu /= n;
      T var = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) {
        const T d = xv[at(k)] - mu;
        var += d * d;
      }
      var /= n;
      const T r = T(1) / std::sqrt(var + eps);
      inv_std[o * s.inner + i] = r;
      for (std::size_t k = 0; k < s.extent; ++k) value[at(k)] = (xv[at(k)] - mu) * r;
    }
  return make_result<T>(
      "layer_norm", x.shape(), std::move(value), {x},
      [s, inv_std = std::move(inv_std)](Node<T>& self) {
        auto gi = self.inputs[0]->grad_buffer();
        const auto& y = self.value;
        const auto& g = self.grad;
        const T n = static_cast<T>(s.extent);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
            T gmean = T(0);
            T gy = T(0);
            for (std::size_t k = 0; k < s.extent; ++k) {
              gmean += g[at(k)];
              gy += g[at(k)] * y[at(k)];
            }
            gmean /= n;
            gy /= n;
            const T r = inv_std[o * s.inner + i];
            for (std::size_t k = 0; k < s.extent; ++k)
              gi[at(k)] += r * (g[at(k)] - gmean - y[at(k)] * gy);
          }
      });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "softmax");
  const auto xv = x.data();
  std::vector<T> value(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
      T mx = xv[at(0)];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xv[at(k)]);
      T z = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) {
        value[at(k)] = std::exp(xv[at(k)] - mx);
        z += value[at(k)];
      }
      for (std::size_t k = 0; k < s.extent; ++k) value[at(k)] /= z;
    }
  return make_result<T>("softmax", x.shape(), std::move(value), {x}, [s](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
        T dot = T(0);
        for (std::size_t k = 0; k < s.extent; ++k) dot += g[at(k)] * y[at(k)];
        for (std::size_t k = 0; k < s.extent; ++k) gi[at(k)] += y[at(k)] * (g[at(k)] - dot);
      }
  });
}

template <class T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "log_softmax");
  const auto xv = x.data();
  std::vector<T> value(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
      T mx = xv[at(0)];
      for (std::size_t k = 1; k < s.extent; ++k) mx = std::max(mx, xv[at(k)]);
      T z = T(0);
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(xv[at(k)] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.extent; ++k) value[at(k)] = xv[at(k)] - lse;
    }
  return make_result<T>("log_softmax", x.shape(), std::move(value), {x}, [s](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
        T gs = T(0);
        for (std::size_t k = 0; k < s.extent; ++k) gs += g[at(k)];
        for (std::size_t k = 0; k < s.extent; ++k) gi[at(k)] += g[at(k)] - std::exp(y[at(k)]) * gs;
      }
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape out = parts.front().shape();
  split_at(out, axis, "concat");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out.size()) throw ShapeError("concat: rank mismatch");
    probe[axis] = out[axis];
    if (probe != out) {
      throw ShapeError("concat: " + to_string(p.shape()) + " incompatible with " + to_string(out));
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  out[axis] = total;
  const auto s = split_at(out, axis, "concat");
  std::vector<T> value(numel(out));
  std::size_t base = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pv = parts[pi].data();
    const std::size_t e = extents[pi];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(&pv[o * e * s.inner], e * s.inner, &value[(o * total + base) * s.inner]);
    base += e;
  }
  return make_result<T>("concat", out, std::move(value), parts, [s, total, extents](Node<T>& self) {
    std::size_t base = 0;
    for (std::size_t pi = 0; pi < extents.size(); ++pi) {
      const std::size_t e = extents[pi];
      Node<T>& in = *self.inputs[pi];
      if (in.requires_grad) {
        auto gi = in.grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t j = 0; j < e * s.inner; ++j)
            gi[o * e * s.inner + j] += self.grad[(o * total + base) * s.inner + j];
      }
      base += e;
    }
  });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_at(x.shape(), axis, "slice");
  if (begin >= end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(s.extent));
  }
  const std::size_t e = end - begin;
  Shape out = x.shape();
  out[axis] = e;
  std::vector<T> value(numel(out));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(&xv[(o * s.extent + begin) * s.inner], e * s.inner, &value[o * e * s.inner]);
  return make_result<T>("slice", out, std::move(value), {x}, [s, e, begin](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < e * s.inner; ++j)
        gi[(o * s.extent + begin) * s.inner + j] += self.grad[o * e * s.inner + j];
  });
}

template <class T>
Tensor<T> flip(const Tensor<T>& x, std::size_t axis) {
  const auto s = split_at(x.shape(), axis, "flip");
  std::vector<T> value(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      std::copy_n(&xv[(o * s.extent + k) * s.inner], s.inner,
                  &value[(o * s.extent + (s.extent - 1 - k)) * s.inner]);
  return make_result<T>("flip", x.shape(), std::move(value), {x}, [s](Node<T>& self) {
    auto gi = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.extent; ++k)
        for (std::size_t i = 0; i < s.inner; ++i)
          gi[(o * s.extent + k) * s.inner + i] +=
              self.grad[(o * s.extent + (s.extent - 1 - k)) * s.inner + i];
  });
}

#define DRBD_INSTANTIATE(T)                                                                  \
  template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> activation<T>(Activation, const Tensor<T>&);                            \
  template Tensor<T> neg<T>(const Tensor<T>&);                                               \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                     \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                     \
  template Tensor<T> square<T>(const Tensor<T>&);                                            \
  template Tensor<T> sum<T>(const Tensor<T>&);                                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                                              \
  template Tensor<T> sum_axis<T>(const Tensor<T>&, std::size_t);                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                         \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                    \
  template Tensor<T> upsample_nearest3d<T>(const Tensor<T>&, std::size_t);                   \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, std::size_t, T);                        \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> log_softmax<T>(const Tensor<T>&, std::size_t);                          \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                  \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);      \
  template Tensor<T> flip<T>(const Tensor<T>&, std::size_t);

DRBD_INSTANTIATE(float)
DRBD_INSTANTIATE(double)

#undef DRBD_INSTANTIATE

}  // namespace drbd
