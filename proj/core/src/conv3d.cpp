#include <algorithm>

#include "drbd/ops.hpp"

namespace drbd {

namespace {

struct Range {
  std::size_t lo;
  std::size_t hi;
};

// Output positions o in [0, out) whose input tap o*stride + tap - pad lands
// inside [0, in).
Range valid_range(std::size_t in, std::size_t out, std::size_t stride, std::size_t tap,
                  std::size_t pad) {
  std::size_t lo = 0;
  if (tap < pad) lo = (pad - tap + stride - 1) / stride;
  if (in - 1 + pad < tap) return {0, 0};
  const std::size_t hi = std::min(out, (in - 1 + pad - tap) / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct Geometry {
  std::size_t cin, cout, k, stride, pad;
  std::size_t X, Y, Z, OX, OY, OZ;
};

// Invokes fn(out_row, in_row, weight_index, zrange, kz) for every
// (co, ci, kx, ky, ox, oy, kz) tap where the rows overlap. Rows are offsets
// of the first element along the contiguous Z axis.
template <class Fn>
void for_each_row(const Geometry& g, Fn&& fn) {
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t ci = 0; ci < g.cin; ++ci)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const Range rx = valid_range(g.X, g.OX, g.stride, kx, g.pad);
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const Range ry = valid_range(g.Y, g.OY, g.stride, ky, g.pad);
          const std::size_t wbase = ((co * g.cin + ci) * g.k + kx) * g.k * g.k + ky * g.k;
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
            const std::size_t ix = ox * g.stride + kx - g.pad;
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              const std::size_t out_row = ((co * g.OX + ox) * g.OY + oy) * g.OZ;
              const std::size_t in_row = ((ci * g.X + ix) * g.Y + iy) * g.Z;
              for (std::size_t kz = 0; kz < g.k; ++kz) {
                const Range rz = valid_range(g.Z, g.OZ, g.stride, kz, g.pad);
                if (rz.lo < rz.hi) fn(out_row, in_row, wbase + kz, rz, kz);
              }
            }
          }
        }
      }
}

}  // namespace

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride) {
  if (x.rank() != 4) throw ShapeError("conv3d: input must be [C,X,Y,Z], got " + to_string(x.shape()));
  if (weight.rank() != 5 || weight.dim(2) != weight.dim(3) || weight.dim(3) != weight.dim(4)) {
    throw ShapeError("conv3d: weight must be [C_out,C_in,k,k,k], got " + to_string(weight.shape()));
  }
  if (weight.dim(1) != x.dim(0)) {
    throw ShapeError("conv3d: channel mismatch, input has " + std::to_string(x.dim(0)) +
                     " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  const std::size_t k = weight.dim(2);
  if (k % 2 == 0) throw ShapeError("conv3d: kernel extent must be odd");
  if (stride != 1 && stride != 2) throw ShapeError("conv3d: stride must be 1 or 2");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw ShapeError("conv3d: bias must be [C_out]");
  }
  Geometry g{x.dim(0), weight.dim(0), k, stride, k / 2, x.dim(1), x.dim(2), x.dim(3), 0, 0, 0};
  g.OX = (g.X + stride - 1) / stride;
  g.OY = (g.Y + stride - 1) / stride;
  g.OZ = (g.Z + stride - 1) / stride;
  const std::size_t ovol = g.OX * g.OY * g.OZ;

  std::vector<T> out(g.cout * ovol, T(0));
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t co = 0; co < g.cout; ++co)
      std::fill_n(&out[co * ovol], ovol, bv[co]);
  }
  const T* in = x.data().data();
  const T* w = weight.data().data();
  T* o = out.data();
  const std::size_t s = stride;
  for_each_row(g, [&](std::size_t orow, std::size_t irow, std::size_t wi, Range rz, std::size_t kz) {
    const T wv = w[wi];
    T* dst = o + orow;
    const T* src = in + irow;
    const std::size_t off = kz - g.pad;
    if (s == 1) {
      for (std::size_t z = rz.lo; z < rz.hi; ++z) dst[z] += wv * src[z + off];
    } else {
      for (std::size_t z = rz.lo; z < rz.hi; ++z) dst[z] += wv * src[z * s + off];
    }
  });

  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      "conv3d", {g.cout, g.OX, g.OY, g.OZ}, std::move(out), std::move(inputs),
      [g, ovol](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& nw = *self.inputs[1];
        const T* gout = self.grad.data();
        const std::size_t s = g.stride;
        if (nx.requires_grad) {
          T* gin = nx.grad_buffer().data();
          const T* w = nw.value.data();
          for_each_row(g, [&](std::size_t orow, std::size_t irow, std::size_t wi, Range rz,
                              std::size_t kz) {
            const T wv = w[wi];
            const T* src = gout + orow;
            T* dst = gin + irow;
            const std::size_t off = kz - g.pad;
            if (s == 1) {
              for (std::size_t z = rz.lo; z < rz.hi; ++z) dst[z + off] += wv * src[z];
            } else {
              for (std::size_t z = rz.lo; z < rz.hi; ++z) dst[z * s + off] += wv * src[z];
            }
          });
        }
        if (nw.requires_grad) {
          T* gw = nw.grad_buffer().data();
          const T* in = nx.value.data();
          for_each_row(g, [&](std::size_t orow, std::size_t irow, std::size_t wi, Range rz,
                              std::size_t kz) {
            const T* go = gout + orow;
            const T* src = in + irow;
            const std::size_t off = kz - g.pad;
            T acc = T(0);
            if (s == 1) {
              for (std::size_t z = rz.lo; z < rz.hi; ++z) acc += go[z] * src[z + off];
            } else {
              for (std::size_t z = rz.lo; z < rz.hi; ++z) acc += go[z] * src[z * s + off];
            }
            gw[wi] += acc;
          });
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto gb = self.inputs[2]->grad_buffer();
          for (std::size_t co = 0; co < g.cout; ++co) {
            T acc = T(0);
            for (std::size_t i = 0; i < ovol; ++i) acc += gout[co * ovol + i];
            gb[co] += acc;
          }
        }
      });
}

template Tensor<float> conv3d<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, std::size_t);
template Tensor<double> conv3d<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, std::size_t);

}  // namespace drbd
