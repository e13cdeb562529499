#include "drbd/inference.hpp"

#include <cmath>

namespace drbd {

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, double overlap) {
  if (window == 0 || window > extent) {
    throw ShapeError("sliding window: window " + std::to_string(window) + " does not fit extent " + std::to_string(extent));
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) throw DomainError("sliding window: overlap must lie in [0, 1)");
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(window) * (1.0 - overlap))));
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + window < extent; s += stride) out.push_back(s);
  out.push_back(extent - window);
  return out;
}

std::vector<std::uint32_t> window_coverage(const Dims3& dims, const Dims3& window, double overlap) {
  std::vector<std::uint32_t> count(dims[0] * dims[1] * dims[2], 0);
  const auto sx = window_starts(dims[0], window[0], overlap);
  const auto sy = window_starts(dims[1], window[1], overlap);
  const auto sz = window_starts(dims[2], window[2], overlap);
  for (auto x0 : sx)
    for (auto y0 : sy)
      for (auto z0 : sz)
        for (std::size_t x = x0; x < x0 + window[0]; ++x)
          for (std::size_t y = y0; y < y0 + window[1]; ++y)
            for (std::size_t z = z0; z < z0 + window[2]; ++z) ++count[(x * dims[1] + y) * dims[2] + z];
  return count;
}

template <class T>
Tensor<T> sliding_window_infer(const Tensor<T>& volume, const Dims3& window, const WindowPredictor<T>& predictor,
                               double overlap) {
  if (volume.rank() != 4) throw ShapeError("sliding window: expected [C,X,Y,Z], got " + to_string(volume.shape()));
  NoGradGuard guard;
  const std::size_t c = volume.dim(0);
  const Dims3 dims{volume.dim(1), volume.dim(2), volume.dim(3)};
  const auto sx = window_starts(dims[0], window[0], overlap);
  const auto sy = window_starts(dims[1], window[1], overlap);
  const auto sz = window_starts(dims[2], window[2], overlap);
  const std::size_t n = dims[0] * dims[1] * dims[2];
  const std::size_t wn = window[0] * window[1] * window[2];
  const auto in = volume.data();

  std::vector<T> acc;
  std::vector<std::uint32_t> count(n, 0);
  std::size_t out_c = 0;
  std::vector<T> crop(c * wn);
  for (auto x0 : sx)
    for (auto y0 : sy)
      for (auto z0 : sz) {
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t x = 0; x < window[0]; ++x)
            for (std::size_t y = 0; y < window[1]; ++y) {
              const T* src = &in[ch * n + ((x0 + x) * dims[1] + y0 + y) * dims[2] + z0];
              std::copy(src, src + window[2], &crop[ch * wn + (x * window[1] + y) * window[2]]);
            }
        const Tensor<T> out = predictor(Tensor<T>::from({c, window[0], window[1], window[2]}, crop));
        if (out.rank() != 4 || out.dim(1) != window[0] || out.dim(2) != window[1] || out.dim(3) != window[2]) {
          throw ShapeError("sliding window: predictor returned " + to_string(out.shape()));
        }
        if (acc.empty()) {
          out_c = out.dim(0);
          acc.assign(out_c * n, T(0));
        } else if (out.dim(0) != out_c) {
          throw ShapeError("sliding window: predictor channel count changed between windows");
        }
        const auto ov = out.data();
        for (std::size_t x = 0; x < window[0]; ++x)
          for (std::size_t y = 0; y < window[1]; ++y)
            for (std::size_t z = 0; z < window[2]; ++z) {
              const std::size_t g = ((x0 + x) * dims[1] + y0 + y) * dims[2] + z0 + z;
              const std::size_t l = (x * window[1] + y) * window[2] + z;
              ++count[g];
              for (std::size_t ch = 0; ch < out_c; ++ch) acc[ch * n + g] += ov[ch * wn + l];
            }
      }
  for (std::size_t ch = 0; ch < out_c; ++ch)
    for (std::size_t g = 0; g < n; ++g) acc[ch * n + g] /= static_cast<T>(count[g]);
  return Tensor<T>::from({out_c, dims[0], dims[1], dims[2]}, std::move(acc));
}

template Tensor<float> sliding_window_infer<float>(const Tensor<float>&, const Dims3&, const WindowPredictor<float>&, double);
template Tensor<double> sliding_window_infer<double>(const Tensor<double>&, const Dims3&, const WindowPredictor<double>&,
                                                     double);

}  // namespace drbd
