#pragma once

#include <functional>
#include <vector>

#include "drbd/morton.hpp"
#include "drbd/tensor.hpp"

namespace drbd {

/// Window origins along one axis: multiples of the stride
/// max(1, round(window * (1 - overlap))), with the last origin moved to
/// extent - window so the far edge is always covered.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, double overlap = 0.5);

/// Number of windows covering every voxel, row-major over dims.
std::vector<std::uint32_t> window_coverage(const Dims3& dims, const Dims3& window, double overlap = 0.5);

template <class T>
using WindowPredictor = std::function<Tensor<T>(const Tensor<T>&)>;

/// Tiles a [C, X, Y, Z] volume with windows, runs `predictor` on each crop
/// (it must return [C', wx, wy, wz]) and averages the overlapping outputs
/// with uniform weights, visiting windows in row-major origin order. Runs
/// without graph recording. Throws ShapeError if the window exceeds the
/// volume.
template <class T>
Tensor<T> sliding_window_infer(const Tensor<T>& volume, const Dims3& window, const WindowPredictor<T>& predictor,
                               double overlap = 0.5);

}  // namespace drbd
