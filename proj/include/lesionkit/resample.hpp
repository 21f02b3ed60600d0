/*=========================================================================
 *
 *  Copyright The lesionkit contributors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         https://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/

#pragma once

#include <cmath>
#include <cstddef>

#include "lesionkit/transform.hpp"
#include "lesionkit/volume.hpp"

namespace lesionkit {

enum class Interpolation { trilinear, nearest };

/// Resample `source` onto `target`.
///
/// `pull_back` maps target world coordinates to source world coordinates:
/// output voxel x takes the source value at pull_back(affine_target * x).
/// Samples falling outside the source grid take `fill`. Masks and label maps
/// always use nearest-neighbour interpolation.
Volume resample(const Volume& source, const GridSpec& target, const RigidTransform& pull_back,
                Interpolation interp = Interpolation::trilinear, float fill = 0.0f);

/// Permute and flip voxel axes so the affine is as close as possible to RAS
/// (first axis toward Right, second Anterior, third Superior). The world
/// position of every voxel is unchanged.
Volume reorient_to_canonical(const Volume& v);

/// True when reorient_to_canonical would return the volume unchanged.
bool is_canonical(const GridSpec& grid);

/// Voxel-index mapping from target grid indices to source grid indices,
/// A_source^-1 * T * A_target.
Mat4 index_mapping(const GridSpec& source, const GridSpec& target, const RigidTransform& pull_back);

namespace detail {

inline double snap(double x) {
  const double r = std::nearbyint(x);
  return std::abs(x - r) < 1e-9 ? r : x;
}

/// Trilinear sample at a continuous index; false when outside [0, dim-1].
inline bool sample_linear(const float* data, const Dims& dims, double x, double y, double z,
                          float& out) {
  x = snap(x);
  y = snap(y);
  z = snap(z);
  const double mx = static_cast<double>(dims[0] - 1);
  const double my = static_cast<double>(dims[1] - 1);
  const double mz = static_cast<double>(dims[2] - 1);
  if (!(x >= 0.0 && y >= 0.0 && z >= 0.0 && x <= mx && y <= my && z <= mz)) return false;
  std::size_t i0 = static_cast<std::size_t>(x);
  std::size_t j0 = static_cast<std::size_t>(y);
  std::size_t k0 = static_cast<std::size_t>(z);
  if (i0 + 1 >= dims[0]) i0 = dims[0] > 1 ? dims[0] - 2 : 0;
  if (j0 + 1 >= dims[1]) j0 = dims[1] > 1 ? dims[1] - 2 : 0;
  if (k0 + 1 >= dims[2]) k0 = dims[2] > 1 ? dims[2] - 2 : 0;
  const double fx = x - static_cast<double>(i0);
  const double fy = y - static_cast<double>(j0);
  const double fz = z - static_cast<double>(k0);
  const std::size_t sx = dims[0] > 1 ? 1 : 0;
  const std::size_t sy = dims[1] > 1 ? dims[0] : 0;
  const std::size_t sz = dims[2] > 1 ? dims[0] * dims[1] : 0;
  const float* p = data + i0 + dims[0] * (j0 + dims[1] * k0);
  const double c00 = p[0] + fx * (p[sx] - p[0]);
  const double c10 = p[sy] + fx * (p[sy + sx] - p[sy]);
  const double c01 = p[sz] + fx * (p[sz + sx] - p[sz]);
  const double c11 = p[sz + sy] + fx * (p[sz + sy + sx] - p[sz + sy]);
  const double c0 = c00 + fy * (c10 - c00);
  const double c1 = c01 + fy * (c11 - c01);
  out = static_cast<float>(c0 + fz * (c1 - c0));
  return true;
}

inline bool sample_nearest(const float* data, const Dims& dims, double x, double y, double z,
                           float& out) {
  const double rx = std::floor(x + 0.5);
  const double ry = std::floor(y + 0.5);
  const double rz = std::floor(z + 0.5);
  if (!(rx >= 0.0 && ry >= 0.0 && rz >= 0.0 && rx < static_cast<double>(dims[0]) &&
        ry < static_cast<double>(dims[1]) && rz < static_cast<double>(dims[2])))
    return false;
  out = data[static_cast<std::size_t>(rx) +
             dims[0] * (static_cast<std::size_t>(ry) + dims[1] * static_cast<std::size_t>(rz))];
  return true;
}

} // namespace detail

} // namespace lesionkit
