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

#include "lesionkit/filters.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lesionkit/error.hpp"
#include "lesionkit/resample.hpp"

namespace lesionkit {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& w : k) w /= sum;
  return k;
}

void blur_axis(std::vector<float>& data, const Dims& dims, int axis, double sigma) {
  if (sigma <= 0.0 || dims[axis] == 1) return;
  const auto kernel = gaussian_kernel(sigma);
  const long radius = static_cast<long>(kernel.size() / 2);
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? dims[0] : dims[0] * dims[1];
  const long n = static_cast<long>(dims[axis]);
  std::vector<double> line(n);
  const std::size_t total = dims[0] * dims[1] * dims[2];
  for (std::size_t start = 0; start < total; ++start) {
    // Visit each line once, from the voxel whose coordinate on `axis` is 0.
    const std::size_t coord = (start / stride) % dims[axis];
    if (coord != 0) continue;
    for (long i = 0; i < n; ++i) line[i] = data[start + i * stride];
    for (long i = 0; i < n; ++i) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t) {
        const long s = std::clamp(i + t, 0L, n - 1);
        acc += kernel[t + radius] * line[s];
      }
      data[start + i * stride] = static_cast<float>(acc);
    }
  }
}

} // namespace

Volume gaussian_smooth(const Volume& v, const Vec3& sigma_voxels) {
  std::vector<float> data(v.data().begin(), v.data().end());
  for (int axis = 0; axis < 3; ++axis) blur_axis(data, v.dims(), axis, sigma_voxels[axis]);
  return v.with_data(std::move(data), Intent::image);
}

GridSpec coarsen_grid(const GridSpec& grid, std::size_t factor) {
  if (factor == 0) throw InvalidArgument("downsample factor must be positive");
  Dims dims{};
  for (int a = 0; a < 3; ++a) dims[a] = std::max<std::size_t>(1, (grid.dims()[a] + factor - 1) / factor);
  Mat4 scale = Mat4::Identity();
  const double f = static_cast<double>(factor);
  for (int a = 0; a < 3; ++a) {
    if (grid.dims()[a] == 1) continue;
    scale(a, a) = f;
    scale(a, 3) = 0.5 * (f - 1.0);
  }
  return GridSpec(dims, grid.affine() * scale);
}

Volume downsample(const Volume& v, std::size_t factor) {
  if (factor == 1) return v;
  const double sigma = 0.5 * static_cast<double>(factor);
  const Volume smooth = gaussian_smooth(v, Vec3(sigma, sigma, sigma));
  // Replicate edges rather than fill with zeros: the last coarse voxel may sit
  // just past the final fine index.
  const GridSpec target = coarsen_grid(v.grid(), factor);
  std::vector<float> out(target.voxel_count());
  const Dims& sd = v.dims();
  std::size_t idx = 0;
  for (std::size_t k = 0; k < target.dims()[2]; ++k)
    for (std::size_t j = 0; j < target.dims()[1]; ++j)
      for (std::size_t i = 0; i < target.dims()[0]; ++i, ++idx) {
        const Vec3 src = v.grid().world_to_voxel(target.voxel_to_world(
            Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k))));
        const double x = std::clamp(src.x(), 0.0, static_cast<double>(sd[0] - 1));
        const double y = std::clamp(src.y(), 0.0, static_cast<double>(sd[1] - 1));
        const double z = std::clamp(src.z(), 0.0, static_cast<double>(sd[2] - 1));
        float value = 0.0f;
        detail::sample_linear(smooth.data().data(), sd, x, y, z, value);
        out[idx] = value;
      }
  return Volume(target, std::move(out), Intent::image);
}

} // namespace lesionkit
