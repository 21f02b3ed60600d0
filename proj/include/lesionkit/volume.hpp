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

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lesionkit {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Dims = std::array<std::size_t, 3>;

enum class Intent { image, mask, labels };

std::string_view to_string(Intent intent);
Intent intent_from_string(std::string_view name);

/// Voxel grid geometry: dimensions plus the voxel-to-world affine (mm).
///
/// The affine maps a continuous voxel index (i, j, k) to scanner world
/// coordinates. Its bottom row must be (0, 0, 0, 1) and it must be invertible.
class GridSpec {
public:
  GridSpec(Dims dims, const Mat4& affine);

  const Dims& dims() const noexcept { return dims_; }
  const Mat4& affine() const noexcept { return affine_; }
  const Mat4& inverse_affine() const noexcept { return inverse_; }
  std::size_t voxel_count() const noexcept { return dims_[0] * dims_[1] * dims_[2]; }

  /// Euclidean norms of the affine's first three columns.
  Vec3 spacing() const;

  /// True for single-slice grids (third axis of extent 1).
  bool is_planar() const noexcept { return dims_[2] == 1; }

  Vec3 voxel_to_world(const Vec3& index) const;
  Vec3 world_to_voxel(const Vec3& world) const;

  std::size_t linear_index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return i + dims_[0] * (j + dims_[1] * k);
  }

  bool operator==(const GridSpec& other) const noexcept;

private:
  Dims dims_;
  Mat4 affine_;
  Mat4 inverse_;
};

/// A 3D scalar image with world geometry. Immutable once constructed; every
/// operation in the library returns a new Volume.
///
/// Voxels are stored with the first axis varying fastest, matching NIfTI
/// file order.
class Volume {
public:
  Volume(GridSpec grid, std::vector<float> data, Intent intent = Intent::image);
  Volume(Dims dims, const Mat4& affine, std::vector<float> data, Intent intent = Intent::image);

  /// Zero-filled volume on a grid.
  static Volume zeros(const GridSpec& grid, Intent intent = Intent::image);

  const GridSpec& grid() const noexcept { return grid_; }
  const Dims& dims() const noexcept { return grid_.dims(); }
  const Mat4& affine() const noexcept { return grid_.affine(); }
  Vec3 spacing() const { return grid_.spacing(); }
  Intent intent() const noexcept { return intent_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const float> data() const noexcept { return data_; }
  float operator[](std::size_t linear) const noexcept { return data_[linear]; }
  float at(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return data_[grid_.linear_index(i, j, k)];
  }

  Vec3 voxel_to_world(const Vec3& index) const { return grid_.voxel_to_world(index); }
  Vec3 world_to_voxel(const Vec3& world) const { return grid_.world_to_voxel(world); }

  /// Same geometry, new voxel values.
  Volume with_data(std::vector<float> data, Intent intent) const;
  Volume with_data(std::vector<float> data) const { return with_data(std::move(data), intent_); }

  /// Copy with a different intent; values are validated against it.
  Volume with_intent(Intent intent) const { return with_data(data_, intent); }

private:
  GridSpec grid_;
  std::vector<float> data_;
  Intent intent_;
};

/// Throws InvalidArgument unless both volumes have equal dims.
void require_same_dims(const Volume& a, const Volume& b, std::string_view what);

} // namespace lesionkit
