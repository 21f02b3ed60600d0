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

#include "lesionkit/volume.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "lesionkit/error.hpp"

namespace lesionkit {

std::string_view to_string(Intent intent) {
  switch (intent) {
  case Intent::image: return "image";
  case Intent::mask: return "mask";
  case Intent::labels: return "labels";
  }
  return "image";
}

Intent intent_from_string(std::string_view name) {
  if (name == "image") return Intent::image;
  if (name == "mask") return Intent::mask;
  if (name == "labels") return Intent::labels;
  throw InvalidArgument("unknown intent '" + std::string(name) + "'");
}

namespace {

void validate_affine(const Mat4& affine) {
  if (!affine.allFinite()) throw InvalidArgument("affine has non-finite entries");
  if (affine(3, 0) != 0.0 || affine(3, 1) != 0.0 || affine(3, 2) != 0.0 || affine(3, 3) != 1.0)
    throw InvalidArgument("affine bottom row must be (0, 0, 0, 1)");
  const double det = affine.topLeftCorner<3, 3>().determinant();
  if (!(std::abs(det) > 1e-12)) throw InvalidArgument("affine is not invertible");
}

} // namespace

GridSpec::GridSpec(Dims dims, const Mat4& affine) : dims_(dims), affine_(affine) {
  for (std::size_t d : dims_)
    if (d < 1) throw InvalidArgument("grid dimensions must be positive");
  validate_affine(affine_);
  inverse_ = affine_.inverse();
}

Vec3 GridSpec::spacing() const {
  return {affine_.col(0).head<3>().norm(), affine_.col(1).head<3>().norm(),
          affine_.col(2).head<3>().norm()};
}

Vec3 GridSpec::voxel_to_world(const Vec3& index) const {
  return affine_.topLeftCorner<3, 3>() * index + affine_.topRightCorner<3, 1>();
}

Vec3 GridSpec::world_to_voxel(const Vec3& world) const {
  return inverse_.topLeftCorner<3, 3>() * world + inverse_.topRightCorner<3, 1>();
}

bool GridSpec::operator==(const GridSpec& other) const noexcept {
  return dims_ == other.dims_ && affine_ == other.affine_;
}

Volume::Volume(GridSpec grid, std::vector<float> data, Intent intent)
    : grid_(std::move(grid)), data_(std::move(data)), intent_(intent) {
  if (data_.size() != grid_.voxel_count()) {
    std::ostringstream msg;
    msg << "volume data holds " << data_.size() << " values but the grid has "
        << grid_.voxel_count() << " voxels";
    throw InvalidArgument(msg.str());
  }
  if (intent_ == Intent::mask) {
    for (float v : data_)
      if (v != 0.0f && v != 1.0f) throw InvalidArgument("mask volume holds values other than 0 and 1");
  } else if (intent_ == Intent::labels) {
    for (float v : data_)
      if (!(v >= 0.0f) || v != std::floor(v))
        throw InvalidArgument("label volume holds negative or non-integer values");
  }
}

Volume::Volume(Dims dims, const Mat4& affine, std::vector<float> data, Intent intent)
    : Volume(GridSpec(dims, affine), std::move(data), intent) {}

Volume Volume::zeros(const GridSpec& grid, Intent intent) {
  return Volume(grid, std::vector<float>(grid.voxel_count(), 0.0f), intent);
}

Volume Volume::with_data(std::vector<float> data, Intent intent) const {
  return Volume(grid_, std::move(data), intent);
}

void require_same_dims(const Volume& a, const Volume& b, std::string_view what) {
  if (a.dims() != b.dims()) {
    std::ostringstream msg;
    msg << what << ": dimension mismatch (" << a.dims()[0] << "x" << a.dims()[1] << "x"
        << a.dims()[2] << " vs " << b.dims()[0] << "x" << b.dims()[1] << "x" << b.dims()[2] << ")";
    throw InvalidArgument(msg.str());
  }
}

} // namespace lesionkit
