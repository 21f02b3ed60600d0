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

#include <cstdint>
#include <optional>
#include <vector>

#include "lesionkit/labeling.hpp"
#include "lesionkit/volume.hpp"

namespace lesionkit::eval {

/// Binary voxel set on a grid with physical spacing.
struct Region {
  Dims dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();
  std::vector<std::uint8_t> voxels;

  std::size_t count() const;
  bool planar() const noexcept { return dims[2] == 1; }

  static Region from_mask(const Volume& mask);
  static Region from_label(const InstanceMap& map, std::uint32_t label);
};

/// 2|A∩B| / (|A|+|B|). Throws InvalidArgument when both regions are empty
/// or the grids differ.
double dice(const Region& a, const Region& b);

/// |A∩B| / |A∪B|, with the same preconditions as dice().
double iou(const Region& a, const Region& b);

/// Exact squared Euclidean distance (in mm²) from every voxel to the nearest
/// feature voxel; +inf everywhere when there are no features.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& features, const Dims& dims,
                                               const Vec3& spacing);

/// Foreground voxels with a face neighbour that is background or outside the
/// grid. Axes of extent 1 contribute no neighbours.
std::vector<std::uint8_t> surface_voxels(const Region& r);

/// Average symmetric surface distance in mm. Throws InvalidArgument when
/// either region is empty.
double assd(const Region& a, const Region& b);

/// Topology-preserving thinning to a centreline: 26/6 simple points in 3D,
/// 8/4 in 2D, directional sub-iterations, curve endpoints kept.
Region skeletonize(const Region& r);

/// Centreline Dice. Throws InvalidArgument for an empty input; nullopt when
/// a skeleton comes out empty.
std::optional<double> cl_dice(const Region& pred, const Region& ref);

} // namespace lesionkit::eval
