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

#include "lesionkit/volume.hpp"

namespace lesionkit::eval {

/// Integer instance map: 0 is background, instances are numbered 1..N.
struct InstanceMap {
  GridSpec grid;
  std::vector<std::uint32_t> labels;
  std::uint32_t n_instances = 0;
  int connectivity = 26;    ///< connectivity used to extract the instances
  bool pre_labeled = false; ///< supplied externally rather than derived

  const Dims& dims() const noexcept { return grid.dims(); }
  Vec3 spacing() const { return grid.spacing(); }

  /// Voxel count of every label, indexed by label (index 0 is background).
  std::vector<std::size_t> sizes() const;

  /// Accept an existing label volume. Labels are compacted to 1..N in order of
  /// increasing original value; components are not checked.
  static InstanceMap from_labels(const Volume& labels);

  Volume to_volume() const;
};

/// Default connectivity for the grid: 26 in 3D, 8 for single-slice grids.
int default_connectivity(const GridSpec& grid);

/// Throws InvalidArgument unless `connectivity` suits the grid's
/// dimensionality (4 or 8 for single-slice grids, 6, 18 or 26 otherwise).
void check_connectivity(const GridSpec& grid, int connectivity);

/// Neighbour offsets (dx, dy, dz) for a connectivity, excluding (0, 0, 0).
std::vector<std::array<int, 3>> neighbor_offsets(int connectivity);

/// Label the connected components of a binary mask. Instances are numbered
/// 1..N in order of their first voxel in storage order (first axis fastest).
InstanceMap connected_components(const Volume& mask, std::optional<int> connectivity = std::nullopt);

/// Mask holding only the largest component (lowest label wins ties); an
/// all-zero mask when there is no foreground.
Volume largest_component(const Volume& mask, int connectivity);

} // namespace lesionkit::eval
