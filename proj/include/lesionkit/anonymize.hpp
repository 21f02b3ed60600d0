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

#include "lesionkit/volume.hpp"

namespace lesionkit::anon {

struct MaskedVolume {
  Volume volume;
  bool empty_mask = false; ///< warning: the mask selected nothing
};

/// Zero every voxel outside the mask; voxels inside are copied bit-exactly.
MaskedVolume apply_brain_mask(const Volume& v, const Volume& mask);

/// Cutting plane in world millimetres. Voxels with normal·x > offset + buffer
/// are removed.
struct DefacePlane {
  Vec3 normal = Vec3::UnitY();
  double offset = 0.0;
  double buffer = 0.0;
};

struct DefaceResult {
  Volume volume;
  DefacePlane plane;
  std::size_t zeroed = 0; ///< voxels on the removed side
};

inline constexpr double kDefaultDefaceBuffer = 10.0;

/// Quickshear defacing for volumes in canonical RAS orientation.
///
/// The brain mask is OR-projected along the left-right axis, the convex hull
/// of the projection is taken in the (anterior, superior) plane, and the hull
/// edge facing the anterior-inferior direction is extended into a plane that
/// is constant along left-right. Everything beyond the plane, shifted by
/// `buffer_mm` away from the brain, is set to 0.
///
/// Throws InvalidArgument for an empty mask, a non-canonical grid or a
/// negative buffer, and DegenerateInput when the projected mask reaches the
/// anterior-inferior corner of the volume.
DefaceResult quickshear_deface(const Volume& v, const Volume& brain_mask, double buffer_mm = kDefaultDefaceBuffer);

/// Non-learned brain mask estimate for T1-like contrast, not for clinical use:
/// Otsu threshold, largest 26-connected component, closing with a ball of
/// radius 2 voxels, hole filling.
Volume estimate_brain_mask_fallback(const Volume& v);

/// Morphological closing with a Euclidean ball of `radius` voxels. The grid
/// is padded internally so the border does not erode the result.
Volume binary_closing(const Volume& mask, double radius);

/// Set background voxels not reachable from the grid border (face
/// connectivity) to foreground.
Volume fill_holes(const Volume& mask);

} // namespace lesionkit::anon
