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

#include <filesystem>
#include <string>

#include "lesionkit/volume.hpp"

namespace lesionkit {

/// Six-parameter rigid motion about a fixed center:
///
///     x' = R (x - center) + center + translation
///
/// with R = Rz(angles.z) * Ry(angles.y) * Rx(angles.x). Angles are radians,
/// translation and center are world millimetres.
///
/// Throughout the library a transform used for resampling maps *target*
/// world coordinates to *source* world coordinates (pull-back convention).
struct RigidTransform {
  Vec3 angles = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
  Vec3 center = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Vec3::Zero(), t, Vec3::Zero()}; }

  /// Build the transform whose homogeneous matrix is `m`, expressed about
  /// `center`. Throws InvalidArgument when the linear block is not a proper
  /// rotation within `tolerance`.
  static RigidTransform from_matrix(const Mat4& m, const Vec3& center = Vec3::Zero(),
                                    double tolerance = 1e-9);

  Mat3 rotation() const;
  Mat4 matrix() const;
  Vec3 apply(const Vec3& point) const;
};

/// Rotation matrix Rz * Ry * Rx for the given angles.
Mat3 rotation_zyx(const Vec3& angles);

/// Angles (x, y, z) with rotation_zyx(angles) == r.
Vec3 angles_from_rotation(const Mat3& r);

/// Transform equivalent to applying `b` first and then `a`.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// Exact rigid inverse (transposed rotation, negated translation).
RigidTransform invert(const RigidTransform& t);

/// Largest absolute entry-wise difference between the two matrices.
double max_matrix_difference(const RigidTransform& a, const RigidTransform& b);

/// Version tag written on the first line of transform files.
inline constexpr const char* kTransformFormatVersion = "lesionkit-rigid-transform v1";

/// Plain-text transform file: a version line, four lines holding the
/// homogeneous matrix row by row, then one line with the rotation center.
void save_transform(const RigidTransform& t, const std::filesystem::path& path);
RigidTransform load_transform(const std::filesystem::path& path);

std::string format_transform(const RigidTransform& t);
RigidTransform parse_transform(const std::string& text);

} // namespace lesionkit
