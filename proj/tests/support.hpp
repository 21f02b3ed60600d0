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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "lesionkit/transform.hpp"
#include "lesionkit/volume.hpp"

namespace testsupport {

using namespace lesionkit;

inline std::filesystem::path data_dir() { return LESIONKIT_TEST_DATA_DIR; }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("lesionkit-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline Volume volume_from(const Dims& d, const Mat4& affine, const std::function<float(std::size_t, std::size_t, std::size_t)>& f,
                          Intent intent = Intent::image) {
  std::vector<float> data(d[0] * d[1] * d[2]);
  std::size_t idx = 0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i) data[idx++] = f(i, j, k);
  return Volume(d, affine, std::move(data), intent);
}

inline Mat4 diag_affine(double sx, double sy, double sz, const Vec3& origin = Vec3::Zero()) {
  Mat4 a = Mat4::Identity();
  a(0, 0) = sx;
  a(1, 1) = sy;
  a(2, 2) = sz;
  a.topRightCorner<3, 1>() = origin;
  return a;
}

/// Smooth head-like phantom in world mm: a soft ellipsoid with internal blobs.
inline double head_phantom(const Vec3& p, const Vec3& center) {
  const Vec3 q = p - center;
  const double r = std::sqrt(q.x() * q.x() / (24.0 * 24.0) + q.y() * q.y() / (27.0 * 27.0) + q.z() * q.z() / (22.0 * 22.0));
  double v = 100.0 / (1.0 + std::exp((r - 1.0) * 12.0));
  auto blob = [&](const Vec3& b, double s, double a) { return a * std::exp(-(q - b).squaredNorm() / (2 * s * s)); };
  v += blob({-8, -2, 4}, 5, 60) + blob({8, 6, -2}, 7, -40) + blob({-2, 12, -6}, 4, 80) + blob({6, -10, 6}, 6, 50);
  return v;
}

/// 64^3 (or n^3) phantom on a unit grid, optionally sampled through a
/// transform: value(x) = head_phantom(t(x)).
inline Volume head_volume(std::size_t n = 64, const RigidTransform& t = RigidTransform::identity(),
                          const Mat4& affine = Mat4::Identity()) {
  const GridSpec grid({n, n, n}, affine);
  const Vec3 center = grid.voxel_to_world(Vec3::Constant((static_cast<double>(n) - 1.0) / 2.0));
  return volume_from({n, n, n}, affine, [&](std::size_t i, std::size_t j, std::size_t k) {
    return static_cast<float>(head_phantom(t.apply(grid.voxel_to_world(Vec3(i, j, k))), center));
  });
}

inline RigidTransform random_rigid(std::mt19937& rng, double max_deg, double max_mm, const Vec3& center) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RigidTransform t;
  t.angles = Vec3(u(rng), u(rng), u(rng)) * (max_deg * M_PI / 180.0);
  t.translation = Vec3(u(rng), u(rng), u(rng)) * (max_mm / std::sqrt(3.0));
  t.center = center;
  return t;
}

/// Rotation angle (degrees) of a rotation matrix.
inline double rotation_angle_deg(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

inline bool bit_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

} // namespace testsupport
