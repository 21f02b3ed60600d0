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

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "lesionkit/nifti.hpp"
#include "lesionkit/pipeline.hpp"

namespace lesionkit::pipeline {

namespace {

struct AtlasGeometry {
  Dims dims;
  double spacing;
};

// Ellipsoid radius in units of the given semi-axes.
double ellipsoid_r(const Vec3& q, const Vec3& radii) {
  return std::sqrt(q.cwiseQuotient(radii).squaredNorm());
}

// T1-like head in world mm around the origin: scalp, skull, CSF, cortex with
// folding, white matter, ventricles, and a face below the frontal lobe.
float head_t1(const Vec3& p) {
  const Vec3 brain_r(66, 82, 58);
  const double rb = ellipsoid_r(p, brain_r);
  const Vec3 face_c(0, 74, -42);
  const double rf = ellipsoid_r(p - face_c, Vec3(42, 26, 30));
  if (rb > 1.0) {
    const double shell = rb - 1.0;
    if (shell < 0.05) return 20.0f;  // CSF
    if (shell < 0.12) return 10.0f;  // skull
    if (shell < 0.2) return 65.0f;   // scalp
    return rf <= 1.0 ? 60.0f : 0.0f; // face soft tissue
  }
  const double theta = std::atan2(p.y(), p.x());
  const double phi = std::atan2(p.z(), std::hypot(p.x(), p.y()));
  const double fold = 0.05 * std::sin(9.0 * theta) * std::cos(7.0 * phi);
  for (double side : {-1.0, 1.0})
    if (ellipsoid_r(p - Vec3(side * 9, 2, 8), Vec3(6, 22, 9)) <= 1.0) return 22.0f;
  if (rb < 0.72 + fold) return 110.0f; // white matter
  return 72.0f;                        // grey matter
}

AtlasGeometry geometry_for(const std::string& name) {
  if (name == "sri24") return {{80, 80, 52}, 3.0};
  if (name == "mni152") return {{91, 109, 91}, 2.0};
  std::string valid;
  for (const auto& n : builtin_atlas_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw InvalidArgument("unknown atlas '" + name + "'; valid names: " + valid + ", or a path to a NIfTI file");
}

} // namespace

std::vector<std::string> builtin_atlas_names() { return {"sri24", "mni152"}; }

Volume builtin_atlas(const std::string& name) {
  const AtlasGeometry g = geometry_for(name);
  Mat4 affine = Mat4::Identity();
  for (int a = 0; a < 3; ++a) {
    affine(a, a) = g.spacing;
    affine(a, 3) = -0.5 * g.spacing * static_cast<double>(g.dims[a] - 1);
  }
  const GridSpec grid(g.dims, affine);
  std::vector<float> data(grid.voxel_count());
  std::size_t idx = 0;
  for (std::size_t k = 0; k < g.dims[2]; ++k)
    for (std::size_t j = 0; j < g.dims[1]; ++j)
      for (std::size_t i = 0; i < g.dims[0]; ++i)
        data[idx++] = head_t1(grid.voxel_to_world(Vec3(double(i), double(j), double(k))));
  return Volume(grid, std::move(data));
}

Volume load_atlas(const std::string& name_or_path) {
  const auto names = builtin_atlas_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
    if (const char* dir = std::getenv(kAtlasDirEnv); dir && *dir) {
      const std::filesystem::path file = std::filesystem::path(dir) / (name_or_path + ".nii.gz");
      if (std::filesystem::exists(file)) return read_nifti(file);
    }
    return builtin_atlas(name_or_path);
  }
  const std::filesystem::path path(name_or_path);
  if (has_nifti_extension(path) || std::filesystem::exists(path)) return read_nifti(path);
  geometry_for(name_or_path); // throws with the list of valid names
  return builtin_atlas(name_or_path);
}

} // namespace lesionkit::pipeline
