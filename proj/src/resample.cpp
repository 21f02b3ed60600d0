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

#include "lesionkit/resample.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace lesionkit {

Mat4 index_mapping(const GridSpec& source, const GridSpec& target, const RigidTransform& pull_back) {
  return source.inverse_affine() * pull_back.matrix() * target.affine();
}

Volume resample(const Volume& source, const GridSpec& target, const RigidTransform& pull_back,
                Interpolation interp, float fill) {
  if (source.intent() != Intent::image) interp = Interpolation::nearest;
  const Mat4 m = index_mapping(source.grid(), target, pull_back);
  const Dims& td = target.dims();
  const Dims& sd = source.dims();
  const float* src = source.data().data();
  std::vector<float> out(target.voxel_count(), fill);

  std::size_t idx = 0;
  for (std::size_t k = 0; k < td[2]; ++k) {
    for (std::size_t j = 0; j < td[1]; ++j) {
      const Vec3 row = m.topLeftCorner<3, 3>() * Vec3(0.0, static_cast<double>(j), static_cast<double>(k)) +
                       m.topRightCorner<3, 1>();
      const Vec3 step = m.col(0).head<3>();
      for (std::size_t i = 0; i < td[0]; ++i, ++idx) {
        const Vec3 p = row + static_cast<double>(i) * step;
        float value;
        const bool inside = interp == Interpolation::nearest
                                ? detail::sample_nearest(src, sd, p.x(), p.y(), p.z(), value)
                                : detail::sample_linear(src, sd, p.x(), p.y(), p.z(), value);
        if (inside) out[idx] = value;
      }
    }
  }
  Intent intent = source.intent();
  // The fill value may not be a legal mask/label value; fall back to an image.
  if (intent == Intent::mask && fill != 0.0f && fill != 1.0f) intent = Intent::image;
  if (intent == Intent::labels && (fill < 0.0f || fill != std::floor(fill))) intent = Intent::image;
  return Volume(target, std::move(out), intent);
}

namespace {

struct AxisPlan {
  std::array<int, 3> source_axis{0, 1, 2}; ///< input axis feeding output axis w
  std::array<bool, 3> flip{false, false, false};
};

AxisPlan plan_canonical(const GridSpec& grid) {
  Mat3 m = grid.affine().topLeftCorner<3, 3>();
  for (int c = 0; c < 3; ++c) m.col(c).normalize();
  std::array<int, 3> perm{0, 1, 2};
  std::array<int, 3> best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int w = 0; w < 3; ++w) score += std::abs(m(w, perm[w]));
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  AxisPlan plan;
  plan.source_axis = best;
  for (int w = 0; w < 3; ++w) plan.flip[w] = m(w, best[w]) < 0.0;
  return plan;
}

bool is_identity(const AxisPlan& plan) {
  return plan.source_axis == std::array<int, 3>{0, 1, 2} && !plan.flip[0] && !plan.flip[1] && !plan.flip[2];
}

} // namespace

bool is_canonical(const GridSpec& grid) { return is_identity(plan_canonical(grid)); }

Volume reorient_to_canonical(const Volume& v) {
  const AxisPlan plan = plan_canonical(v.grid());
  if (is_identity(plan)) return v;

  const Dims& in_dims = v.dims();
  Dims out_dims{};
  for (int w = 0; w < 3; ++w) out_dims[w] = in_dims[plan.source_axis[w]];

  // Homogeneous map from output index to input index.
  Mat4 out_to_in = Mat4::Zero();
  out_to_in(3, 3) = 1.0;
  for (int w = 0; w < 3; ++w) {
    const int a = plan.source_axis[w];
    if (plan.flip[w]) {
      out_to_in(a, w) = -1.0;
      out_to_in(a, 3) = static_cast<double>(in_dims[a] - 1);
    } else {
      out_to_in(a, w) = 1.0;
    }
  }
  const Mat4 affine = v.affine() * out_to_in;

  std::array<std::size_t, 3> in_stride{1, in_dims[0], in_dims[0] * in_dims[1]};
  std::vector<float> out(v.size());
  std::size_t idx = 0;
  for (std::size_t k = 0; k < out_dims[2]; ++k)
    for (std::size_t j = 0; j < out_dims[1]; ++j)
      for (std::size_t i = 0; i < out_dims[0]; ++i, ++idx) {
        const std::array<std::size_t, 3> o{i, j, k};
        std::size_t src = 0;
        for (int w = 0; w < 3; ++w) {
          const int a = plan.source_axis[w];
          const std::size_t coord = plan.flip[w] ? in_dims[a] - 1 - o[w] : o[w];
          src += coord * in_stride[a];
        }
        out[idx] = v[src];
      }
  return Volume(out_dims, affine, std::move(out), v.intent());
}

} // namespace lesionkit
