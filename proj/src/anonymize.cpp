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

#include "lesionkit/anonymize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "lesionkit/error.hpp"
#include "lesionkit/intensity.hpp"
#include "lesionkit/labeling.hpp"
#include "lesionkit/metrics.hpp"
#include "lesionkit/resample.hpp"

namespace lesionkit::anon {

namespace {

void require_mask(const Volume& mask, const char* what) {
  if (mask.intent() != Intent::mask) throw InvalidArgument(std::string(what) + ": mask volume must have mask intent");
}

struct Point2 {
  long a, s;
};

long cross(const Point2& o, const Point2& p, const Point2& q) {
  return (p.a - o.a) * (q.s - o.s) - (p.s - o.s) * (q.a - o.a);
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& x, const Point2& y) { return x.a != y.a ? x.a < y.a : x.s < y.s; });
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

} // namespace

MaskedVolume apply_brain_mask(const Volume& v, const Volume& mask) {
  require_same_dims(v, mask, "apply_brain_mask");
  require_mask(mask, "apply_brain_mask");
  std::vector<float> out(v.size(), 0.0f);
  bool any = false;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask[i] != 0.0f) {
      out[i] = v[i];
      any = true;
    }
  return {v.with_data(std::move(out)), !any};
}

DefaceResult quickshear_deface(const Volume& v, const Volume& brain_mask, double buffer_mm) {
  require_same_dims(v, brain_mask, "quickshear_deface");
  require_mask(brain_mask, "quickshear_deface");
  if (!(buffer_mm >= 0.0)) throw InvalidArgument("quickshear_deface: buffer must be non-negative");
  if (!is_canonical(v.grid())) throw InvalidArgument("quickshear_deface: volume must be in canonical RAS orientation");

  const Dims& d = v.dims();
  const std::size_t na = d[1], ns = d[2];
  std::vector<char> projection(na * ns, 0);
  for (std::size_t k = 0; k < ns; ++k)
    for (std::size_t j = 0; j < na; ++j)
      for (std::size_t i = 0; i < d[0]; ++i)
        if (brain_mask.at(i, j, k) != 0.0f) {
          projection[j + na * k] = 1;
          break;
        }

  std::vector<Point2> pts;
  for (std::size_t k = 0; k < ns; ++k)
    for (std::size_t j = 0; j < na; ++j)
      if (projection[j + na * k]) pts.push_back({static_cast<long>(j), static_cast<long>(k)});
  if (pts.empty()) throw InvalidArgument("quickshear_deface: brain mask is empty");
  if (projection[(na - 1) + na * 0])
    throw DegenerateInput("quickshear_deface: brain mask reaches the anterior-inferior corner; no cutting plane exists");

  const Vec3 spacing = v.spacing();
  const double sa = spacing[1], ss = spacing[2];
  const std::vector<Point2> hull = convex_hull(pts);

  // Outward normal (in mm) of the hull edge facing anterior-inferior.
  double na_mm = 1.0 / std::sqrt(2.0), ns_mm = -1.0 / std::sqrt(2.0);
  if (hull.size() >= 2) {
    double best = -HUGE_VAL;
    for (std::size_t e = 0; e < hull.size(); ++e) {
      const Point2& p = hull[e];
      const Point2& q = hull[(e + 1) % hull.size()];
      const double ea = static_cast<double>(q.a - p.a) * sa;
      const double es = static_cast<double>(q.s - p.s) * ss;
      const double len = std::hypot(ea, es);
      if (len == 0.0) continue;
      const double ca = es / len, cs = -ea / len;
      const double score = (ca - cs) / std::sqrt(2.0);
      if (score > best) {
        best = score;
        na_mm = ca;
        ns_mm = cs;
      }
    }
  }

  auto side = [&](std::size_t j, std::size_t k) {
    return na_mm * (static_cast<double>(j) * sa) + ns_mm * (static_cast<double>(k) * ss);
  };
  double offset = -HUGE_VAL;
  for (const auto& p : pts) offset = std::max(offset, side(static_cast<std::size_t>(p.a), static_cast<std::size_t>(p.s)));
  const double cut = offset + buffer_mm;

  std::vector<char> remove(na * ns, 0);
  for (std::size_t k = 0; k < ns; ++k)
    for (std::size_t j = 0; j < na; ++j) remove[j + na * k] = side(j, k) > cut;

  std::vector<float> out(v.data().begin(), v.data().end());
  std::size_t zeroed = 0;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < ns; ++k)
    for (std::size_t j = 0; j < na; ++j)
      for (std::size_t i = 0; i < d[0]; ++i, ++idx)
        if (remove[j + na * k]) {
          out[idx] = 0.0f;
          ++zeroed;
        }

  // Same plane in world coordinates: the index-space gradient
  // (0, na*sa, ns*ss) maps through the inverse-transpose of the affine.
  const Mat3 m = v.affine().topLeftCorner<3, 3>();
  const Vec3 grad_index(0.0, na_mm * sa, ns_mm * ss);
  const Vec3 grad_world = m.inverse().transpose() * grad_index;
  const double scale = grad_world.norm();
  DefacePlane plane;
  plane.normal = grad_world / scale;
  // side() is measured from voxel (0,0,0); shift by the world origin term.
  plane.offset = offset / scale + plane.normal.dot(v.affine().topRightCorner<3, 1>());
  plane.buffer = buffer_mm / scale;
  return {v.with_data(std::move(out)), plane, zeroed};
}

Volume binary_closing(const Volume& mask, double radius) {
  require_mask(mask, "binary_closing");
  const Dims& d = mask.dims();
  const auto pad = static_cast<std::size_t>(std::ceil(radius)) + 1;
  Dims pd{};
  std::array<std::size_t, 3> off{};
  for (int a = 0; a < 3; ++a) {
    off[a] = d[a] > 1 ? pad : 0;
    pd[a] = d[a] + 2 * off[a];
  }
  const std::size_t n = pd[0] * pd[1] * pd[2];
  std::vector<std::uint8_t> fg(n, 0);
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i)
        fg[(i + off[0]) + pd[0] * ((j + off[1]) + pd[1] * (k + off[2]))] = mask.at(i, j, k) != 0.0f;

  const double r2 = radius * radius;
  const auto to_fg = eval::squared_distance_transform(fg, pd, Vec3::Ones());
  std::vector<std::uint8_t> background(n);
  for (std::size_t i = 0; i < n; ++i) background[i] = !(to_fg[i] <= r2);
  const auto to_bg = eval::squared_distance_transform(background, pd, Vec3::Ones());

  std::vector<float> out(mask.size());
  std::size_t idx = 0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i, ++idx)
        out[idx] = to_bg[(i + off[0]) + pd[0] * ((j + off[1]) + pd[1] * (k + off[2]))] > r2 ? 1.0f : 0.0f;
  return mask.with_data(std::move(out), Intent::mask);
}

Volume fill_holes(const Volume& mask) {
  require_mask(mask, "fill_holes");
  const Dims& d = mask.dims();
  const std::array<std::size_t, 3> stride{1, d[0], d[0] * d[1]};
  std::vector<char> outside(mask.size(), 0);
  std::deque<std::size_t> queue;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i, ++idx) {
        if (mask[idx] != 0.0f) continue;
        const std::array<std::size_t, 3> p{i, j, k};
        bool border = false;
        for (int a = 0; a < 3; ++a)
          if (d[a] > 1 && (p[a] == 0 || p[a] + 1 == d[a])) border = true;
        if (border) {
          outside[idx] = 1;
          queue.push_back(idx);
        }
      }
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    const std::array<std::size_t, 3> p{cur % d[0], cur / d[0] % d[1], cur / stride[2]};
    for (int a = 0; a < 3; ++a) {
      if (d[a] == 1) continue;
      if (p[a] > 0) {
        const std::size_t nb = cur - stride[a];
        if (!outside[nb] && mask[nb] == 0.0f) {
          outside[nb] = 1;
          queue.push_back(nb);
        }
      }
      if (p[a] + 1 < d[a]) {
        const std::size_t nb = cur + stride[a];
        if (!outside[nb] && mask[nb] == 0.0f) {
          outside[nb] = 1;
          queue.push_back(nb);
        }
      }
    }
  }
  std::vector<float> out(mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = outside[i] ? 0.0f : 1.0f;
  return mask.with_data(std::move(out), Intent::mask);
}

Volume estimate_brain_mask_fallback(const Volume& v) {
  const double threshold = intensity::otsu_threshold(v);
  std::vector<float> m(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] >= threshold ? 1.0f : 0.0f;
  const int conn = eval::default_connectivity(v.grid());
  Volume mask = eval::largest_component(v.with_data(std::move(m), Intent::mask), conn);
  mask = fill_holes(binary_closing(mask, 2.0));
  return eval::largest_component(mask, conn);
}

} // namespace lesionkit::anon
