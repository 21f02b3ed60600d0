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

#include "lesionkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "lesionkit/error.hpp"

namespace lesionkit::eval {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_grid(const Region& a, const Region& b) {
  if (a.dims != b.dims) throw InvalidArgument("regions have different dimensions");
  if (a.voxels.size() != a.dims[0] * a.dims[1] * a.dims[2] || b.voxels.size() != a.voxels.size())
    throw InvalidArgument("region storage does not match its dimensions");
}

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap overlap(const Region& a, const Region& b) {
  require_same_grid(a, b);
  Overlap o;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    o.a += a.voxels[i] != 0;
    o.b += b.voxels[i] != 0;
    o.both += (a.voxels[i] != 0 && b.voxels[i] != 0);
  }
  if (o.a == 0 && o.b == 0) throw InvalidArgument("overlap score of two empty regions is undefined");
  return o;
}

// Lower envelope of parabolas (Felzenszwalb and Huttenlocher) along one line.
void distance_1d(const double* f, std::size_t n, double spacing, double* out, std::vector<std::size_t>& v,
                 std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  long k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double pq = static_cast<double>(q) * spacing;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    for (;;) {
      const double pv = static_cast<double>(v[k]) * spacing;
      s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      if (s > z[k]) break; // z[0] is -inf, so k never drops below 0
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  long j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double pq = static_cast<double>(q) * spacing;
    while (z[j + 1] < pq) ++j;
    const double d = (static_cast<double>(q) - static_cast<double>(v[j])) * spacing;
    out[q] = d * d + f[v[j]];
  }
}

// 3x3x3 neighbourhood cell index for an offset in {-1,0,1}^3; the centre is 13.
constexpr int cell(int dx, int dy, int dz) { return (dx + 1) + 3 * (dy + 1) + 9 * (dz + 1); }

struct CubeTopology {
  std::array<std::vector<int>, 27> adj26, adj6, adj8, adj4;
  std::array<bool, 27> in18{}, face6{}, in_plane{}, face4{};

  CubeTopology() {
    for (int a = 0; a < 27; ++a) {
      const int ax = a % 3 - 1, ay = a / 3 % 3 - 1, az = a / 9 - 1;
      const int l1 = std::abs(ax) + std::abs(ay) + std::abs(az);
      in18[a] = l1 >= 1 && l1 <= 2;
      face6[a] = l1 == 1;
      in_plane[a] = az == 0 && a != 13;
      face4[a] = az == 0 && l1 == 1;
      for (int b = 0; b < 27; ++b) {
        if (a == b || a == 13 || b == 13) continue;
        const int bx = b % 3 - 1, by = b / 3 % 3 - 1, bz = b / 9 - 1;
        const int dx = std::abs(ax - bx), dy = std::abs(ay - by), dz = std::abs(az - bz);
        if (dx > 1 || dy > 1 || dz > 1) continue;
        adj26[a].push_back(b);
        if (dx + dy + dz == 1) adj6[a].push_back(b);
        if (dz == 0 && az == 0) {
          adj8[a].push_back(b);
          if (dx + dy == 1) adj4[a].push_back(b);
        }
      }
    }
  }
};

const CubeTopology& topology() {
  static const CubeTopology t;
  return t;
}

// Count components of cells with member[c] under `adj`; when `anchor` is
// given, only components containing an anchor cell are counted.
int count_components(const std::array<bool, 27>& member, const std::array<std::vector<int>, 27>& adj,
                     const std::array<bool, 27>* anchor) {
  std::array<bool, 27> seen{};
  std::array<int, 27> stack{};
  int count = 0;
  for (int c = 0; c < 27; ++c) {
    if (!member[c] || seen[c]) continue;
    bool anchored = anchor == nullptr;
    int top = 0;
    stack[top++] = c;
    seen[c] = true;
    while (top > 0) {
      const int x = stack[--top];
      if (anchor != nullptr && (*anchor)[x]) anchored = true;
      for (int y : adj[x])
        if (member[y] && !seen[y]) {
          seen[y] = true;
          stack[top++] = y;
        }
    }
    count += anchored ? 1 : 0;
  }
  return count;
}

bool is_simple(const std::array<bool, 27>& fg, bool planar) {
  const CubeTopology& t = topology();
  std::array<bool, 27> fore{}, back{};
  for (int c = 0; c < 27; ++c) {
    if (c == 13) continue;
    if (planar) {
      fore[c] = t.in_plane[c] && fg[c];
      back[c] = t.in_plane[c] && !fg[c];
    } else {
      fore[c] = fg[c];
      back[c] = t.in18[c] && !fg[c];
    }
  }
  if (planar)
    return count_components(fore, t.adj8, nullptr) == 1 && count_components(back, t.adj4, &t.face4) == 1;
  return count_components(fore, t.adj26, nullptr) == 1 && count_components(back, t.adj6, &t.face6) == 1;
}

} // namespace

std::size_t Region::count() const {
  return static_cast<std::size_t>(std::count_if(voxels.begin(), voxels.end(), [](std::uint8_t v) { return v != 0; }));
}

Region Region::from_mask(const Volume& mask) {
  Region r{mask.dims(), mask.spacing(), std::vector<std::uint8_t>(mask.size(), 0)};
  for (std::size_t i = 0; i < mask.size(); ++i) r.voxels[i] = mask[i] != 0.0f;
  return r;
}

Region Region::from_label(const InstanceMap& map, std::uint32_t label) {
  Region r{map.dims(), map.spacing(), std::vector<std::uint8_t>(map.labels.size(), 0)};
  for (std::size_t i = 0; i < map.labels.size(); ++i) r.voxels[i] = map.labels[i] == label;
  return r;
}

double dice(const Region& a, const Region& b) {
  const Overlap o = overlap(a, b);
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.a + o.b);
}

double iou(const Region& a, const Region& b) {
  const Overlap o = overlap(a, b);
  return static_cast<double>(o.both) / static_cast<double>(o.a + o.b - o.both);
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& features, const Dims& dims,
                                               const Vec3& spacing) {
  const std::size_t n = dims[0] * dims[1] * dims[2];
  if (features.size() != n) throw InvalidArgument("feature grid does not match its dimensions");
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = features[i] != 0 ? 0.0 : kInf;

  const std::array<std::size_t, 3> stride{1, dims[0], dims[0] * dims[1]};
  std::vector<double> line, result;
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t len = dims[axis];
    if (len == 1) continue;
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    line.resize(len);
    result.resize(len);
    for (std::size_t i2 = 0; i2 < dims[a2]; ++i2)
      for (std::size_t i1 = 0; i1 < dims[a1]; ++i1) {
        const std::size_t base = i1 * stride[a1] + i2 * stride[a2];
        for (std::size_t i = 0; i < len; ++i) line[i] = grid[base + i * stride[axis]];
        distance_1d(line.data(), len, spacing[axis], result.data(), v, z);
        for (std::size_t i = 0; i < len; ++i) grid[base + i * stride[axis]] = result[i];
      }
  }
  return grid;
}

std::vector<std::uint8_t> surface_voxels(const Region& r) {
  const Dims& d = r.dims;
  std::vector<std::uint8_t> out(r.voxels.size(), 0);
  std::size_t idx = 0;
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x, ++idx) {
        if (!r.voxels[idx]) continue;
        const std::array<std::size_t, 3> p{x, y, z};
        const std::array<std::size_t, 3> stride{1, d[0], d[0] * d[1]};
        bool surface = false;
        for (int axis = 0; axis < 3 && !surface; ++axis) {
          if (d[axis] == 1) continue;
          if (p[axis] == 0 || p[axis] + 1 == d[axis] || !r.voxels[idx - stride[axis]] || !r.voxels[idx + stride[axis]])
            surface = true;
        }
        out[idx] = surface;
      }
  return out;
}

double assd(const Region& a, const Region& b) {
  require_same_grid(a, b);
  // Crop to the bounding box of A ∪ B grown by one voxel; the margin keeps
  // every cropped axis longer than 1 wherever the full axis is.
  std::array<std::size_t, 3> lo{a.dims}, hi{0, 0, 0};
  bool any_a = false, any_b = false;
  std::size_t idx = 0;
  for (std::size_t z = 0; z < a.dims[2]; ++z)
    for (std::size_t y = 0; y < a.dims[1]; ++y)
      for (std::size_t x = 0; x < a.dims[0]; ++x, ++idx) {
        any_a |= a.voxels[idx] != 0;
        any_b |= b.voxels[idx] != 0;
        if (!a.voxels[idx] && !b.voxels[idx]) continue;
        const std::array<std::size_t, 3> p{x, y, z};
        for (int k = 0; k < 3; ++k) {
          lo[k] = std::min(lo[k], p[k]);
          hi[k] = std::max(hi[k], p[k]);
        }
      }
  if (!any_a || !any_b) throw InvalidArgument("assd: both regions must be non-empty");

  Dims cd{};
  for (int k = 0; k < 3; ++k) {
    lo[k] = lo[k] > 0 ? lo[k] - 1 : 0;
    hi[k] = std::min(hi[k] + 1, a.dims[k] - 1);
    cd[k] = hi[k] - lo[k] + 1;
  }
  Region ca{cd, a.spacing, std::vector<std::uint8_t>(cd[0] * cd[1] * cd[2])};
  Region cb{cd, a.spacing, std::vector<std::uint8_t>(ca.voxels.size())};
  std::size_t ci = 0;
  for (std::size_t z = 0; z < cd[2]; ++z)
    for (std::size_t y = 0; y < cd[1]; ++y)
      for (std::size_t x = 0; x < cd[0]; ++x, ++ci) {
        const std::size_t src = (x + lo[0]) + a.dims[0] * ((y + lo[1]) + a.dims[1] * (z + lo[2]));
        ca.voxels[ci] = a.voxels[src];
        cb.voxels[ci] = b.voxels[src];
      }

  const auto sa = surface_voxels(ca);
  const auto sb = surface_voxels(cb);
  const auto da = squared_distance_transform(sa, cd, a.spacing);
  const auto db = squared_distance_transform(sb, cd, a.spacing);
  double sum_a = 0.0, sum_b = 0.0;
  std::size_t na = 0, nb = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]) {
      sum_a += std::sqrt(db[i]);
      ++na;
    }
    if (sb[i]) {
      sum_b += std::sqrt(da[i]);
      ++nb;
    }
  }
  return (sum_a + sum_b) / static_cast<double>(na + nb);
}

Region skeletonize(const Region& r) {
  Region out = r;
  const Dims& d = r.dims;
  const bool planar = r.planar();
  const auto nx = static_cast<long>(d[0]), ny = static_cast<long>(d[1]), nz = static_cast<long>(d[2]);
  auto at = [&](long x, long y, long z) -> bool {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    return out.voxels[static_cast<std::size_t>(x + nx * (y + ny * z))] != 0;
  };

  std::vector<std::array<int, 3>> directions{{0, 0, 1}, {0, 0, -1}, {0, 1, 0}, {0, -1, 0}, {1, 0, 0}, {-1, 0, 0}};
  if (planar) directions.erase(directions.begin(), directions.begin() + 2);

  std::vector<std::array<long, 3>> candidates;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& dir : directions) {
      candidates.clear();
      for (long z = 0; z < nz; ++z)
        for (long y = 0; y < ny; ++y)
          for (long x = 0; x < nx; ++x)
            if (at(x, y, z) && !at(x + dir[0], y + dir[1], z + dir[2])) candidates.push_back({x, y, z});

      for (const auto& p : candidates) {
        std::array<bool, 27> fg{};
        int neighbours = 0;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int c = cell(dx, dy, dz);
              if (c == 13 || (planar && dz != 0)) continue;
              fg[c] = at(p[0] + dx, p[1] + dy, p[2] + dz);
              neighbours += fg[c];
            }
        if (neighbours <= 1) continue; // curve endpoint or isolated voxel
        if (!is_simple(fg, planar)) continue;
        out.voxels[static_cast<std::size_t>(p[0] + nx * (p[1] + ny * p[2]))] = 0;
        changed = true;
      }
    }
  }
  return out;
}

std::optional<double> cl_dice(const Region& pred, const Region& ref) {
  require_same_grid(pred, ref);
  if (pred.count() == 0 || ref.count() == 0) throw InvalidArgument("cl_dice: both regions must be non-empty");
  const Region sp = skeletonize(pred);
  const Region sr = skeletonize(ref);
  std::size_t np = 0, np_in = 0, nr = 0, nr_in = 0;
  for (std::size_t i = 0; i < sp.voxels.size(); ++i) {
    if (sp.voxels[i]) {
      ++np;
      np_in += ref.voxels[i] != 0;
    }
    if (sr.voxels[i]) {
      ++nr;
      nr_in += pred.voxels[i] != 0;
    }
  }
  if (np == 0 || nr == 0) return std::nullopt;
  const double tprec = static_cast<double>(np_in) / static_cast<double>(np);
  const double tsens = static_cast<double>(nr_in) / static_cast<double>(nr);
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

} // namespace lesionkit::eval
