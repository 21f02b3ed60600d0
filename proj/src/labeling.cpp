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

#include "lesionkit/labeling.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "lesionkit/error.hpp"

namespace lesionkit::eval {

namespace {

class DisjointSet {
public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

private:
  std::vector<std::uint32_t> parent_;
};

} // namespace

std::vector<std::size_t> InstanceMap::sizes() const {
  std::vector<std::size_t> out(n_instances + 1, 0);
  for (std::uint32_t l : labels) ++out[l];
  return out;
}

InstanceMap InstanceMap::from_labels(const Volume& volume) {
  if (volume.intent() == Intent::image) {
    for (float v : volume.data())
      if (v < 0.0f || v != static_cast<float>(static_cast<std::uint32_t>(v)))
        throw InvalidArgument("instance map must hold non-negative integer labels");
  }
  std::map<std::uint32_t, std::uint32_t> remap;
  for (float v : volume.data())
    if (v != 0.0f) remap.emplace(static_cast<std::uint32_t>(v), 0);
  std::uint32_t next = 0;
  for (auto& [original, compact] : remap) compact = ++next;
  InstanceMap out{volume.grid(), std::vector<std::uint32_t>(volume.size(), 0), next,
                  default_connectivity(volume.grid()), true};
  for (std::size_t i = 0; i < volume.size(); ++i)
    if (volume[i] != 0.0f) out.labels[i] = remap[static_cast<std::uint32_t>(volume[i])];
  return out;
}

Volume InstanceMap::to_volume() const {
  std::vector<float> data(labels.begin(), labels.end());
  return Volume(grid, std::move(data), Intent::labels);
}

int default_connectivity(const GridSpec& grid) { return grid.is_planar() ? 8 : 26; }

void check_connectivity(const GridSpec& grid, int connectivity) {
  const bool ok = grid.is_planar() ? (connectivity == 4 || connectivity == 8)
                                   : (connectivity == 6 || connectivity == 18 || connectivity == 26);
  if (!ok)
    throw InvalidArgument("connectivity " + std::to_string(connectivity) + " is not valid for a " +
                          (grid.is_planar() ? "2D" : "3D") + " grid");
}

std::vector<std::array<int, 3>> neighbor_offsets(int connectivity) {
  const bool planar = connectivity == 4 || connectivity == 8;
  const int max_l1 = (connectivity == 4 || connectivity == 6) ? 1 : (connectivity == 8 || connectivity == 18) ? 2 : 3;
  std::vector<std::array<int, 3>> out;
  for (int dz = planar ? 0 : -1; dz <= (planar ? 0 : 1); ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (l1 == 0 || l1 > max_l1) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

InstanceMap connected_components(const Volume& mask, std::optional<int> connectivity) {
  if (mask.intent() != Intent::mask) throw InvalidArgument("connected_components expects a mask volume");
  const int conn = connectivity.value_or(default_connectivity(mask.grid()));
  check_connectivity(mask.grid(), conn);

  // Offsets preceding the current voxel in scan order.
  std::vector<std::array<int, 3>> backward;
  for (const auto& o : neighbor_offsets(conn))
    if (o[2] < 0 || (o[2] == 0 && o[1] < 0) || (o[2] == 0 && o[1] == 0 && o[0] < 0)) backward.push_back(o);

  const Dims& d = mask.dims();
  const auto nx = static_cast<long>(d[0]), ny = static_cast<long>(d[1]), nz = static_cast<long>(d[2]);
  std::vector<std::uint32_t> provisional(mask.size(), 0);
  DisjointSet sets;
  sets.make(); // 0 stays background

  std::size_t idx = 0;
  for (long z = 0; z < nz; ++z)
    for (long y = 0; y < ny; ++y)
      for (long x = 0; x < nx; ++x, ++idx) {
        if (mask[idx] == 0.0f) continue;
        std::uint32_t label = 0;
        for (const auto& o : backward) {
          const long xx = x + o[0], yy = y + o[1], zz = z + o[2];
          if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) continue;
          const std::uint32_t other = provisional[static_cast<std::size_t>(xx + nx * (yy + ny * zz))];
          if (other == 0) continue;
          if (label == 0)
            label = other;
          else
            sets.unite(label, other);
        }
        provisional[idx] = label != 0 ? label : sets.make();
      }

  InstanceMap out{mask.grid(), std::vector<std::uint32_t>(mask.size(), 0), 0, conn, false};
  std::vector<std::uint32_t> final_label;
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (provisional[i] == 0) continue;
    const std::uint32_t root = sets.find(provisional[i]);
    if (root >= final_label.size()) final_label.resize(root + 1, 0);
    if (final_label[root] == 0) final_label[root] = ++out.n_instances;
    out.labels[i] = final_label[root];
  }
  return out;
}

Volume largest_component(const Volume& mask, int connectivity) {
  const InstanceMap cc = connected_components(mask, connectivity);
  std::vector<float> out(mask.size(), 0.0f);
  if (cc.n_instances == 0) return mask.with_data(std::move(out), Intent::mask);
  const auto sizes = cc.sizes();
  const auto best = static_cast<std::uint32_t>(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cc.labels[i] == best ? 1.0f : 0.0f;
  return mask.with_data(std::move(out), Intent::mask);
}

} // namespace lesionkit::eval
