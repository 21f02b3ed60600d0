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

#include "lesionkit/stats.hpp"

#include <algorithm>
#include <cmath>

#include "lesionkit/error.hpp"

namespace lesionkit {

namespace {

double interpolate_sorted(const std::vector<float>& sorted, double p) {
  const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

} // namespace

double percentile(std::vector<float> values, double p) {
  if (values.empty()) throw DegenerateInput("percentile of an empty set");
  std::sort(values.begin(), values.end());
  return interpolate_sorted(values, p);
}

std::pair<double, double> percentile_pair(std::vector<float> values, double low, double high) {
  if (values.empty()) throw DegenerateInput("percentile of an empty set");
  std::sort(values.begin(), values.end());
  return {interpolate_sorted(values, low), interpolate_sorted(values, high)};
}

std::vector<float> masked_values(const Volume& v, const Volume* mask) {
  if (mask == nullptr) return {v.data().begin(), v.data().end()};
  require_same_dims(v, *mask, "masked_values");
  std::vector<float> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if ((*mask)[i] != 0.0f) out.push_back(v[i]);
  return out;
}

MeanStd mean_std(std::span<const float> values) {
  if (values.empty()) throw DegenerateInput("mean of an empty set");
  double sum = 0.0;
  for (float x : values) sum += x;
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (float x : values) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

double coefficient_of_variation(const Volume& v, const Volume& mask) {
  const auto values = masked_values(v, &mask);
  const MeanStd ms = mean_std(values);
  return ms.std / ms.mean;
}

} // namespace lesionkit
