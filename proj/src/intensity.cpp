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

#include "lesionkit/intensity.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "lesionkit/error.hpp"
#include "lesionkit/stats.hpp"

namespace lesionkit::intensity {

std::string_view to_string(NormalizationMethod m) {
  switch (m) {
  case NormalizationMethod::zscore: return "zscore";
  case NormalizationMethod::minmax: return "minmax";
  case NormalizationMethod::percentile_clamp: return "percentile_clamp";
  }
  return "zscore";
}

NormalizationMethod normalization_method_from_string(std::string_view name) {
  if (name == "zscore") return NormalizationMethod::zscore;
  if (name == "minmax") return NormalizationMethod::minmax;
  if (name == "percentile_clamp") return NormalizationMethod::percentile_clamp;
  throw InvalidArgument("unknown normalization method '" + std::string(name) + "'");
}

Volume normalize(const Volume& v, const NormalizationSpec& spec, NormalizationRecord* record) {
  const Volume* mask = spec.mask ? &*spec.mask : nullptr;
  if (mask != nullptr && mask->intent() != Intent::mask)
    throw InvalidArgument("normalize: mask volume must have mask intent");
  const std::vector<float> values = masked_values(v, mask);
  if (values.empty()) throw InvalidArgument("normalize: mask is empty");

  double offset = 0.0;
  double scale = 1.0;
  double clamp_lo = -HUGE_VAL;
  double clamp_hi = HUGE_VAL;
  switch (spec.method) {
  case NormalizationMethod::zscore: {
    const MeanStd ms = mean_std(values);
    if (!(ms.std > 1e-12)) throw DegenerateInput("normalize: zscore of a constant region");
    offset = ms.mean;
    scale = ms.std;
    break;
  }
  case NormalizationMethod::minmax: {
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (!(*hi > *lo)) throw DegenerateInput("normalize: minmax of a constant region");
    offset = *lo;
    scale = static_cast<double>(*hi) - *lo;
    break;
  }
  case NormalizationMethod::percentile_clamp: {
    const auto [plo, phi] = spec.percentiles;
    if (!(plo >= 0.0 && phi <= 100.0 && plo < phi))
      throw InvalidArgument("normalize: percentiles must satisfy 0 <= low < high <= 100");
    const auto [lo, hi] = percentile_pair(values, plo, phi);
    if (!(hi > lo)) throw DegenerateInput("normalize: percentile range is empty");
    clamp_lo = lo;
    clamp_hi = hi;
    offset = lo;
    scale = hi - lo;
    break;
  }
  }

  std::vector<float> out(v.size(), 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0.0f) continue;
    const double x = std::clamp(static_cast<double>(v[i]), clamp_lo, clamp_hi);
    out[i] = static_cast<float>((x - offset) / scale);
  }
  if (record != nullptr) *record = {offset, scale};
  return v.with_data(std::move(out), Intent::image);
}

double otsu_threshold(const Volume& v) {
  constexpr int kBins = 256;
  const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) throw DegenerateInput("otsu_threshold: constant input");
  const double width = (hi - lo) / kBins;

  std::array<double, kBins> count{};
  std::array<double, kBins> sum{};
  for (float x : v.data()) {
    const int b = std::min(kBins - 1, static_cast<int>((x - lo) / width));
    count[b] += 1.0;
    sum[b] += x;
  }
  double total_n = 0.0, total_s = 0.0;
  for (int b = 0; b < kBins; ++b) {
    total_n += count[b];
    total_s += sum[b];
  }

  double best = -1.0;
  int best_boundary = 1;
  double n0 = 0.0, s0 = 0.0;
  for (int boundary = 1; boundary < kBins; ++boundary) {
    n0 += count[boundary - 1];
    s0 += sum[boundary - 1];
    const double n1 = total_n - n0;
    if (n0 == 0.0 || n1 == 0.0) continue;
    const double m0 = s0 / n0;
    const double m1 = (total_s - s0) / n1;
    const double between = n0 * n1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_boundary = boundary;
    }
  }
  return lo + best_boundary * width;
}

} // namespace lesionkit::intensity
