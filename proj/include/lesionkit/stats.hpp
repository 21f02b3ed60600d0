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

#include <span>
#include <vector>

#include "lesionkit/volume.hpp"

namespace lesionkit {

/// Percentile `p` in [0, 100] with linear interpolation between order
/// statistics (position p/100 * (n - 1)). Throws on empty input.
double percentile(std::vector<float> values, double p);

/// Two percentiles from one sort.
std::pair<double, double> percentile_pair(std::vector<float> values, double low, double high);

/// Values of `v` where `mask` is nonzero (all values when mask is null).
std::vector<float> masked_values(const Volume& v, const Volume* mask);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0; ///< population standard deviation
};

MeanStd mean_std(std::span<const float> values);

/// Coefficient of variation (std / mean) of the masked voxels.
double coefficient_of_variation(const Volume& v, const Volume& mask);

} // namespace lesionkit
