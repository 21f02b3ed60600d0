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

#include <optional>
#include <string_view>
#include <utility>

#include "lesionkit/volume.hpp"

namespace lesionkit::intensity {

enum class NormalizationMethod { zscore, minmax, percentile_clamp };

std::string_view to_string(NormalizationMethod m);
NormalizationMethod normalization_method_from_string(std::string_view name);

struct NormalizationSpec {
  NormalizationMethod method = NormalizationMethod::zscore;
  std::optional<Volume> mask;             ///< intent mask; statistics restricted to it
  std::pair<double, double> percentiles{0.5, 99.5}; ///< used by percentile_clamp
};

/// Parameters that map normalized values back to input intensities:
/// input = normalized * scale + offset.
struct NormalizationRecord {
  double offset = 0.0;
  double scale = 1.0;
};

/// Normalize intensities.
///
///  - zscore: masked mean 0, masked standard deviation 1
///  - minmax: masked [min, max] mapped to [0, 1]
///  - percentile_clamp: clamp to the masked percentile bounds, then minmax
///
/// Voxels outside the mask are set to 0. Throws DegenerateInput for a
/// constant masked region and InvalidArgument for an empty mask.
Volume normalize(const Volume& v, const NormalizationSpec& spec, NormalizationRecord* record = nullptr);

/// Threshold maximizing between-class variance over a 256-bin histogram of
/// the volume's range. The threshold is a bin boundary; voxels with
/// value >= threshold form the upper class. Class means use the actual voxel
/// values, not bin centers. Ties resolve to the lowest boundary.
double otsu_threshold(const Volume& v);

} // namespace lesionkit::intensity
