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

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lesionkit/transform.hpp"
#include "lesionkit/volume.hpp"

namespace lesionkit::reg {

/// Mutual information (nats) between `fixed` and `moving` resampled through
/// `fixed_to_moving`, from a bins x bins joint histogram over the overlap.
///
/// Intensities of each volume are clamped to its [0.5, 99.5] percentile range
/// and split into `bins` equal-width bins. A volume whose clamped range is
/// empty falls in a single bin and the result is 0. Throws DegenerateInput
/// when fewer than min(1000, fixed voxel count) fixed voxels overlap.
double mutual_information(const Volume& fixed, const Volume& moving,
                          const RigidTransform& fixed_to_moving, int bins = 32);

struct RegistrationOptions {
  std::vector<std::size_t> pyramid{4, 2, 1};
  int bins = 32;
  int max_iterations = 200;        ///< per pyramid level
  double rotation_step_deg = 2.0;  ///< initial search radius
  double translation_step_mm = 2.0;
  double min_rotation_step_deg = 0.01;
  double min_translation_step_mm = 0.01;
  std::size_t max_samples = std::size_t{1} << 20; ///< finest-level sample cap
  double clamp_low_percentile = 0.5;
  double clamp_high_percentile = 99.5;
  /// Starting transform (fixed world to moving world); the centroid
  /// alignment is used when unset.
  std::optional<RigidTransform> initial;
};

struct LevelRecord {
  std::size_t factor = 1;
  int iterations = 0;
  double mi_before = 0.0;
  double mi_after = 0.0;
  bool converged = true;
  std::vector<double> accepted; ///< MI after every accepted step, in order
};

struct RegistrationResult {
  RigidTransform transform; ///< maps fixed world to moving world
  double final_mi = 0.0;    ///< at full resolution
  double initial_mi = 0.0;  ///< at full resolution, centroid initialization
  bool converged = true;
  std::vector<LevelRecord> levels;
};

/// Intensity-weighted centroid in world mm (negative values weigh 0); the
/// grid center when no voxel is positive.
Vec3 intensity_centroid(const Volume& v);

/// Rigid registration maximizing mutual information over a coarse-to-fine
/// pyramid. The search starts from `opts.initial`, or else from the
/// transform aligning the intensity centroids, and proceeds coordinate-wise
/// over the six parameters: each parameter probes +/- its step radius, brackets an improvement with a
/// golden-section line search, and halves its radius on failure.
///
/// Only strictly improving steps (by more than 1e-12) are accepted, so MI
/// never decreases within a level.
RegistrationResult register_rigid(const Volume& fixed, const Volume& moving,
                                  const RegistrationOptions& opts = {});

/// Interface for interchangeable registration engines.
class RegistrationBackend {
public:
  virtual ~RegistrationBackend() = default;
  virtual std::string name() const = 0;
  virtual RegistrationResult register_rigid(const Volume& fixed, const Volume& moving) const = 0;
};

/// The built-in mutual-information engine.
class MutualInformationBackend final : public RegistrationBackend {
public:
  explicit MutualInformationBackend(RegistrationOptions opts = {}) : opts_(std::move(opts)) {}
  std::string name() const override { return "lesionkit-mi-rigid"; }
  RegistrationResult register_rigid(const Volume& fixed, const Volume& moving) const override {
    return reg::register_rigid(fixed, moving, opts_);
  }
  const RegistrationOptions& options() const { return opts_; }

private:
  RegistrationOptions opts_;
};

} // namespace lesionkit::reg
