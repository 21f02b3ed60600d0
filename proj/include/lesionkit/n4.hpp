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

#include <array>
#include <cstddef>
#include <vector>

#include "lesionkit/volume.hpp"

namespace lesionkit::intensity {

/// Uniform cubic B-spline control lattice spanning a voxel grid.
///
/// Along an axis with `spans` knot intervals there are spans + 3 control
/// points; voxel index i maps to the parametric coordinate
/// i * spans / (extent - 1).
class BSplineLattice {
public:
  BSplineLattice() = default;
  explicit BSplineLattice(std::array<std::size_t, 3> spans);

  const std::array<std::size_t, 3>& spans() const noexcept { return spans_; }
  std::array<std::size_t, 3> control_points() const noexcept {
    return {spans_[0] + 3, spans_[1] + 3, spans_[2] + 3};
  }
  std::vector<double>& coefficients() noexcept { return coeffs_; }
  const std::vector<double>& coefficients() const noexcept { return coeffs_; }

  /// Lee-Wolberg-Shin scattered-data approximation of `values` at the voxels
  /// flagged in `use`. Control points without data get coefficient 0.
  static BSplineLattice fit(const Dims& dims, std::array<std::size_t, 3> spans,
                            const std::vector<double>& values, const std::vector<char>& use);

  /// Spline value at every voxel of the grid.
  std::vector<double> evaluate(const Dims& dims) const;

  /// Exact refinement to twice as many spans per axis.
  BSplineLattice refined() const;

  void add(const BSplineLattice& other);
  void add_constant(double c);

private:
  std::array<std::size_t, 3> spans_{1, 1, 1};
  std::vector<double> coeffs_;
};

struct N4Options {
  int fitting_levels = 4;
  std::size_t initial_spans = 1;  ///< 4 control points per axis at the first level
  int max_iterations = 50;        ///< per level
  double convergence_tolerance = 1e-3;
  int histogram_bins = 200;
  double fwhm = 0.15;
  double wiener_noise = 0.01;
};

struct BiasField {
  Volume field;                 ///< multiplicative field, strictly positive
  BSplineLattice log_field_spline;
  Vec3 control_spacing_mm = Vec3::Zero();
};

struct N4Result {
  Volume corrected;
  BiasField bias;
  bool no_op = false; ///< input was constant inside the mask; field is 1
  std::vector<int> iterations_per_level;
  std::vector<double> final_convergence_per_level;
};

/// N4 bias-field correction.
///
/// Works on log intensities of the mask voxels with value > 0. Each iteration
/// sharpens the log-intensity histogram by Wiener deconvolution of a Gaussian
/// (FWHM `fwhm` in log units), takes the difference between the observed and
/// expected log intensities as the residual bias, smooths it with a cubic
/// B-spline fit and accumulates it into the total log field. A level ends when
/// the coefficient of variation of the field update falls below the tolerance
/// or after max_iterations; the lattice then doubles its resolution.
///
/// The field is extrapolated over the whole grid and scaled so its mean over
/// the mask is 1. Voxels <= 0 inside the mask are left unchanged.
N4Result n4_correct(const Volume& v, const Volume& mask, const N4Options& opts = {});

} // namespace lesionkit::intensity
