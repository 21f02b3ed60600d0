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

#include "lesionkit/volume.hpp"

namespace lesionkit {

/// Separable Gaussian blur; sigma in voxels per axis, edges replicated.
/// Axes with sigma <= 0 or extent 1 are left untouched.
Volume gaussian_smooth(const Volume& v, const Vec3& sigma_voxels);

/// Grid with every axis coarsened by `factor`; voxel i of the new grid sits
/// at index factor*i + (factor-1)/2 of the old one.
GridSpec coarsen_grid(const GridSpec& grid, std::size_t factor);

/// Gaussian prefilter (sigma = 0.5*factor voxels) followed by trilinear
/// sampling on coarsen_grid(v.grid(), factor). factor 1 returns v.
Volume downsample(const Volume& v, std::size_t factor);

} // namespace lesionkit
