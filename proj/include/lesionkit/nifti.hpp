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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lesionkit/volume.hpp"

namespace lesionkit {

/// Size of the NIfTI-1 header in bytes; also the value of its first field.
inline constexpr int kNifti1HeaderSize = 348;

/// On-disk element types understood by the reader (NIfTI-1 datatype codes).
enum class NiftiType : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
  int8 = 256,
  uint16 = 512,
  uint32 = 768,
  int64 = 1024,
  uint64 = 1280,
};

std::string to_string(NiftiType type);

/// Header-derived facts about a NIfTI-1 file; cheap to obtain because only
/// the first 352 bytes are decoded.
struct NiftiHeader {
  Dims dims{};
  Mat4 affine = Mat4::Identity();
  NiftiType datatype = NiftiType::float32;
  int bitpix = 32;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  std::size_t vox_offset = 352;
  bool byte_swapped = false;
  bool gzipped = false;
  Intent intent = Intent::image;
  std::string affine_source; ///< "sform", "qform" or "pixdim"
};

/// Decode the header of a .nii or .nii.gz file.
NiftiHeader read_nifti_header(const std::filesystem::path& path);

/// Load a 3D NIfTI-1 volume (4D files are accepted when the fourth axis is a
/// singleton). Integer data is converted to float; values with magnitude up to
/// 2^24 are represented exactly.
///
/// The affine comes from the s-form when its code is set and it is
/// invertible, else from the q-form, else from the pixel dimensions.
Volume read_nifti(const std::filesystem::path& path);

/// Same as read_nifti, then re-validated under the given intent.
Volume read_nifti(const std::filesystem::path& path, Intent intent);

/// Load only axial slice `k` (values in file order, first axis fastest).
std::vector<float> read_nifti_slice(const std::filesystem::path& path, std::size_t k);

/// Write a single-file NIfTI-1 volume. Images are stored as float32; masks and
/// label maps use the smallest unsigned integer type that holds the maximum
/// value. A path ending in ".gz" is gzip-compressed.
void write_nifti(const Volume& volume, const std::filesystem::path& path);

/// Bytes of the file with gzip framing removed (plain files pass through).
std::vector<std::uint8_t> read_maybe_gzipped(const std::filesystem::path& path);

/// Write bytes, gzip-compressed when `compress` is set.
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
                 bool compress);

bool has_gz_extension(const std::filesystem::path& path);
bool has_nifti_extension(const std::filesystem::path& path);

} // namespace lesionkit
