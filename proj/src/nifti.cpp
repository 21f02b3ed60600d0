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

#include "lesionkit/nifti.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>

#include <zlib.h>

#include "lesionkit/error.hpp"

namespace lesionkit {

std::string to_string(NiftiType type) {
  switch (type) {
  case NiftiType::uint8: return "uint8";
  case NiftiType::int16: return "int16";
  case NiftiType::int32: return "int32";
  case NiftiType::float32: return "float32";
  case NiftiType::float64: return "float64";
  case NiftiType::int8: return "int8";
  case NiftiType::uint16: return "uint16";
  case NiftiType::uint32: return "uint32";
  case NiftiType::int64: return "int64";
  case NiftiType::uint64: return "uint64";
  }
  return "unknown";
}

bool has_gz_extension(const std::filesystem::path& path) {
  return path.extension() == ".gz";
}

bool has_nifti_extension(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  auto ends_with = [&](std::string_view suffix) {
    return name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".nii") || ends_with(".nii.gz");
}

namespace {

// Header field offsets of the NIfTI-1 layout.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffIntentCode = 68;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffQuatern = 256;
constexpr std::size_t kOffQoffset = 268;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffIntentName = 328;
constexpr std::size_t kOffMagic = 344;
constexpr std::size_t kDataOffset = 352;

constexpr std::int16_t kIntentLabel = 1002;
constexpr char kMaskIntentName[] = "mask";

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

GzHandle open_for_read(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open '" + path.string() + "' for reading");
  return GzHandle(f);
}

void read_exact(gzFile f, void* out, std::size_t n, const std::filesystem::path& path) {
  auto* dst = static_cast<std::uint8_t*>(out);
  while (n > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
    const int got = gzread(f, dst, chunk);
    if (got < 0) throw IoError("read error in '" + path.string() + "'");
    if (got == 0) throw FormatError("'" + path.string() + "' is truncated");
    dst += got;
    n -= static_cast<std::size_t>(got);
  }
}

template <typename T>
T load(const std::uint8_t* bytes, std::size_t offset, bool swap) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), bytes + offset, sizeof(T));
  if (swap) std::reverse(raw.begin(), raw.end());
  T value;
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

template <typename T>
void store(std::uint8_t* bytes, std::size_t offset, T value) {
  std::memcpy(bytes + offset, &value, sizeof(T));
}

std::size_t bytes_per_voxel(NiftiType t) {
  switch (t) {
  case NiftiType::uint8:
  case NiftiType::int8: return 1;
  case NiftiType::int16:
  case NiftiType::uint16: return 2;
  case NiftiType::int32:
  case NiftiType::uint32:
  case NiftiType::float32: return 4;
  case NiftiType::float64:
  case NiftiType::int64:
  case NiftiType::uint64: return 8;
  }
  return 0;
}

bool known_type(std::int16_t code) {
  switch (static_cast<NiftiType>(code)) {
  case NiftiType::uint8:
  case NiftiType::int16:
  case NiftiType::int32:
  case NiftiType::float32:
  case NiftiType::float64:
  case NiftiType::int8:
  case NiftiType::uint16:
  case NiftiType::uint32:
  case NiftiType::int64:
  case NiftiType::uint64: return true;
  }
  return false;
}

Mat4 quatern_to_affine(double b, double c, double d, double qx, double qy, double qz, double dx,
                       double dy, double dz, double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double s = 1.0 / std::sqrt(b * b + c * c + d * d);
    b *= s;
    c *= s;
    d *= s;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  if (dx <= 0) dx = 1;
  if (dy <= 0) dy = 1;
  if (dz <= 0) dz = 1;
  if (qfac < 0) dz = -dz;
  Mat4 m = Mat4::Identity();
  m(0, 0) = (a * a + b * b - c * c - d * d) * dx;
  m(0, 1) = 2 * (b * c - a * d) * dy;
  m(0, 2) = 2 * (b * d + a * c) * dz;
  m(1, 0) = 2 * (b * c + a * d) * dx;
  m(1, 1) = (a * a + c * c - b * b - d * d) * dy;
  m(1, 2) = 2 * (c * d - a * b) * dz;
  m(2, 0) = 2 * (b * d - a * c) * dx;
  m(2, 1) = 2 * (c * d + a * b) * dy;
  m(2, 2) = (a * a + d * d - c * c - b * b) * dz;
  m(0, 3) = qx;
  m(1, 3) = qy;
  m(2, 3) = qz;
  return m;
}

/// Quaternion parameters of an affine whose linear part is a rotation (or
/// reflection) times a diagonal scaling. Empty when columns are not orthogonal.
struct Quatern {
  double b, c, d, qfac;
};

std::optional<Quatern> affine_to_quatern(const Mat4& affine) {
  Mat3 r = affine.topLeftCorner<3, 3>();
  for (int col = 0; col < 3; ++col) r.col(col).normalize();
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-4) return std::nullopt;
  double qfac = 1.0;
  if (r.determinant() < 0) {
    qfac = -1.0;
    r.col(2) = -r.col(2);
  }
  // Standard rotation-matrix to unit-quaternion conversion, a >= 0.
  double a = r(0, 0) + r(1, 1) + r(2, 2) + 1.0;
  double b, c, d;
  if (a > 0.5) {
    a = 0.5 * std::sqrt(a);
    b = 0.25 * (r(2, 1) - r(1, 2)) / a;
    c = 0.25 * (r(0, 2) - r(2, 0)) / a;
    d = 0.25 * (r(1, 0) - r(0, 1)) / a;
  } else {
    const double xd = 1.0 + r(0, 0) - (r(1, 1) + r(2, 2));
    const double yd = 1.0 + r(1, 1) - (r(0, 0) + r(2, 2));
    const double zd = 1.0 + r(2, 2) - (r(0, 0) + r(1, 1));
    if (xd > 1.0) {
      b = 0.5 * std::sqrt(xd);
      c = 0.25 * (r(0, 1) + r(1, 0)) / b;
      d = 0.25 * (r(0, 2) + r(2, 0)) / b;
      a = 0.25 * (r(2, 1) - r(1, 2)) / b;
    } else if (yd > 1.0) {
      c = 0.5 * std::sqrt(yd);
      b = 0.25 * (r(0, 1) + r(1, 0)) / c;
      d = 0.25 * (r(1, 2) + r(2, 1)) / c;
      a = 0.25 * (r(0, 2) - r(2, 0)) / c;
    } else {
      d = 0.5 * std::sqrt(zd);
      b = 0.25 * (r(0, 2) + r(2, 0)) / d;
      c = 0.25 * (r(1, 2) + r(2, 1)) / d;
      a = 0.25 * (r(1, 0) - r(0, 1)) / d;
    }
    if (a < 0.0) {
      b = -b;
      c = -c;
      d = -d;
    }
  }
  return Quatern{b, c, d, qfac};
}

bool invertible(const Mat4& m) {
  return m.allFinite() && std::abs(m.topLeftCorner<3, 3>().determinant()) > 1e-12;
}

NiftiHeader parse_header(const std::uint8_t* h, const std::filesystem::path& path) {
  NiftiHeader out;
  const std::int32_t size_le = load<std::int32_t>(h, 0, false);
  if (size_le == kNifti1HeaderSize) {
    out.byte_swapped = false;
  } else if (load<std::int32_t>(h, 0, true) == kNifti1HeaderSize) {
    out.byte_swapped = true;
  } else {
    throw FormatError("'" + path.string() + "' is not a NIfTI-1 file (header size field is not 348)");
  }
  const bool sw = out.byte_swapped;
  if (std::memcmp(h + kOffMagic, "n+1\0", 4) != 0)
    throw FormatError("'" + path.string() + "' has a bad magic number (expected single-file NIfTI-1 'n+1')");

  std::array<std::int16_t, 8> dim{};
  for (std::size_t i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h, kOffDim + 2 * i, sw);
  const int ndim = dim[0];
  if (ndim < 1 || ndim > 7) throw FormatError("'" + path.string() + "' has invalid dim[0]");
  for (int i = 1; i <= ndim; ++i)
    if (dim[i] < 1) throw FormatError("'" + path.string() + "' has a non-positive dimension");
  for (int i = 4; i <= ndim; ++i)
    if (dim[i] != 1)
      throw FormatError("'" + path.string() + "' has more than three non-singleton axes");
  for (int i = 0; i < 3; ++i)
    out.dims[i] = (i + 1 <= ndim) ? static_cast<std::size_t>(dim[i + 1]) : 1;

  const std::int16_t dtype = load<std::int16_t>(h, kOffDatatype, sw);
  if (!known_type(dtype))
    throw FormatError("'" + path.string() + "' uses unsupported datatype code " + std::to_string(dtype));
  out.datatype = static_cast<NiftiType>(dtype);
  out.bitpix = load<std::int16_t>(h, kOffBitpix, sw);

  std::array<float, 8> pixdim{};
  for (std::size_t i = 0; i < 8; ++i) pixdim[i] = load<float>(h, kOffPixdim + 4 * i, sw);
  const float vox_offset = load<float>(h, kOffVoxOffset, sw);
  out.vox_offset = vox_offset < 352.0f ? kDataOffset : static_cast<std::size_t>(vox_offset);
  out.scl_slope = load<float>(h, kOffSclSlope, sw);
  out.scl_inter = load<float>(h, kOffSclInter, sw);

  const std::int16_t qform_code = load<std::int16_t>(h, kOffQformCode, sw);
  const std::int16_t sform_code = load<std::int16_t>(h, kOffSformCode, sw);

  Mat4 sform = Mat4::Identity();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) sform(r, c) = load<float>(h, kOffSrow + 16 * r + 4 * c, sw);

  if (sform_code > 0 && invertible(sform)) {
    out.affine = sform;
    out.affine_source = "sform";
  } else if (qform_code > 0) {
    out.affine = quatern_to_affine(
        load<float>(h, kOffQuatern, sw), load<float>(h, kOffQuatern + 4, sw),
        load<float>(h, kOffQuatern + 8, sw), load<float>(h, kOffQoffset, sw),
        load<float>(h, kOffQoffset + 4, sw), load<float>(h, kOffQoffset + 8, sw), pixdim[1],
        pixdim[2], pixdim[3], pixdim[0]);
    out.affine_source = "qform";
  } else {
    out.affine = Mat4::Identity();
    for (int i = 0; i < 3; ++i) {
      const double s = std::abs(pixdim[i + 1]);
      out.affine(i, i) = (s > 0 && std::isfinite(s)) ? s : 1.0;
    }
    out.affine_source = "pixdim";
  }
  if (!invertible(out.affine)) throw FormatError("'" + path.string() + "' has a non-invertible affine");

  const std::int16_t intent_code = load<std::int16_t>(h, kOffIntentCode, sw);
  char intent_name[17] = {};
  std::memcpy(intent_name, h + kOffIntentName, 16);
  if (intent_code == kIntentLabel)
    out.intent = Intent::labels;
  else if (std::strcmp(intent_name, kMaskIntentName) == 0)
    out.intent = Intent::mask;
  return out;
}

template <typename T>
void convert_block(const std::uint8_t* src, std::size_t count, bool swap, float* dst) {
  for (std::size_t i = 0; i < count; ++i)
    dst[i] = static_cast<float>(load<T>(src, i * sizeof(T), swap));
}

void convert(NiftiType type, const std::uint8_t* src, std::size_t count, bool swap, float* dst) {
  switch (type) {
  case NiftiType::uint8: convert_block<std::uint8_t>(src, count, swap, dst); break;
  case NiftiType::int8: convert_block<std::int8_t>(src, count, swap, dst); break;
  case NiftiType::int16: convert_block<std::int16_t>(src, count, swap, dst); break;
  case NiftiType::uint16: convert_block<std::uint16_t>(src, count, swap, dst); break;
  case NiftiType::int32: convert_block<std::int32_t>(src, count, swap, dst); break;
  case NiftiType::uint32: convert_block<std::uint32_t>(src, count, swap, dst); break;
  case NiftiType::float32: convert_block<float>(src, count, swap, dst); break;
  case NiftiType::float64: convert_block<double>(src, count, swap, dst); break;
  case NiftiType::int64: convert_block<std::int64_t>(src, count, swap, dst); break;
  case NiftiType::uint64: convert_block<std::uint64_t>(src, count, swap, dst); break;
  }
}

void apply_scaling(const NiftiHeader& header, std::vector<float>& values) {
  const double slope = header.scl_slope;
  const double inter = header.scl_inter;
  if (slope == 0.0 || !std::isfinite(slope) || (slope == 1.0 && inter == 0.0)) return;
  for (float& v : values) v = static_cast<float>(v * slope + inter);
}

NiftiHeader read_header_from(gzFile f, const std::filesystem::path& path,
                             std::array<std::uint8_t, kDataOffset>& raw) {
  const int got = gzread(f, raw.data(), static_cast<unsigned>(kNifti1HeaderSize));
  if (got != kNifti1HeaderSize) throw FormatError("'" + path.string() + "' is too short for a NIfTI-1 header");
  NiftiHeader header = parse_header(raw.data(), path);
  header.gzipped = gzdirect(f) == 0;
  return header;
}

void skip_to(gzFile f, std::size_t offset, const std::filesystem::path& path) {
  if (gzseek(f, static_cast<z_off_t>(offset), SEEK_SET) < 0)
    throw IoError("cannot seek in '" + path.string() + "'");
}

NiftiType storage_type_for(const Volume& v) {
  if (v.intent() == Intent::image) return NiftiType::float32;
  float max_value = 0.0f;
  for (float x : v.data()) max_value = std::max(max_value, x);
  if (max_value <= 255.0f) return NiftiType::uint8;
  if (max_value <= 65535.0f) return NiftiType::uint16;
  if (max_value <= 4294967295.0f) return NiftiType::uint32;
  throw InvalidArgument("label value " + std::to_string(max_value) +
                        " exceeds the largest representable on-disk integer");
}

template <typename T>
void encode_block(std::span<const float> values, std::uint8_t* dst) {
  for (std::size_t i = 0; i < values.size(); ++i) store<T>(dst, i * sizeof(T), static_cast<T>(values[i]));
}

} // namespace

NiftiHeader read_nifti_header(const std::filesystem::path& path) {
  GzHandle f = open_for_read(path);
  std::array<std::uint8_t, kDataOffset> raw{};
  return read_header_from(f.get(), path, raw);
}

Volume read_nifti(const std::filesystem::path& path) {
  GzHandle f = open_for_read(path);
  std::array<std::uint8_t, kDataOffset> raw{};
  const NiftiHeader header = read_header_from(f.get(), path, raw);
  skip_to(f.get(), header.vox_offset, path);

  const std::size_t count = header.dims[0] * header.dims[1] * header.dims[2];
  const std::size_t bpv = bytes_per_voxel(header.datatype);
  std::vector<std::uint8_t> bytes(count * bpv);
  read_exact(f.get(), bytes.data(), bytes.size(), path);

  std::vector<float> values(count);
  convert(header.datatype, bytes.data(), count, header.byte_swapped, values.data());
  apply_scaling(header, values);
  for (float v : values)
    if (!std::isfinite(v)) throw FormatError("'" + path.string() + "' contains non-finite voxel values");

  Intent intent = header.intent;
  Volume volume(header.dims, header.affine, std::move(values), Intent::image);
  if (intent == Intent::image) return volume;
  try {
    return volume.with_intent(intent);
  } catch (const InvalidArgument&) {
    return volume; // header tag disagrees with the contents; keep it as an image
  }
}

Volume read_nifti(const std::filesystem::path& path, Intent intent) {
  return read_nifti(path).with_intent(intent);
}

std::vector<float> read_nifti_slice(const std::filesystem::path& path, std::size_t k) {
  GzHandle f = open_for_read(path);
  std::array<std::uint8_t, kDataOffset> raw{};
  const NiftiHeader header = read_header_from(f.get(), path, raw);
  if (k >= header.dims[2]) throw InvalidArgument("slice index out of range");
  const std::size_t per_slice = header.dims[0] * header.dims[1];
  const std::size_t bpv = bytes_per_voxel(header.datatype);
  skip_to(f.get(), header.vox_offset + k * per_slice * bpv, path);
  std::vector<std::uint8_t> bytes(per_slice * bpv);
  read_exact(f.get(), bytes.data(), bytes.size(), path);
  std::vector<float> values(per_slice);
  convert(header.datatype, bytes.data(), per_slice, header.byte_swapped, values.data());
  apply_scaling(header, values);
  return values;
}

void write_nifti(const Volume& volume, const std::filesystem::path& path) {
  const NiftiType type = storage_type_for(volume);
  const std::size_t bpv = bytes_per_voxel(type);
  for (std::size_t d : volume.dims())
    if (d > static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max()))
      throw InvalidArgument("dimension too large for NIfTI-1");

  std::vector<std::uint8_t> bytes(kDataOffset + volume.size() * bpv, 0);
  std::uint8_t* h = bytes.data();
  store<std::int32_t>(h, 0, kNifti1HeaderSize);
  store<char>(h, 38, 'r'); // regular
  store<std::int16_t>(h, kOffDim, 3);
  for (std::size_t i = 0; i < 3; ++i)
    store<std::int16_t>(h, kOffDim + 2 * (i + 1), static_cast<std::int16_t>(volume.dims()[i]));
  for (std::size_t i = 4; i < 8; ++i) store<std::int16_t>(h, kOffDim + 2 * i, 1);
  store<std::int16_t>(h, kOffDatatype, static_cast<std::int16_t>(type));
  store<std::int16_t>(h, kOffBitpix, static_cast<std::int16_t>(bpv * 8));

  const Vec3 spacing = volume.spacing();
  const auto quatern = affine_to_quatern(volume.affine());
  store<float>(h, kOffPixdim, quatern ? static_cast<float>(quatern->qfac) : 1.0f);
  for (int i = 0; i < 3; ++i) store<float>(h, kOffPixdim + 4 * (i + 1), static_cast<float>(spacing[i]));
  for (int i = 4; i < 8; ++i) store<float>(h, kOffPixdim + 4 * i, 1.0f);
  store<float>(h, kOffVoxOffset, static_cast<float>(kDataOffset));
  store<float>(h, kOffSclSlope, 1.0f);
  store<float>(h, kOffSclInter, 0.0f);
  store<std::uint8_t>(h, kOffXyztUnits, 2 | 8); // mm, seconds
  std::memcpy(h + kOffDescrip, "lesionkit", 9);

  if (quatern) {
    store<std::int16_t>(h, kOffQformCode, 1);
    store<float>(h, kOffQuatern, static_cast<float>(quatern->b));
    store<float>(h, kOffQuatern + 4, static_cast<float>(quatern->c));
    store<float>(h, kOffQuatern + 8, static_cast<float>(quatern->d));
    for (int i = 0; i < 3; ++i)
      store<float>(h, kOffQoffset + 4 * i, static_cast<float>(volume.affine()(i, 3)));
  }
  store<std::int16_t>(h, kOffSformCode, 1);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      store<float>(h, kOffSrow + 16 * r + 4 * c, static_cast<float>(volume.affine()(r, c)));

  if (volume.intent() == Intent::labels) store<std::int16_t>(h, kOffIntentCode, kIntentLabel);
  if (volume.intent() == Intent::mask) std::memcpy(h + kOffIntentName, kMaskIntentName, 4);
  std::memcpy(h + kOffMagic, "n+1\0", 4);

  std::uint8_t* payload = bytes.data() + kDataOffset;
  switch (type) {
  case NiftiType::float32: encode_block<float>(volume.data(), payload); break;
  case NiftiType::uint8: encode_block<std::uint8_t>(volume.data(), payload); break;
  case NiftiType::uint16: encode_block<std::uint16_t>(volume.data(), payload); break;
  case NiftiType::uint32: encode_block<std::uint32_t>(volume.data(), payload); break;
  default: break;
  }
  write_bytes(path, bytes, has_gz_extension(path));
}

std::vector<std::uint8_t> read_maybe_gzipped(const std::filesystem::path& path) {
  GzHandle f = open_for_read(path);
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buffer{};
  for (;;) {
    const int got = gzread(f.get(), buffer.data(), static_cast<unsigned>(buffer.size()));
    if (got < 0) throw IoError("read error in '" + path.string() + "'");
    if (got == 0) break;
    out.insert(out.end(), buffer.begin(), buffer.begin() + got);
  }
  return out;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes,
                 bool compress) {
  if (compress) {
    gzFile f = gzopen(path.string().c_str(), "wb6");
    if (f == nullptr) throw IoError("cannot open '" + path.string() + "' for writing");
    GzHandle handle(f);
    std::size_t done = 0;
    while (done < bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk))
        throw IoError("write error in '" + path.string() + "'");
      done += chunk;
    }
    if (gzclose(handle.release()) != Z_OK) throw IoError("cannot finish writing '" + path.string() + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write error in '" + path.string() + "'");
}

} // namespace lesionkit
