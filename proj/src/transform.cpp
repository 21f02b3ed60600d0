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

#include "lesionkit/transform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lesionkit/error.hpp"

namespace lesionkit {

Mat3 rotation_zyx(const Vec3& angles) {
  return (Eigen::AngleAxisd(angles.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(angles.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(angles.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

Vec3 angles_from_rotation(const Mat3& r) {
  // r = Rz(c) Ry(b) Rx(a); r(2,0) = -sin(b).
  const double sb = std::clamp(-r(2, 0), -1.0, 1.0);
  const double b = std::asin(sb);
  double a, c;
  if (std::abs(sb) < 1.0 - 1e-12) {
    a = std::atan2(r(2, 1), r(2, 2));
    c = std::atan2(r(1, 0), r(0, 0));
  } else {
    // Gimbal lock: only a - c (or a + c) is determined; put it all in a.
    c = 0.0;
    a = std::atan2(-r(1, 2), r(1, 1));
  }
  return {a, b, c};
}

Mat3 RigidTransform::rotation() const { return rotation_zyx(angles); }

Mat4 RigidTransform::matrix() const {
  const Mat3 r = rotation();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = center + translation - r * center;
  return m;
}

Vec3 RigidTransform::apply(const Vec3& point) const {
  return rotation() * (point - center) + center + translation;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m, const Vec3& center, double tolerance) {
  if (!m.allFinite()) throw InvalidArgument("transform matrix has non-finite entries");
  if (std::abs(m(3, 0)) > tolerance || std::abs(m(3, 1)) > tolerance || std::abs(m(3, 2)) > tolerance ||
      std::abs(m(3, 3) - 1.0) > tolerance)
    throw InvalidArgument("transform matrix bottom row must be (0, 0, 0, 1)");
  const Mat3 r = m.topLeftCorner<3, 3>();
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tolerance)
    throw InvalidArgument("transform rotation block is not orthonormal");
  if (std::abs(r.determinant() - 1.0) > tolerance)
    throw InvalidArgument("transform rotation block has determinant other than +1");
  RigidTransform t;
  t.angles = angles_from_rotation(r);
  t.center = center;
  // Use the rotation rebuilt from the angles so that matrix() reproduces m.
  t.translation = m.topRightCorner<3, 1>() - center + rotation_zyx(t.angles) * center;
  return t;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  const Mat3 ra = a.rotation();
  const Mat3 rb = b.rotation();
  RigidTransform out;
  out.angles = angles_from_rotation(ra * rb);
  out.center = b.center;
  // a(b(x)) with b(x) = rb (x - cb) + cb + tb; expressed about cb.
  const Vec3 b_of_center = b.center + b.translation;
  out.translation = a.apply(b_of_center) - b.center;
  return out;
}

RigidTransform invert(const RigidTransform& t) {
  RigidTransform out;
  out.angles = angles_from_rotation(t.rotation().transpose());
  out.center = t.center + t.translation;
  out.translation = -t.translation;
  return out;
}

double max_matrix_difference(const RigidTransform& a, const RigidTransform& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

std::string format_transform(const RigidTransform& t) {
  const Mat4 m = t.matrix();
  std::string out = std::string(kTransformFormatVersion) + "\n";
  char buf[64];
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      out += buf;
      out += (c < 3) ? " " : "\n";
    }
  }
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", t.center[i]);
    out += buf;
    out += (i < 2) ? " " : "\n";
  }
  return out;
}

RigidTransform parse_transform(const std::string& text) {
  std::istringstream in(text);
  std::string version;
  if (!std::getline(in, version)) throw FormatError("empty transform file");
  if (!version.empty() && version.back() == '\r') version.pop_back();
  if (version != kTransformFormatVersion)
    throw FormatError("unsupported transform format version '" + version + "'");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      if (!(in >> m(r, c))) throw FormatError("transform file: malformed matrix");
  Vec3 center;
  for (int i = 0; i < 3; ++i)
    if (!(in >> center[i])) throw FormatError("transform file: malformed center");
  std::string trailing;
  if (in >> trailing) throw FormatError("transform file: unexpected trailing content");
  try {
    return RigidTransform::from_matrix(m, center);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("transform file: ") + e.what());
  }
}

void save_transform(const RigidTransform& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << format_transform(t);
  if (!out) throw IoError("write error in '" + path.string() + "'");
}

RigidTransform load_transform(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_transform(text.str());
}

} // namespace lesionkit
