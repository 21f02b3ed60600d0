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

#include "lesionkit/tagging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <png.h>

#include "lesionkit/error.hpp"
#include "lesionkit/nifti.hpp"
#include "lesionkit/stats.hpp"

namespace lesionkit::tagging {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

} // namespace

std::string_view to_string(EntryStatus s) { return s == EntryStatus::pending ? "pending" : "committed"; }

const ManifestEntry* Manifest::find(const fs::path& input_path) const {
  for (const auto& e : entries)
    if (e.input_path == input_path) return &e;
  return nullptr;
}

void Manifest::validate() const {
  std::map<std::pair<std::string, std::string>, fs::path> held;
  std::set<fs::path> inputs;
  for (const auto& e : entries) {
    if (!is_valid_subject_id(e.subject_id)) throw InvalidArgument("invalid subject id '" + e.subject_id + "'");
    if (!inputs.insert(e.input_path).second) throw InvalidArgument("file " + quote(e.input_path) + " is listed twice");
    const auto key = std::make_pair(e.subject_id, e.tag.str());
    if (auto [it, fresh] = held.emplace(key, e.input_path); !fresh)
      throw InvalidArgument(e.subject_id + "/" + e.tag.str() + " is assigned to both " + quote(it->second) + " and " +
                            quote(e.input_path));
  }
}

std::string Manifest::to_json() const {
  json j;
  j["schema"] = kManifestSchemaVersion;
  j["naming_scheme"] = naming_scheme;
  j["version"] = version;
  j["entries"] = json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"input_path", e.input_path.string()},
                            {"subject_id", e.subject_id},
                            {"tag", e.tag.str()},
                            {"status", std::string(to_string(e.status))}});
  return j.dump(2);
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    if (j.at("schema") != kManifestSchemaVersion) throw FormatError("unsupported manifest schema");
    m.naming_scheme = j.at("naming_scheme").get<std::string>();
    if (m.naming_scheme != kNamingScheme) throw FormatError("unsupported naming scheme '" + m.naming_scheme + "'");
    m.version = j.at("version").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      const std::string status = e.at("status").get<std::string>();
      if (status != "pending" && status != "committed") throw FormatError("unknown entry status '" + status + "'");
      m.entries.push_back({e.at("input_path").get<std::string>(), e.at("subject_id").get<std::string>(),
                           SequenceTag::parse(e.at("tag").get<std::string>()),
                           status == "pending" ? EntryStatus::pending : EntryStatus::committed});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << m.to_json() << "\n";
    if (!out.flush()) throw IoError("cannot write " + quote(tmp));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + quote(path) + ": " + ec.message());
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + quote(path));
  std::stringstream ss;
  ss << in.rdbuf();
  return Manifest::from_json(ss.str());
}

fs::path destination_for(const fs::path& output_root, const std::string& subject, const SequenceTag& tag) {
  return output_root / subject / (subject + "-" + tag.str() + ".nii.gz");
}

std::string file_id(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Candidate> scan_inbox(const fs::path& dir) {
  std::error_code ec;
  fs::directory_iterator it(dir, ec);
  if (ec) throw IoError("cannot read inbox " + quote(dir) + ": " + ec.message());
  std::vector<Candidate> out;
  for (const auto& entry : it) {
    const std::string name = entry.path().filename().string();
    if (name.empty() || name[0] == '.' || name == kManifestFileName || name == std::string(kManifestFileName) + ".tmp")
      continue;
    if (!entry.is_regular_file()) continue;
    Candidate c;
    c.id = file_id(name);
    c.path = entry.path();
    c.name = name;
    c.size_bytes = entry.file_size(ec);
    if (!has_nifti_extension(entry.path())) {
      c.error = "not a NIfTI file";
      out.push_back(std::move(c));
      continue;
    }
    try {
      const NiftiHeader h = read_nifti_header(entry.path());
      c.dims = h.dims;
      c.spacing = GridSpec(h.dims, h.affine).spacing();
      c.datatype = to_string(h.datatype);
      c.gzipped = h.gzipped;
      c.slice_index = h.dims[2] / 2;
      const auto slice = read_nifti_slice(entry.path(), c.slice_index);
      if (!slice.empty()) {
        const auto [lo, hi] = std::minmax_element(slice.begin(), slice.end());
        double sum = 0.0;
        for (float v : slice) sum += v;
        c.middle_slice = {*lo, *hi, sum / static_cast<double>(slice.size())};
      }
      c.classifiable = true;
    } catch (const Error& e) {
      c.error = e.what();
    }
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.name < b.name; });
  return out;
}

Manifest assign(Manifest m, const fs::path& input_path, const std::string& subject_id, const SequenceTag& tag,
                const fs::path& base_dir) {
  if (!is_valid_subject_id(subject_id))
    throw InvalidArgument("invalid subject id '" + subject_id + "': use letters, digits and '-'");
  const fs::path on_disk = resolve(input_path, base_dir);
  if (!fs::is_regular_file(on_disk) || !has_nifti_extension(on_disk))
    throw InvalidArgument(quote(input_path) + " is not a NIfTI file in the inbox");
  for (const auto& e : m.entries)
    if (e.input_path != input_path && e.subject_id == subject_id && e.tag == tag)
      throw InvalidArgument(subject_id + "/" + tag.str() + " is already assigned to " + quote(e.input_path) +
                            "; cannot also assign " + quote(input_path));
  auto it = std::find_if(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) { return e.input_path == input_path; });
  ManifestEntry entry{input_path, subject_id, tag, EntryStatus::pending};
  if (it != m.entries.end())
    *it = std::move(entry);
  else
    m.entries.push_back(std::move(entry));
  ++m.version;
  return m;
}

Manifest unassign(Manifest m, const fs::path& input_path) {
  const auto before = m.entries.size();
  std::erase_if(m.entries, [&](const ManifestEntry& e) { return e.input_path == input_path; });
  if (m.entries.size() != before) ++m.version;
  return m;
}

std::string CommitReport::to_json() const {
  json j;
  j["ok"] = ok;
  j["failed"] = failed;
  j["entries"] = json::array();
  for (const auto& e : entries)
    j["entries"].push_back({{"input_path", e.input_path.string()},
                            {"destination", e.destination.string()},
                            {"ok", e.ok},
                            {"error", e.error}});
  return j.dump(2);
}

CommitReport commit(Manifest& m, const fs::path& output_root, const fs::path& base_dir) {
  CommitReport report;
  bool changed = false;
  for (auto& e : m.entries) {
    if (e.status == EntryStatus::committed) continue;
    CommitEntryReport r;
    r.input_path = e.input_path;
    r.destination = destination_for(output_root, e.subject_id, e.tag);
    const fs::path src = resolve(e.input_path, base_dir);
    const fs::path tmp = r.destination.string() + ".partial";
    try {
      if (fs::exists(r.destination)) throw IoError("destination " + quote(r.destination) + " exists; not overwriting");
      const NiftiHeader h = read_nifti_header(src);
      fs::create_directories(r.destination.parent_path());
      if (h.gzipped) {
        std::error_code ec;
        fs::copy_file(src, tmp, fs::copy_options::overwrite_existing, ec);
        if (ec) throw IoError("cannot copy " + quote(src) + ": " + ec.message());
      } else {
        write_bytes(tmp, read_maybe_gzipped(src), true);
      }
      // Link then unlink so a destination created meanwhile is never replaced.
      std::error_code ec;
      fs::create_hard_link(tmp, r.destination, ec);
      fs::remove(tmp);
      if (ec) throw IoError("cannot create " + quote(r.destination) + ": " + ec.message());
      e.status = EntryStatus::committed;
      r.ok = true;
      changed = true;
    } catch (const std::exception& ex) {
      std::error_code ec;
      fs::remove(tmp, ec);
      r.error = ex.what();
    }
    (r.ok ? report.ok : report.failed) += 1;
    report.entries.push_back(std::move(r));
  }
  if (changed) ++m.version;
  return report;
}

std::vector<std::uint8_t> encode_png_gray(const std::vector<std::uint8_t>& pixels, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0 || pixels.size() != width * height) throw InvalidArgument("encode_png_gray: bad image size");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw IoError("png: encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        buf->insert(buf->end(), data, data + n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r) png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> render_slice_png(const fs::path& nifti_path) {
  const NiftiHeader h = read_nifti_header(nifti_path);
  const std::size_t nx = h.dims[0], ny = h.dims[1];
  const std::vector<float> slice = read_nifti_slice(nifti_path, h.dims[2] / 2);
  const auto [lo, hi] = percentile_pair(slice, 1.0, 99.0);
  std::vector<std::uint8_t> pixels(nx * ny, 128);
  if (hi > lo) {
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        const double t = std::clamp((slice[i + nx * j] - lo) / (hi - lo), 0.0, 1.0);
        pixels[i + nx * (ny - 1 - j)] = static_cast<std::uint8_t>(std::lround(255.0 * t));
      }
  }
  return encode_png_gray(pixels, nx, ny);
}

} // namespace lesionkit::tagging
