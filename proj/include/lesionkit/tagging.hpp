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

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lesionkit/sequence_tag.hpp"
#include "lesionkit/volume.hpp"

namespace lesionkit::tagging {

inline constexpr const char* kManifestSchemaVersion = "lesionkit-manifest v1";
/// Output layout: {root}/{subject}/{subject}-{tag}.nii.gz
inline constexpr const char* kNamingScheme = "subject-tag v1";
/// Manifest kept by the service inside the inbox.
inline constexpr const char* kManifestFileName = "lesionkit-manifest.json";

enum class EntryStatus { pending, committed };
std::string_view to_string(EntryStatus s);

struct ManifestEntry {
  std::filesystem::path input_path; ///< relative paths resolve against the manifest's directory
  std::string subject_id;
  SequenceTag tag;
  EntryStatus status = EntryStatus::pending;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t version = 0;
  std::string naming_scheme = kNamingScheme;

  const ManifestEntry* find(const std::filesystem::path& input_path) const;
  /// Throws InvalidArgument when (subject, tag) pairs repeat, an input path
  /// appears twice, or a subject id is malformed.
  void validate() const;

  std::string to_json() const;
  /// Throws FormatError for malformed documents and InvalidArgument when the
  /// content violates the invariants.
  static Manifest from_json(const std::string& text);

  bool operator==(const Manifest&) const = default;
};

/// Atomic write: the document goes to a temporary file that is renamed over
/// the destination.
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Destination of an entry below `output_root`.
std::filesystem::path destination_for(const std::filesystem::path& output_root, const std::string& subject,
                                      const SequenceTag& tag);

struct SliceStats {
  double min = 0.0, max = 0.0, mean = 0.0;
};

struct Candidate {
  std::string id;                  ///< stable identifier derived from the file name
  std::filesystem::path path;
  std::string name;                ///< file name within the inbox
  bool classifiable = false;       ///< a readable NIfTI file
  std::string error;               ///< why it is not classifiable
  std::uint64_t size_bytes = 0;
  Dims dims{};
  Vec3 spacing = Vec3::Zero();
  std::string datatype;
  bool gzipped = false;
  std::size_t slice_index = 0;     ///< middle axial slice
  SliceStats middle_slice;
};

/// 64-bit FNV-1a of the file name, as 16 hex digits.
std::string file_id(const std::string& name);

/// List the regular files of `dir` (not recursive, hidden files and the
/// manifest skipped), sorted by name. NIfTI files get header metadata and
/// statistics of the middle axial slice; nothing else is read. Throws IoError
/// when the directory is unreadable.
std::vector<Candidate> scan_inbox(const std::filesystem::path& dir);

/// Add or update the entry for `input_path` as pending. Re-assigning a file
/// replaces its entry. Throws InvalidArgument for a malformed subject id, a
/// file that is not a NIfTI file on disk (checked against `base_dir` for
/// relative paths), or a (subject, tag) pair already held by another file;
/// the message names both paths. Bumps the version.
Manifest assign(Manifest m, const std::filesystem::path& input_path, const std::string& subject_id, const SequenceTag& tag,
                const std::filesystem::path& base_dir = {});

/// Drop the entry for `input_path` if present; bumps the version when it was.
Manifest unassign(Manifest m, const std::filesystem::path& input_path);

struct CommitEntryReport {
  std::filesystem::path input_path;
  std::filesystem::path destination;
  bool ok = false;
  std::string error;
};

struct CommitReport {
  std::vector<CommitEntryReport> entries;
  std::size_t ok = 0, failed = 0;
  std::string to_json() const;
};

/// Copy every pending entry to destination_for(output_root, subject, tag).
/// Sources are never modified; uncompressed sources are gzip-compressed on
/// the way. An existing destination is never overwritten: that entry fails
/// and the others proceed. Successful entries become committed and the
/// version is bumped once if anything changed. Already committed entries are
/// skipped.
CommitReport commit(Manifest& m, const std::filesystem::path& output_root, const std::filesystem::path& base_dir = {});

/// Windowed middle axial slice as an 8-bit grayscale PNG, one pixel per
/// voxel, anterior at the top. The window is the [1, 99] percentile range of
/// the slice; a constant slice renders uniform mid-gray (128).
std::vector<std::uint8_t> render_slice_png(const std::filesystem::path& nifti_path);

/// Grayscale PNG encoder; `pixels` holds `height` rows of `width` bytes.
std::vector<std::uint8_t> encode_png_gray(const std::vector<std::uint8_t>& pixels, std::size_t width, std::size_t height);

/// HTTP/JSON service over an inbox.
///
///   GET  /api/files                 scan results
///   GET  /api/files/{id}/slice.png  middle-slice preview
///   GET  /api/manifest              current manifest
///   PUT  /api/manifest              replace; 409 when "version" is stale
///   POST /api/assign                {"file", "subject", "tag"}; last writer wins
///   POST /api/unassign              {"file"}
///   POST /api/commit                copy pending entries to the output root
///   GET  /                          static UI assets, when a directory is set
///
/// The manifest is persisted to {inbox}/lesionkit-manifest.json after every
/// change and reloaded on start. Mutations are serialized.
class TaggingService {
public:
  TaggingService(std::filesystem::path inbox, std::filesystem::path output_root,
                 std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~TaggingService();
  TaggingService(const TaggingService&) = delete;
  TaggingService& operator=(const TaggingService&) = delete;

  /// Bind to `host`; port 0 picks a free port. Returns the bound port.
  /// Throws IoError when the address cannot be bound.
  int bind(const std::string& host, int port);
  /// Serve until stop() is called.
  void run();
  void stop();

  Manifest manifest() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace lesionkit::tagging
