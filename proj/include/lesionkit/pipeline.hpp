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

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lesionkit/error.hpp"
#include "lesionkit/intensity.hpp"
#include "lesionkit/n4.hpp"
#include "lesionkit/registration.hpp"
#include "lesionkit/sequence_tag.hpp"
#include "lesionkit/transform.hpp"
#include "lesionkit/volume.hpp"

namespace lesionkit::pipeline {

inline constexpr const char* kProvenanceSchemaVersion = "lesionkit-provenance v1";
inline constexpr const char* kConfigSchemaVersion = "lesionkit-pipeline-config v1";
inline constexpr const char* kAtlasDirEnv = "LESIONKIT_ATLAS_DIR";

/// Configuration problem; `pointer()` is the JSON pointer of the offending key.
class ConfigError : public InvalidArgument {
public:
  ConfigError(std::string pointer, const std::string& message)
      : InvalidArgument(pointer + ": " + message), pointer_(std::move(pointer)) {}
  const std::string& pointer() const noexcept { return pointer_; }

private:
  std::string pointer_;
};

enum class MaskSource { none, external_mask, fallback };

struct BrainExtraction {
  MaskSource source = MaskSource::none;
  /// external_mask: file name inside each subject directory, or an absolute
  /// path. The mask lives in the center modality's native space.
  std::filesystem::path mask_path;
  bool apply = true; ///< zero voxels outside the mask (skull stripping)
};

struct Defacing {
  bool enabled = false;
  double buffer_mm = 10.0;
};

struct N4Step {
  bool enabled = false;
  intensity::N4Options options;
};

struct NormalizationStep {
  intensity::NormalizationMethod method = intensity::NormalizationMethod::zscore;
  std::pair<double, double> percentiles{0.5, 99.5};
};

struct PipelineConfig {
  SequenceTag center_modality = SequenceTag::parse("t1c");
  std::vector<SequenceTag> moving_modalities;
  std::string atlas = "sri24"; ///< built-in name or NIfTI path
  bool do_second_coregistration = true;
  BrainExtraction brain_extraction;
  Defacing defacing;
  N4Step n4;
  std::optional<NormalizationStep> normalization;
  reg::RegistrationOptions registration;
  std::filesystem::path output_dir;

  /// All modalities, center first.
  std::vector<SequenceTag> modalities() const;
  /// Throws ConfigError when an invariant between fields is violated.
  void validate() const;
};

/// Parse a configuration document. Unknown keys and wrong types raise
/// ConfigError. Relative paths are resolved against `base_dir`.
PipelineConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

/// One entry of the provenance log.
struct StepRecord {
  std::string step;        ///< e.g. "register", "resample_output", "deface"
  std::string name;        ///< stage-specific label
  std::string parameters;  ///< JSON object text
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<std::string> transforms; ///< transform identifiers or file names
  double wall_time_s = 0.0;
  std::string tool_version;
};

struct ProvenanceLog {
  std::string subject;
  std::vector<StepRecord> steps;

  std::size_t count(const std::string& step) const;
  std::string to_json() const;
  static ProvenanceLog from_json(const std::string& text);
};

struct SubjectInputs {
  std::map<SequenceTag, Volume> images;
  std::optional<Volume> brain_mask; ///< center-modality native space
};

struct SubjectResult {
  std::map<SequenceTag, Volume> outputs;     ///< all on the atlas grid
  std::map<SequenceTag, RigidTransform> to_native; ///< atlas world -> native world
  std::optional<Volume> brain_mask;          ///< atlas grid, when one was used
  ProvenanceLog log;
  bool flagged = false; ///< a registration did not converge
  std::vector<std::string> warnings;
};

/// Run the five-stage workflow for one subject:
///   1. rigid registration of each moving modality to the center modality
///      in native space;
///   2. rigid registration of the center modality to the atlas; every image
///      is resampled once onto the atlas grid through its composed transform;
///   3. optionally, re-registration of each moving modality to the center in
///      atlas space; the refinement is folded into the composed transform
///      before that single resampling;
///   4. optionally, brain masking and/or defacing;
///   5. optionally, N4 bias correction and intensity normalization.
///
/// Inputs are reoriented to canonical RAS first. Throws InvalidArgument when
/// the center modality is missing.
SubjectResult run_subject(const SubjectInputs& inputs, const Volume& atlas, const PipelineConfig& cfg,
                          const std::string& subject_id = "subject");

/// A subject directory as found on disk.
struct SubjectSource {
  std::string id;
  std::filesystem::path dir;
  std::map<SequenceTag, std::filesystem::path> files;
  std::optional<std::filesystem::path> brain_mask;
  std::vector<std::string> warnings;
};

/// Subjects in `root`: every directory `{subject}/` holding files named
/// `{subject}-{tag}.nii[.gz]`. Files outside the scheme, tags not named in the
/// config and missing modalities produce warnings. Sorted by id.
std::vector<SubjectSource> discover_subjects(const std::filesystem::path& root, const PipelineConfig& cfg);

enum class SubjectStatus { ok, flagged, failed };
std::string_view to_string(SubjectStatus s);

struct SubjectOutcome {
  std::string id;
  SubjectStatus status = SubjectStatus::ok;
  std::string message;
  std::vector<std::filesystem::path> files;
};

struct BatchSummary {
  std::vector<SubjectOutcome> subjects; ///< same order as the input list
  std::size_t ok = 0, flagged = 0, failed = 0;

  /// 0 when every subject succeeded (flagged counts as success), 2 otherwise.
  int exit_code() const { return failed == 0 ? 0 : 2; }
  std::string to_json() const;
};

/// Process subjects concurrently with up to `parallelism` workers. A subject
/// that fails is reported and leaves no output tree; the others are
/// unaffected. Output for subject s:
///
///   {out}/{s}/{s}-{tag}.nii.gz
///   {out}/{s}/transforms/{tag}-to-atlas.txt
///   {out}/{s}/provenance.json
///
/// Throws IoError when the output directory cannot be created and
/// InvalidArgument when the atlas cannot be loaded or parallelism is 0.
BatchSummary run_batch(const std::vector<SubjectSource>& subjects, const PipelineConfig& cfg, std::size_t parallelism);

/// Built-in atlas names.
std::vector<std::string> builtin_atlas_names();

/// Resolve a built-in atlas name or read a NIfTI path. Built-in names load
/// `{name}.nii.gz` from the directory in LESIONKIT_ATLAS_DIR when it exists
/// there, otherwise a procedural low-resolution stand-in:
///
///   sri24:  80 x 80 x 52 voxels, 3 mm isotropic
///   mni152: 91 x 109 x 91 voxels, 2 mm isotropic
///
/// Throws InvalidArgument for an unknown name and IoError/FormatError for an
/// unreadable file.
Volume load_atlas(const std::string& name_or_path);

/// The procedural stand-in for a built-in atlas, ignoring the environment.
Volume builtin_atlas(const std::string& name);

} // namespace lesionkit::pipeline
