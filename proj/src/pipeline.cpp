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

#include "lesionkit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "lesionkit/anonymize.hpp"
#include "lesionkit/nifti.hpp"
#include "lesionkit/resample.hpp"
#include "lesionkit/version.hpp"

namespace lesionkit::pipeline {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json matrix_json(const Mat4& m) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  return rows;
}

json transform_json(const RigidTransform& t) {
  return {{"matrix", matrix_json(t.matrix())}, {"center", {t.center.x(), t.center.y(), t.center.z()}}};
}

json registration_json(const reg::RegistrationResult& r, const std::string& fixed, const std::string& moving) {
  return {{"backend", "lesionkit-mi-rigid"},
          {"fixed", fixed},
          {"moving", moving},
          {"transform", transform_json(r.transform)},
          {"initial_mi", r.initial_mi},
          {"final_mi", r.final_mi},
          {"converged", r.converged}};
}

class Recorder {
public:
  explicit Recorder(ProvenanceLog& log) : log_(log) {}

  void add(std::string step, std::string name, const json& params, std::vector<std::string> inputs,
           std::vector<std::string> outputs, std::vector<std::string> transforms, const Stopwatch& watch) {
    StepRecord r;
    r.step = std::move(step);
    r.name = std::move(name);
    r.parameters = params.dump();
    r.inputs = std::move(inputs);
    r.outputs = std::move(outputs);
    r.transforms = std::move(transforms);
    r.wall_time_s = watch.seconds();
    r.tool_version = std::string("lesionkit ") + kVersion;
    log_.steps.push_back(std::move(r));
  }

private:
  ProvenanceLog& log_;
};

std::string native_id(const SequenceTag& t) { return "native:" + t.str(); }
std::string transform_id(const SequenceTag& t) { return t.str() + "-to-atlas"; }

} // namespace

std::size_t ProvenanceLog::count(const std::string& step) const {
  return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [&](const StepRecord& r) { return r.step == step; }));
}

std::string ProvenanceLog::to_json() const {
  json j;
  j["schema"] = kProvenanceSchemaVersion;
  j["subject"] = subject;
  j["steps"] = json::array();
  for (const auto& s : steps)
    j["steps"].push_back({{"step", s.step},
                          {"name", s.name},
                          {"parameters", json::parse(s.parameters)},
                          {"inputs", s.inputs},
                          {"outputs", s.outputs},
                          {"transforms", s.transforms},
                          {"wall_time_s", s.wall_time_s},
                          {"tool_version", s.tool_version}});
  return j.dump(2);
}

ProvenanceLog ProvenanceLog::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("schema") != kProvenanceSchemaVersion) throw FormatError("unsupported provenance schema");
    ProvenanceLog log;
    log.subject = j.at("subject").get<std::string>();
    for (const auto& s : j.at("steps")) {
      StepRecord r;
      r.step = s.at("step").get<std::string>();
      r.name = s.at("name").get<std::string>();
      r.parameters = s.at("parameters").dump();
      r.inputs = s.at("inputs").get<std::vector<std::string>>();
      r.outputs = s.at("outputs").get<std::vector<std::string>>();
      r.transforms = s.at("transforms").get<std::vector<std::string>>();
      r.wall_time_s = s.at("wall_time_s").get<double>();
      r.tool_version = s.at("tool_version").get<std::string>();
      log.steps.push_back(std::move(r));
    }
    return log;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed provenance log: ") + e.what());
  }
}

SubjectResult run_subject(const SubjectInputs& inputs, const Volume& atlas, const PipelineConfig& cfg,
                          const std::string& subject_id) {
  cfg.validate();
  SubjectResult res;
  res.log.subject = subject_id;
  Recorder rec(res.log);
  const SequenceTag& center = cfg.center_modality;
  if (!inputs.images.count(center))
    throw InvalidArgument("subject '" + subject_id + "': missing center modality '" + center.str() + "'");

  std::vector<SequenceTag> moving;
  for (const auto& m : cfg.moving_modalities) {
    if (inputs.images.count(m))
      moving.push_back(m);
    else
      res.warnings.push_back("modality '" + m.str() + "' not provided; skipped");
  }
  for (const auto& [tag, v] : inputs.images) {
    (void)v;
    if (tag != center && std::find(moving.begin(), moving.end(), tag) == moving.end())
      res.warnings.push_back("modality '" + tag.str() + "' is not configured; ignored");
  }

  std::map<SequenceTag, Volume> native;
  std::vector<SequenceTag> all{center};
  all.insert(all.end(), moving.begin(), moving.end());
  for (const auto& tag : all) {
    const Volume& v = inputs.images.at(tag);
    if (is_canonical(v.grid())) {
      native.emplace(tag, v);
      continue;
    }
    Stopwatch w;
    native.emplace(tag, reorient_to_canonical(v));
    rec.add("reorient", "canonical_ras", json{{"modality", tag.str()}}, {"input:" + tag.str()}, {native_id(tag)}, {}, w);
  }

  const reg::MutualInformationBackend backend(cfg.registration);

  // Stage 1: moving -> center in native space.
  std::map<SequenceTag, RigidTransform> center_to_moving;
  for (const auto& m : moving) {
    Stopwatch w;
    const auto r = backend.register_rigid(native.at(center), native.at(m));
    res.flagged = res.flagged || !r.converged;
    center_to_moving[m] = r.transform;
    rec.add("register", "coregister_native", registration_json(r, native_id(center), native_id(m)),
            {native_id(center), native_id(m)}, {}, {center.str() + "-to-" + m.str()}, w);
  }

  // Stage 2: center -> atlas.
  {
    Stopwatch w;
    const auto r = backend.register_rigid(atlas, native.at(center));
    res.flagged = res.flagged || !r.converged;
    res.to_native[center] = r.transform;
    rec.add("register", "register_to_atlas", registration_json(r, "atlas", native_id(center)), {"atlas", native_id(center)},
            {}, {"atlas-to-" + center.str()}, w);
  }
  for (const auto& m : moving) res.to_native[m] = compose(center_to_moving.at(m), res.to_native.at(center));

  std::map<SequenceTag, std::string> current; // provenance id of each output's latest state
  auto resample_output = [&](const SequenceTag& tag, const json& composed_of) {
    Stopwatch w;
    res.outputs.insert_or_assign(tag, resample(native.at(tag), atlas.grid(), res.to_native.at(tag)));
    current[tag] = "atlas:" + tag.str();
    rec.add("resample_output", "to_atlas_grid",
            json{{"modality", tag.str()}, {"interpolation", "trilinear"}, {"transform", transform_json(res.to_native.at(tag))},
                 {"composed_of", composed_of}},
            {native_id(tag)}, {current[tag]}, {transform_id(tag)}, w);
  };
  resample_output(center, json::array({"atlas-to-" + center.str()}));

  // Stage 3: refine moving -> center on the atlas grid, starting from the
  // composed transform and registering the native data directly.
  std::map<SequenceTag, json> chain;
  for (const auto& m : moving) chain[m] = json::array({"atlas-to-" + center.str(), center.str() + "-to-" + m.str()});
  if (cfg.do_second_coregistration) {
    for (const auto& m : moving) {
      Stopwatch w;
      reg::RegistrationOptions opts = cfg.registration;
      opts.initial = res.to_native.at(m);
      const auto r = reg::register_rigid(res.outputs.at(center), native.at(m), opts);
      res.flagged = res.flagged || !r.converged;
      const RigidTransform refinement = compose(invert(res.to_native.at(m)), r.transform);
      res.to_native[m] = r.transform;
      json params = registration_json(r, current[center], native_id(m));
      params["refinement"] = transform_json(refinement);
      rec.add("register", "coregister_atlas", params, {current[center], native_id(m)}, {},
              {"refine-" + m.str()}, w);
      chain[m].push_back("refine-" + m.str());
    }
  }
  for (const auto& m : moving) resample_output(m, chain[m]);

  // Stage 4: brain mask, defacing, skull stripping.
  std::optional<Volume> mask;
  if (cfg.brain_extraction.source == MaskSource::external_mask) {
    if (!inputs.brain_mask) throw InvalidArgument("subject '" + subject_id + "': external brain mask not provided");
    Volume m = inputs.brain_mask->intent() == Intent::mask ? *inputs.brain_mask : inputs.brain_mask->with_intent(Intent::mask);
    const Volume& raw_center = inputs.images.at(center);
    if (m.dims() != raw_center.dims())
      throw InvalidArgument("subject '" + subject_id + "': brain mask dims differ from the center modality");
    if (!is_canonical(m.grid())) m = reorient_to_canonical(m);
    Stopwatch w;
    mask = resample(m, atlas.grid(), res.to_native.at(center), Interpolation::nearest);
    rec.add("resample_mask", "brain_mask_to_atlas", json{{"interpolation", "nearest"}}, {"input:brain_mask"}, {"atlas:brain_mask"},
            {transform_id(center)}, w);
  } else if (cfg.brain_extraction.source == MaskSource::fallback) {
    Stopwatch w;
    mask = anon::estimate_brain_mask_fallback(res.outputs.at(center));
    rec.add("estimate_brain_mask", "fallback", json{{"method", "otsu+largest_component+closing+fill_holes"}},
            {current[center]}, {"atlas:brain_mask"}, {}, w);
  }
  res.brain_mask = mask;

  if (cfg.defacing.enabled) {
    for (const auto& tag : all) {
      Stopwatch w;
      auto d = anon::quickshear_deface(res.outputs.at(tag), *mask, cfg.defacing.buffer_mm);
      res.outputs.insert_or_assign(tag, std::move(d.volume));
      const std::string out = "defaced:" + tag.str();
      rec.add("deface", "quickshear",
              json{{"buffer_mm", cfg.defacing.buffer_mm},
                   {"plane_normal", {d.plane.normal.x(), d.plane.normal.y(), d.plane.normal.z()}},
                   {"plane_offset", d.plane.offset},
                   {"zeroed_voxels", d.zeroed}},
              {current[tag], "atlas:brain_mask"}, {out}, {}, w);
      current[tag] = out;
    }
  }
  if (mask && cfg.brain_extraction.apply) {
    for (const auto& tag : all) {
      Stopwatch w;
      auto masked = anon::apply_brain_mask(res.outputs.at(tag), *mask);
      if (masked.empty_mask) res.warnings.push_back("brain mask is empty; '" + tag.str() + "' is all zero");
      res.outputs.insert_or_assign(tag, std::move(masked.volume));
      const std::string out = "skullstripped:" + tag.str();
      rec.add("skull_strip", "apply_brain_mask", json::object(), {current[tag], "atlas:brain_mask"}, {out}, {}, w);
      current[tag] = out;
    }
  }

  // Stage 5: intensity.
  if (cfg.n4.enabled) {
    const Volume n4_mask = mask ? *mask : Volume(atlas.grid(), std::vector<float>(atlas.size(), 1.0f), Intent::mask);
    for (const auto& tag : all) {
      Stopwatch w;
      auto r = intensity::n4_correct(res.outputs.at(tag), n4_mask, cfg.n4.options);
      res.outputs.insert_or_assign(tag, std::move(r.corrected));
      const std::string out = "n4:" + tag.str();
      rec.add("n4", "bias_correction",
              json{{"fitting_levels", cfg.n4.options.fitting_levels},
                   {"max_iterations", cfg.n4.options.max_iterations},
                   {"convergence_tolerance", cfg.n4.options.convergence_tolerance},
                   {"iterations_per_level", r.iterations_per_level},
                   {"no_op", r.no_op}},
              {current[tag]}, {out}, {}, w);
      current[tag] = out;
    }
  }
  if (cfg.normalization) {
    for (const auto& tag : all) {
      Stopwatch w;
      intensity::NormalizationSpec spec;
      spec.method = cfg.normalization->method;
      spec.percentiles = cfg.normalization->percentiles;
      spec.mask = mask;
      intensity::NormalizationRecord nr;
      res.outputs.insert_or_assign(tag, intensity::normalize(res.outputs.at(tag), spec, &nr));
      const std::string out = "normalized:" + tag.str();
      rec.add("normalize", std::string(intensity::to_string(spec.method)),
              json{{"percentiles", {spec.percentiles.first, spec.percentiles.second}}, {"offset", nr.offset}, {"scale", nr.scale}},
              {current[tag]}, {out}, {}, w);
      current[tag] = out;
    }
  }
  return res;
}

std::vector<SubjectSource> discover_subjects(const fs::path& root, const PipelineConfig& cfg) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("subjects directory '" + root.string() + "' is not readable");
  const auto wanted = cfg.modalities();
  const bool per_subject_mask = cfg.brain_extraction.source == MaskSource::external_mask &&
                                !cfg.brain_extraction.mask_path.has_parent_path();
  std::vector<SubjectSource> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string id = entry.path().filename().string();
    if (id.empty() || id[0] == '.') continue;
    SubjectSource s;
    s.id = id;
    s.dir = entry.path();
    if (!is_valid_subject_id(id)) {
      s.warnings.push_back("directory '" + id + "' is not a valid subject id");
      out.push_back(std::move(s));
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(entry.path())) files.push_back(f.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      if (per_subject_mask && name == cfg.brain_extraction.mask_path.string()) {
        s.brain_mask = f;
        continue;
      }
      const std::string prefix = id + "-";
      std::string stem;
      if (name.size() > 7 && name.ends_with(".nii.gz"))
        stem = name.substr(0, name.size() - 7);
      else if (name.size() > 4 && name.ends_with(".nii"))
        stem = name.substr(0, name.size() - 4);
      if (stem.empty() || !stem.starts_with(prefix) || !fs::is_regular_file(f)) {
        s.warnings.push_back("'" + name + "' does not follow the {subject}-{tag}.nii.gz naming scheme");
        continue;
      }
      const std::string token = stem.substr(prefix.size());
      if (!SequenceTag::is_valid_token(token)) {
        s.warnings.push_back("'" + name + "' has an invalid sequence tag");
        continue;
      }
      const SequenceTag tag = SequenceTag::parse(token);
      if (std::find(wanted.begin(), wanted.end(), tag) == wanted.end()) {
        s.warnings.push_back("'" + name + "': modality '" + token + "' is not configured");
        continue;
      }
      if (s.files.count(tag)) {
        s.warnings.push_back("'" + name + "': modality '" + token + "' appears more than once; keeping " +
                             s.files[tag].filename().string());
        continue;
      }
      s.files[tag] = f;
    }
    for (const auto& tag : wanted)
      if (!s.files.count(tag)) s.warnings.push_back("modality '" + tag.str() + "' is missing");
    if (per_subject_mask && !s.brain_mask) s.warnings.push_back("brain mask '" + cfg.brain_extraction.mask_path.string() + "' is missing");
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const SubjectSource& a, const SubjectSource& b) { return a.id < b.id; });
  return out;
}

std::string_view to_string(SubjectStatus s) {
  switch (s) {
  case SubjectStatus::ok: return "ok";
  case SubjectStatus::flagged: return "flagged";
  case SubjectStatus::failed: return "failed";
  }
  return "?";
}

std::string BatchSummary::to_json() const {
  json j;
  j["ok"] = ok;
  j["flagged"] = flagged;
  j["failed"] = failed;
  j["subjects"] = json::array();
  for (const auto& s : subjects) {
    json files = json::array();
    for (const auto& f : s.files) files.push_back(f.string());
    j["subjects"].push_back({{"id", s.id}, {"status", to_string(s.status)}, {"message", s.message}, {"files", files}});
  }
  return j.dump(2);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out.flush()) throw IoError("cannot write '" + path.string() + "'");
}

SubjectOutcome process_subject(const SubjectSource& src, const Volume& atlas, const PipelineConfig& cfg) {
  SubjectOutcome outcome;
  outcome.id = src.id;
  const fs::path staging = cfg.output_dir / ("." + src.id + ".partial");
  try {
    if (!is_valid_subject_id(src.id)) throw InvalidArgument("invalid subject id '" + src.id + "'");
    SubjectInputs inputs;
    for (const auto& [tag, path] : src.files) inputs.images.emplace(tag, read_nifti(path));
    if (cfg.brain_extraction.source == MaskSource::external_mask) {
      const fs::path mask_path =
          cfg.brain_extraction.mask_path.has_parent_path() ? cfg.brain_extraction.mask_path : src.brain_mask.value_or(fs::path{});
      if (mask_path.empty()) throw InvalidArgument("brain mask '" + cfg.brain_extraction.mask_path.string() + "' not found");
      inputs.brain_mask = read_nifti(mask_path, Intent::mask);
    }

    SubjectResult r = run_subject(inputs, atlas, cfg, src.id);

    fs::remove_all(staging);
    fs::create_directories(staging / "transforms");
    Stopwatch w;
    std::vector<std::string> written;
    for (const auto& [tag, v] : r.outputs) {
      const std::string name = src.id + "-" + tag.str() + ".nii.gz";
      write_nifti(v, staging / name);
      written.push_back(name);
    }
    for (const auto& [tag, t] : r.to_native) {
      const std::string name = "transforms/" + transform_id(tag) + ".txt";
      save_transform(t, staging / name);
      written.push_back(name);
    }
    std::vector<std::string> ids;
    for (const auto& [tag, v] : r.outputs) {
      (void)v;
      ids.push_back(tag.str());
    }
    Recorder(r.log).add("write_outputs", "subject_tree", json{{"compression", "gzip"}}, ids, written, {}, w);
    write_text(staging / "provenance.json", r.log.to_json());

    const fs::path final_dir = cfg.output_dir / src.id;
    fs::remove_all(final_dir);
    fs::rename(staging, final_dir);
    for (const auto& name : written) outcome.files.push_back(final_dir / name);
    outcome.files.push_back(final_dir / "provenance.json");
    outcome.status = r.flagged ? SubjectStatus::flagged : SubjectStatus::ok;
    std::string msg;
    for (const auto& warning : r.warnings) msg += (msg.empty() ? "" : "; ") + warning;
    if (r.flagged) msg = "registration did not converge" + (msg.empty() ? "" : "; " + msg);
    outcome.message = msg;
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    outcome.status = SubjectStatus::failed;
    outcome.message = e.what();
    outcome.files.clear();
  }
  return outcome;
}

} // namespace

BatchSummary run_batch(const std::vector<SubjectSource>& subjects, const PipelineConfig& cfg, std::size_t parallelism) {
  if (parallelism == 0) throw InvalidArgument("parallelism must be positive");
  if (cfg.output_dir.empty()) throw InvalidArgument("output_dir is not set");
  cfg.validate();
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  const fs::path probe = cfg.output_dir / ".lesionkit-write-probe";
  {
    std::ofstream p(probe);
    if (ec || !p) throw IoError("output directory '" + cfg.output_dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);

  BatchSummary summary;
  if (subjects.empty()) return summary;
  const Volume atlas = load_atlas(cfg.atlas);

  summary.subjects.resize(subjects.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < subjects.size(); i = next++) summary.subjects[i] = process_subject(subjects[i], atlas, cfg);
  };
  const std::size_t n_workers = std::min(parallelism, subjects.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& s : summary.subjects) {
    summary.ok += s.status == SubjectStatus::ok;
    summary.flagged += s.status == SubjectStatus::flagged;
    summary.failed += s.status == SubjectStatus::failed;
  }
  return summary;
}

} // namespace lesionkit::pipeline
