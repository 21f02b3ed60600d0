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

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lesionkit/metrics.hpp"
#include "lesionkit/nifti.hpp"
#include "lesionkit/pipeline.hpp"
#include "lesionkit/registration.hpp"
#include "pipeline_fixtures.hpp"

using namespace lesionkit;
using namespace lesionkit::pipeline;
using namespace testsupport;

namespace {

const SequenceTag t1c = SequenceTag::parse("t1c");
const SequenceTag t1n = SequenceTag::parse("t1n");
const SequenceTag t2w = SequenceTag::parse("t2w");
const SequenceTag t2f = SequenceTag::parse("t2f");

PipelineConfig base_config() {
  PipelineConfig cfg;
  cfg.center_modality = t1c;
  cfg.moving_modalities = {t2w, t2f};
  cfg.atlas = "unused";
  cfg.do_second_coregistration = false;
  return cfg;
}

PipelineConfig fast_config() {
  PipelineConfig cfg = base_config();
  cfg.registration.pyramid = {2, 1};
  return cfg;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const StepRecord* find_step(const ProvenanceLog& log, const std::string& step, const std::string& output) {
  for (const auto& s : log.steps)
    if (s.step == step && std::find(s.outputs.begin(), s.outputs.end(), output) != s.outputs.end()) return &s;
  return nullptr;
}

} // namespace

TEST_SUITE("sequence tags") {
  TEST_CASE("standard and free-form tags") {
    CHECK(SequenceTag::parse("t1n").kind() == SequenceTag::Kind::t1n);
    CHECK(SequenceTag::parse("t2f").is_standard());
    const auto o = SequenceTag::parse("dwi_b1000");
    CHECK(o.kind() == SequenceTag::Kind::other);
    CHECK(o.str() == "dwi_b1000");
    for (const char* bad : {"", "T1c", "t1-c", "a b", "t1c/"}) CHECK_THROWS_AS(SequenceTag::parse(bad), InvalidArgument);
    CHECK(is_valid_subject_id("sub-01"));
    CHECK(is_valid_subject_id("Case7"));
    CHECK_FALSE(is_valid_subject_id(""));
    CHECK_FALSE(is_valid_subject_id("sub_01"));
    CHECK_FALSE(is_valid_subject_id("../x"));
  }
}

TEST_SUITE("pipeline config") {
  TEST_CASE("defaults and full document") {
    const auto cfg = config_from_json(R"({"center_modality": "t1c", "moving_modalities": ["t1n", "t2w", "t2f"]})");
    CHECK(cfg.center_modality == t1c);
    CHECK(cfg.moving_modalities.size() == 3);
    CHECK(cfg.atlas == "sri24");
    CHECK(cfg.do_second_coregistration);
    CHECK(cfg.brain_extraction.source == MaskSource::none);
    CHECK_FALSE(cfg.n4.enabled);
    CHECK_FALSE(cfg.normalization.has_value());

    const auto full = config_from_json(R"({
      "schema": "lesionkit-pipeline-config v1",
      "center_modality": "t1c", "moving_modalities": ["t2w"], "atlas": "atlas/a.nii.gz",
      "do_second_coregistration": false,
      "brain_extraction": {"mode": "external_mask", "mask": "brain.nii.gz", "apply": false},
      "defacing": {"enabled": true, "buffer_mm": 4},
      "n4": {"enabled": true, "fitting_levels": 3, "max_iterations": 20},
      "normalization": {"method": "percentile_clamp", "percentiles": [1, 99]},
      "registration": {"pyramid": [2, 1], "bins": 24},
      "output_dir": "out"})",
                                       "/data");
    CHECK(full.atlas == "/data/atlas/a.nii.gz");
    CHECK(full.output_dir == "/data/out");
    CHECK(full.brain_extraction.mask_path == "brain.nii.gz");
    CHECK_FALSE(full.brain_extraction.apply);
    CHECK(full.defacing.buffer_mm == 4.0);
    CHECK(full.n4.options.fitting_levels == 3);
    CHECK(full.normalization->method == intensity::NormalizationMethod::percentile_clamp);
    CHECK(full.registration.pyramid == std::vector<std::size_t>{2, 1});
    CHECK(full.registration.bins == 24);

    const auto again = config_from_json(config_to_json(full));
    CHECK(config_to_json(again) == config_to_json(full));
  }

  TEST_CASE("violations carry a JSON pointer") {
    auto pointer_of = [](const std::string& text) {
      try {
        config_from_json(text);
      } catch (const ConfigError& e) {
        return e.pointer();
      }
      return std::string("<accepted>");
    };
    CHECK(pointer_of(R"({"center_modality": "t1c", "colour": 1})") == "/colour");
    CHECK(pointer_of(R"({"center_modality": "t1c", "n4": {"fitting_level": 2}})") == "/n4/fitting_level");
    CHECK(pointer_of(R"({"center_modality": "t1c", "n4": {"enabled": "yes"}})") == "/n4/enabled");
    CHECK(pointer_of(R"({"moving_modalities": []})") == "/center_modality");
    CHECK(pointer_of(R"({"center_modality": "t1c", "moving_modalities": ["t2w", "t1c"]})") == "/moving_modalities/1");
    CHECK(pointer_of(R"({"center_modality": "t1c", "moving_modalities": ["t2w", "t2w"]})") == "/moving_modalities/1");
    CHECK(pointer_of(R"({"center_modality": "T1"})") == "/center_modality");
    CHECK(pointer_of(R"({"center_modality": "t1c", "registration": {"pyramid": [2, 0]}})") == "/registration/pyramid/1");
    CHECK(pointer_of(R"({"center_modality": "t1c", "brain_extraction": {"mode": "magic"}})") == "/brain_extraction/mode");
    CHECK(pointer_of(R"({"center_modality": "t1c", "defacing": {"enabled": true}})") == "/defacing/enabled");
    CHECK(pointer_of(R"({"center_modality": "t1c", "normalization": {"method": "rank"}})") == "/normalization/method");
    CHECK(pointer_of(R"({"center_modality": "t1c", "a/b~c": 1})") == "/a~1b~0c");
    CHECK(pointer_of(R"([1, 2])") == "/");
    CHECK(pointer_of("{not json") == "/");
  }

  TEST_CASE("load_config resolves relative to the file") {
    TempDir dir("cfg");
    std::ofstream(dir / "cfg.json") << R"({"center_modality": "t1n", "output_dir": "results"})";
    const auto cfg = load_config(dir / "cfg.json");
    CHECK(cfg.output_dir == dir.path() / "results");
    CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
  }
}

TEST_SUITE("atlas") {
  TEST_CASE("built-in stand-ins") {
    const Volume sri = load_atlas("sri24");
    CHECK(sri.dims() == Dims{80, 80, 52});
    CHECK(sri.spacing().isApprox(Vec3(3, 3, 3)));
    const Volume mni = load_atlas("mni152");
    CHECK(mni.dims() == Dims{91, 109, 91});
    CHECK(mni.spacing().isApprox(Vec3(2, 2, 2)));
    // Head at the grid center, background at the corners.
    CHECK(sri.at(40, 40, 26) > 50.0f);
    CHECK(sri.at(0, 0, 0) == 0.0f);
    CHECK(bit_equal(load_atlas("sri24").data(), sri.data()));
  }

  TEST_CASE("paths and environment directory") {
    TempDir dir("atlas");
    const Volume a = atlas_volume(16, 4.0);
    write_nifti(a, dir / "mine.nii.gz");
    const Volume loaded = load_atlas((dir / "mine.nii.gz").string());
    CHECK(bit_equal(loaded.data(), read_nifti(dir / "mine.nii.gz").data()));
    CHECK(loaded.affine() == read_nifti(dir / "mine.nii.gz").affine());

    write_nifti(a, dir / "sri24.nii.gz");
    ::setenv(kAtlasDirEnv, dir.path().c_str(), 1);
    CHECK(load_atlas("sri24").dims() == Dims{16, 16, 16});
    CHECK(load_atlas("mni152").dims() == Dims{91, 109, 91});
    ::unsetenv(kAtlasDirEnv);
    CHECK(load_atlas("sri24").dims() == Dims{80, 80, 52});
  }

  TEST_CASE("unknown names list the valid ones") {
    try {
      load_atlas("unknown-atlas");
      FAIL("accepted an unknown atlas");
    } catch (const InvalidArgument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("sri24") != std::string::npos);
      CHECK(msg.find("mni152") != std::string::npos);
    }
    CHECK_THROWS_AS(load_atlas("/nonexistent/atlas.nii.gz"), IoError);
  }
}

TEST_SUITE("run_subject") {
  TEST_CASE("three misaligned modalities end up aligned on the atlas grid") {
    const Volume atlas = atlas_volume();
    const auto subject = synthetic_subject({t1c, t2w, t2f}, 7, 5.0, 5.0);
    PipelineConfig cfg = base_config();
    cfg.do_second_coregistration = true;
    const SubjectResult r = run_subject(subject.inputs, atlas, cfg, "sub-01");

    CHECK_FALSE(r.flagged);
    REQUIRE(r.outputs.size() == 3);
    const double voxel = atlas.spacing().maxCoeff();
    for (const auto& [tag, v] : r.outputs) {
      CAPTURE(tag.str());
      CHECK(v.grid() == atlas.grid());
      CHECK(v.affine() == atlas.affine());
      CHECK(max_displacement(r.to_native.at(tag), subject.truth.at(tag)) < 0.5 * voxel);
    }
    // Re-registering the outputs finds no residual motion.
    for (const auto& tag : {t2w, t2f}) {
      const auto rr = reg::register_rigid(r.outputs.at(t1c), r.outputs.at(tag));
      CAPTURE(tag.str());
      CHECK(max_displacement(rr.transform, RigidTransform::identity()) < 0.5 * voxel);
    }
    // One interpolation per modality, always from the native data.
    CHECK(r.log.count("resample_output") == 3);
    for (const auto& tag : {t1c, t2w, t2f}) {
      const StepRecord* s = find_step(r.log, "resample_output", "atlas:" + tag.str());
      REQUIRE(s != nullptr);
      CHECK(s->inputs == std::vector<std::string>{"native:" + tag.str()});
    }
    CHECK(r.log.count("register") == 5);
    CHECK(r.log.steps.back().step == "resample_output");
  }

  TEST_CASE("optional stages off") {
    const Volume atlas = atlas_volume(32, 3.0);
    const auto subject = synthetic_subject({t1c, t2w, t2f}, 11, 3.0, 3.0, 40, 2.4);
    const SubjectResult r = run_subject(subject.inputs, atlas, fast_config(), "sub-02");
    CHECK(r.outputs.size() == 3);
    CHECK(r.log.count("register") == 2 + 1);
    for (const char* step : {"deface", "skull_strip", "estimate_brain_mask", "resample_mask", "n4", "normalize"})
      CHECK(r.log.count(step) == 0);
    CHECK_FALSE(r.brain_mask.has_value());
    // Registration records come before any resampling.
    CHECK(r.log.steps[0].step == "register");
    CHECK(r.log.steps[2].step == "register");
    CHECK(r.log.steps[3].step == "resample_output");
  }

  TEST_CASE("defacing leaves the brain untouched") {
    const Volume atlas = atlas_volume(32, 3.0);
    const auto subject_plain = synthetic_subject({t1c, t2w}, 13, 3.0, 3.0, 40, 2.4);
    auto subject = subject_plain;
    subject.inputs.brain_mask = phantom_brain_mask(subject.inputs.images.at(t1c), subject.truth.at(t1c));

    PipelineConfig cfg = fast_config();
    cfg.moving_modalities = {t2w};
    cfg.brain_extraction.source = MaskSource::external_mask;
    cfg.brain_extraction.mask_path = "mask.nii.gz";
    cfg.brain_extraction.apply = false;
    const SubjectResult off = run_subject(subject.inputs, atlas, cfg, "sub-03");
    cfg.defacing.enabled = true;
    cfg.defacing.buffer_mm = 0.0;
    const SubjectResult on = run_subject(subject.inputs, atlas, cfg, "sub-03");

    REQUIRE(on.brain_mask.has_value());
    const Volume& mask = *on.brain_mask;
    std::size_t brain = 0, removed = 0;
    for (const auto& tag : {t1c, t2w}) {
      const Volume& a = off.outputs.at(tag);
      const Volume& b = on.outputs.at(tag);
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (mask[i] != 0.0f) {
          ++brain;
          CHECK(std::bit_cast<std::uint32_t>(a[i]) == std::bit_cast<std::uint32_t>(b[i]));
        } else if (a[i] != b[i]) {
          CHECK(b[i] == 0.0f);
          ++removed;
        }
      }
    }
    CHECK(brain > 0);
    CHECK(removed > 0);
    CHECK(on.log.count("deface") == 2);
    CHECK(on.log.count("resample_mask") == 1);

    auto no_mask = subject_plain;
    CHECK_THROWS_AS(run_subject(no_mask.inputs, atlas, cfg, "sub-03"), InvalidArgument);
  }

  TEST_CASE("skull stripping, N4 and normalization") {
    const Volume atlas = atlas_volume(32, 3.0);
    const auto subject = synthetic_subject({t1c, t2w}, 17, 3.0, 3.0, 40, 2.4);
    PipelineConfig cfg = fast_config();
    cfg.moving_modalities = {t2w};
    cfg.brain_extraction.source = MaskSource::fallback;
    cfg.n4.enabled = true;
    cfg.n4.options.fitting_levels = 2;
    cfg.n4.options.max_iterations = 10;
    cfg.normalization = NormalizationStep{};
    const SubjectResult r = run_subject(subject.inputs, atlas, cfg, "sub-04");
    REQUIRE(r.brain_mask.has_value());
    for (const auto& [tag, v] : r.outputs) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if ((*r.brain_mask)[i] == 0.0f) {
          CHECK(v[i] == 0.0f);
          continue;
        }
        sum += v[i];
        sq += double(v[i]) * v[i];
        ++n;
      }
      CAPTURE(tag.str());
      CHECK(std::abs(sum / n) < 1e-4);
      CHECK(std::sqrt(sq / n) == doctest::Approx(1.0).epsilon(1e-4));
    }
    const std::vector<std::string> order{"register", "register", "resample_output", "resample_output", "estimate_brain_mask",
                                         "skull_strip", "skull_strip", "n4", "n4", "normalize", "normalize"};
    REQUIRE(r.log.steps.size() == order.size());
    for (std::size_t i = 0; i < order.size(); ++i) CHECK(r.log.steps[i].step == order[i]);
  }

  TEST_CASE("determinism and reorientation") {
    const Volume atlas = atlas_volume(32, 3.0);
    auto subject = synthetic_subject({t1c, t2w}, 19, 3.0, 3.0, 40, 2.4);
    PipelineConfig cfg = fast_config();
    cfg.moving_modalities = {t2w};
    const SubjectResult a = run_subject(subject.inputs, atlas, cfg);
    const SubjectResult b = run_subject(subject.inputs, atlas, cfg);
    for (const auto& [tag, v] : a.outputs) CHECK(bit_equal(v.data(), b.outputs.at(tag).data()));

    // An LPS copy of the moving image describes the same world content.
    const Volume& ras = subject.inputs.images.at(t2w);
    const Dims d = ras.dims();
    Mat4 flip = Mat4::Identity();
    flip(0, 0) = -1;
    flip(1, 1) = -1;
    flip(0, 3) = double(d[0] - 1);
    flip(1, 3) = double(d[1] - 1);
    const Volume lps = volume_from(d, ras.affine() * flip, [&](std::size_t i, std::size_t j, std::size_t k) {
      return ras.at(d[0] - 1 - i, d[1] - 1 - j, k);
    });
    subject.inputs.images.insert_or_assign(t2w, lps);
    const SubjectResult c = run_subject(subject.inputs, atlas, cfg);
    CHECK(c.log.count("reorient") == 1);
    CHECK(bit_equal(c.outputs.at(t2w).data(), a.outputs.at(t2w).data()));
  }

  TEST_CASE("missing and extra modalities") {
    const Volume atlas = atlas_volume(32, 3.0);
    auto subject = synthetic_subject({t1c, t2w, t1n}, 23, 2.0, 2.0, 40, 2.4);
    PipelineConfig cfg = fast_config();
    const SubjectResult r = run_subject(subject.inputs, atlas, cfg);
    CHECK(r.outputs.size() == 2);
    CHECK(r.warnings.size() == 2); // t2f missing, t1n not configured
    subject.inputs.images.erase(t1c);
    CHECK_THROWS_AS(run_subject(subject.inputs, atlas, cfg), InvalidArgument);
  }
}

TEST_SUITE("batch") {
  TEST_CASE("discovery follows the naming scheme") {
    TempDir dir("discover");
    PipelineConfig cfg = fast_config();
    const auto s = synthetic_subject({t1c, t2w, t2f}, 29, 1.0, 1.0, 8, 8.0);
    write_subject(dir.path(), "sub-01", s);
    write_subject(dir.path(), "sub-02", s);
    std::ofstream(dir / "sub-02" / "notes.txt") << "x";
    write_nifti(s.inputs.images.at(t1c), dir / "sub-02" / "sub-02-dwi.nii.gz");
    std::filesystem::remove(dir / "sub-02" / "sub-02-t2f.nii.gz");
    std::filesystem::create_directories(dir / "bad_id");
    std::ofstream(dir / "stray.txt") << "x";

    const auto subjects = discover_subjects(dir.path(), cfg);
    REQUIRE(subjects.size() == 3);
    CHECK(subjects[0].id == "bad_id");
    CHECK(subjects[0].warnings.size() == 1);
    CHECK(subjects[1].id == "sub-01");
    CHECK(subjects[1].files.size() == 3);
    CHECK(subjects[1].warnings.empty());
    CHECK(subjects[2].files.size() == 2);
    CHECK(subjects[2].warnings.size() == 3); // notes.txt, dwi, missing t2f
    CHECK_THROWS_AS(discover_subjects(dir / "nope", cfg), IoError);
  }

  TEST_CASE("one corrupt subject does not stop the others") {
    TempDir dir("batch");
    const auto root = dir / "in";
    PipelineConfig cfg = fast_config();
    cfg.moving_modalities = {t2w};
    cfg.output_dir = dir / "out";
    const Volume atlas = atlas_volume(32, 3.0);
    write_nifti(atlas, dir / "atlas.nii.gz");
    cfg.atlas = (dir / "atlas.nii.gz").string();
    for (const auto& [id, seed] : std::vector<std::pair<std::string, unsigned>>{{"a-1", 31}, {"b-2", 37}, {"c-3", 41}})
      write_subject(root, id, synthetic_subject({t1c, t2w}, seed, 3.0, 3.0, 40, 2.4));
    std::ofstream(root / "b-2" / "b-2-t2w.nii.gz", std::ios::trunc) << "not a nifti file";

    const auto summary = run_batch(discover_subjects(root, cfg), cfg, 2);
    CHECK(summary.ok + summary.flagged == 2);
    CHECK(summary.failed == 1);
    CHECK(summary.exit_code() == 2);
    CHECK(summary.subjects[1].status == SubjectStatus::failed);
    CHECK_FALSE(std::filesystem::exists(cfg.output_dir / "b-2"));
    CHECK_FALSE(std::filesystem::exists(cfg.output_dir / ".b-2.partial"));
    for (const std::string id : {"a-1", "c-3"}) {
      const auto sub = cfg.output_dir / id;
      for (const auto& name : {id + "-t1c.nii.gz", id + "-t2w.nii.gz", std::string("transforms/t1c-to-atlas.txt"),
                               std::string("transforms/t2w-to-atlas.txt"), std::string("provenance.json")})
        CHECK(std::filesystem::exists(sub / name));
      const Volume out = read_nifti(sub / (id + "-t2w.nii.gz"));
      CHECK(out.grid() == atlas.grid());

      // Every written file is referenced by exactly one provenance record.
      const auto log = ProvenanceLog::from_json(read_file(sub / "provenance.json"));
      CHECK(log.subject == id);
      std::size_t files_on_disk = 0;
      for (const auto& e : std::filesystem::recursive_directory_iterator(sub)) {
        if (!e.is_regular_file() || e.path().filename() == "provenance.json") continue;
        ++files_on_disk;
        const std::string rel = std::filesystem::relative(e.path(), sub).string();
        std::size_t refs = 0;
        for (const auto& s : log.steps) refs += std::count(s.outputs.begin(), s.outputs.end(), rel);
        CAPTURE(rel);
        CHECK(refs == 1);
      }
      CHECK(files_on_disk == 4);
      const RigidTransform t = load_transform(sub / "transforms" / "t2w-to-atlas.txt");
      CHECK(std::isfinite(t.matrix().sum()));
    }
    const auto j = nlohmann::json::parse(summary.to_json());
    CHECK(j["failed"] == 1);
    CHECK(j["subjects"][1]["status"] == "failed");
  }

  TEST_CASE("parallelism does not change the output") {
    TempDir dir("parallel");
    const auto root = dir / "in";
    PipelineConfig cfg = fast_config();
    cfg.moving_modalities = {t2w};
    const Volume atlas = atlas_volume(32, 3.0);
    write_nifti(atlas, dir / "atlas.nii.gz");
    cfg.atlas = (dir / "atlas.nii.gz").string();
    for (unsigned s = 0; s < 4; ++s)
      write_subject(root, "s-" + std::to_string(s), synthetic_subject({t1c, t2w}, 100 + s, 3.0, 3.0, 40, 2.4));
    const auto subjects = discover_subjects(root, cfg);

    cfg.output_dir = dir / "p1";
    const auto s1 = run_batch(subjects, cfg, 1);
    cfg.output_dir = dir / "p4";
    const auto s4 = run_batch(subjects, cfg, 4);
    CHECK(s1.failed == 0);
    CHECK(s4.failed == 0);
    for (const auto& s : subjects)
      for (const char* tag : {"t1c", "t2w"}) {
        const std::string name = s.id + "/" + s.id + "-" + tag + ".nii.gz";
        CHECK(bit_equal(read_nifti(dir / "p1" / name).data(), read_nifti(dir / "p4" / name).data()));
        CHECK(read_file(dir / "p1" / name) == read_file(dir / "p4" / name));
      }
  }

  TEST_CASE("empty list and unusable output directory") {
    TempDir dir("empty");
    PipelineConfig cfg = fast_config();
    cfg.output_dir = dir / "out";
    const auto summary = run_batch({}, cfg, 3);
    CHECK(summary.subjects.empty());
    CHECK(summary.exit_code() == 0);

    std::ofstream(dir / "file") << "x";
    cfg.output_dir = dir / "file" / "out";
    CHECK_THROWS_AS(run_batch({}, cfg, 1), IoError);
    cfg.output_dir = dir / "out";
    CHECK_THROWS_AS(run_batch({}, cfg, 0), InvalidArgument);
    cfg.output_dir.clear();
    CHECK_THROWS_AS(run_batch({}, cfg, 1), InvalidArgument);
  }
}
