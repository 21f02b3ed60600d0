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

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "lesionkit/anonymize.hpp"
#include "lesionkit/n4.hpp"
#include "lesionkit/nifti.hpp"
#include "lesionkit/panoptic.hpp"
#include "lesionkit/pipeline.hpp"
#include "lesionkit/registration.hpp"
#include "lesionkit/resample.hpp"
#include "lesionkit/stats.hpp"
#include "lesionkit/tagging.hpp"
#include "oracles.hpp"
#include "pipeline_fixtures.hpp"

using namespace lesionkit;
using namespace testsupport;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed conditions; the first few messages end up in the detail line.
class Checker {
public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (failures_ < 3) message_ += (message_.empty() ? "" : "; ") + what;
    ++failures_;
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " failure(s): " + message_ + " | " + summary};
  }

private:
  std::size_t failures_ = 0;
  std::string message_;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const SequenceTag t1c = SequenceTag::parse("t1c");
const SequenceTag t2w = SequenceTag::parse("t2w");
const SequenceTag t2f = SequenceTag::parse("t2f");

// Rotation of up to `max_deg` about a random axis and a translation of up to
// `max_mm` in a random direction, about `center`.
RigidTransform bounded_perturbation(std::mt19937& rng, double max_deg, double max_mm, const Vec3& center) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
  const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
  const double angle = u(rng) * max_deg * M_PI / 180.0;
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  m.topRightCorner<3, 1>() = dir * (u(rng) * max_mm);
  // The matrix is the motion about `center`: x -> R (x - c) + c + t.
  m.topRightCorner<3, 1>() += center - m.topLeftCorner<3, 3>() * center;
  return RigidTransform::from_matrix(m, center);
}

Outcome registration_recovery() {
  Checker c;
  const Volume fixed = head_volume(64);
  const Vec3 center = fixed.voxel_to_world(Vec3::Constant(31.5));
  const double voxel = fixed.spacing().maxCoeff();
  std::mt19937 rng(2024);
  double worst_t = 0.0, worst_r = 0.0, worst_s = 0.0;
  for (int run = 0; run < 10; ++run) {
    const RigidTransform motion = bounded_perturbation(rng, 10.0, 10.0, center);
    // moving(x) = phantom(motion(x)), so fixed world maps to moving world by the inverse.
    const Volume moving = head_volume(64, motion);
    const RigidTransform expected = invert(motion);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = reg::register_rigid(fixed, moving);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const RigidTransform delta = compose(invert(expected), res.transform);
    const double t_err = (delta.apply(center) - center).cwiseAbs().maxCoeff() / voxel;
    const double r_err = rotation_angle_deg(delta.rotation());
    c.expect(t_err <= 0.25, fmt("run translation error %.3f voxel", t_err));
    c.expect(r_err <= 0.5, fmt("run rotation error %.3f deg", r_err));
    c.expect(secs < 30.0, fmt("run took %.1f s", secs));
    worst_t = std::max(worst_t, t_err);
    worst_r = std::max(worst_r, r_err);
    worst_s = std::max(worst_s, secs);
  }
  return c.done(fmt("10 runs; worst translation %.3f voxel, rotation %.3f deg, time %.1f s", worst_t, worst_r, worst_s));
}

Outcome pipeline_end_to_end() {
  Checker c;
  const Volume atlas = atlas_volume();
  const auto subject = synthetic_subject({t1c, t2w, t2f}, 7, 5.0, 5.0);
  pipeline::PipelineConfig cfg;
  cfg.center_modality = t1c;
  cfg.moving_modalities = {t2w, t2f};
  const pipeline::SubjectResult r = pipeline::run_subject(subject.inputs, atlas, cfg, "acceptance");
  c.expect(r.outputs.size() == 3, "expected three outputs");
  for (const auto& [tag, v] : r.outputs) {
    c.expect(v.dims() == atlas.dims(), tag.str() + " dims differ from the atlas");
    const Mat4 a = v.affine(), b = atlas.affine();
    c.expect(std::memcmp(a.data(), b.data(), sizeof(double) * 16) == 0, tag.str() + " affine is not bit-identical");
  }
  // Pairwise residual: the atlas-space points that two outputs sample for the
  // same output voxel, compared over a cube enclosing the brain.
  const double voxel = atlas.spacing().maxCoeff();
  double worst = 0.0;
  const std::vector<SequenceTag> tags{t1c, t2w, t2f};
  for (std::size_t i = 0; i < tags.size(); ++i)
    for (std::size_t j = i + 1; j < tags.size(); ++j) {
      const RigidTransform ai = compose(invert(subject.truth.at(tags[i])), r.to_native.at(tags[i]));
      const RigidTransform aj = compose(invert(subject.truth.at(tags[j])), r.to_native.at(tags[j]));
      worst = std::max(worst, max_displacement(ai, aj, 20.0) / voxel);
    }
  c.expect(worst < 0.5, fmt("pairwise misalignment %.3f voxel", worst));
  for (const auto& tag : tags) {
    std::size_t resamples = 0;
    for (const auto& s : r.log.steps)
      if (s.step == "resample_output" && std::count(s.outputs.begin(), s.outputs.end(), "atlas:" + tag.str())) {
        ++resamples;
        c.expect(s.inputs == std::vector<std::string>{"native:" + tag.str()}, tag.str() + " resampled from a derived image");
      }
    c.expect(resamples == 1, tag.str() + " interpolated " + std::to_string(resamples) + " times");
  }
  return c.done(fmt("3 modalities; worst pairwise misalignment %.3f voxel; one resample per modality", worst));
}

Outcome panoptic_identity() {
  Checker c;
  std::mt19937 rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const InstanceMap ref = random_instances(rng, {10, 10, 5}, 6);
    const InstanceMap pred = trial % 3 ? perturb(rng, ref) : random_instances(rng, {10, 10, 5}, 6);
    const PanopticReport r = evaluate_panoptic(match_instances(pred, ref), pred, ref);
    if (r.pq && r.rq && r.sq) worst = std::max(worst, std::abs(*r.pq - *r.rq * *r.sq));
    const InstanceMap pp = relabel(pred, rng), rr = relabel(ref, rng);
    const PanopticReport s = evaluate_panoptic(match_instances(pp, rr), pp, rr);
    c.expect(s.tp == r.tp && s.fp == r.fp && s.fn == r.fn, "counts changed under relabeling");
    c.expect(s.rq == r.rq && s.sq == r.sq && s.pq == r.pq, "qualities changed under relabeling");
  }
  c.expect(worst <= 1e-12, fmt("|pq - rq*sq| = %.3g", worst));
  return c.done(fmt("100 pairs; max |pq - rq*sq| = %.3g; relabeling exact", worst));
}

Outcome greedy_is_optimal() {
  Checker c;
  std::mt19937 rng(32);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const InstanceMap ref = random_instances(rng, {10, 10, 4}, 5);
    const InstanceMap pred = trial % 2 ? perturb(rng, ref) : random_instances(rng, {10, 10, 4}, 5);
    const MatchResult m = match_instances(pred, ref);
    const auto iou = iou_matrix(pred, ref);
    std::vector<char> used(ref.n_instances, 0);
    const double best = exhaustive_best(iou, 0.5, 0, used);
    double total = 0.0;
    for (const auto& p : m.pairs) total += p.iou;
    worst = std::max(worst, std::abs(total - best));
    c.expect(std::abs(total - best) <= 1e-12, fmt("greedy total %.6f vs optimum %.6f", total, best));
  }
  return c.done(fmt("200 pairs with up to 5 instances; max gap %.3g", worst));
}

Outcome assd_brute_force() {
  Checker c;
  std::mt19937 rng(22);
  double worst = 0.0;
  int pairs = 0;
  while (pairs < 50) {
    std::uniform_int_distribution<std::size_t> ext(1, 16);
    std::uniform_real_distribution<double> sp(0.4, 3.0);
    const Dims d{ext(rng), ext(rng), ext(rng)};
    const Vec3 spacing(sp(rng), sp(rng), sp(rng));
    Region a{d, spacing, {}}, b{d, spacing, {}};
    std::bernoulli_distribution pa(0.05 + 0.4 * (pairs % 5) / 4.0), pb(0.3);
    for (std::size_t i = 0; i < d[0] * d[1] * d[2]; ++i) {
      a.voxels.push_back(pa(rng));
      b.voxels.push_back(pb(rng));
    }
    if (a.count() == 0 || b.count() == 0) continue;
    ++pairs;
    const double fast = assd(a, b);
    worst = std::max(worst, std::abs(fast - brute_force_assd(a, b)));
    c.expect(fast == assd(b, a), "assd not symmetric");
  }
  c.expect(worst <= 1e-9, fmt("max deviation %.3g", worst));
  return c.done(fmt("50 pairs up to 16^3; max deviation from brute force %.3g; symmetric", worst));
}

Outcome cldice_tube() {
  Checker c;
  const Dims d{40, 21, 21};
  const Region thin = tube(d, 2.0, 8, 31, 0.0);
  const Region thick = tube(d, 2.0, 8, 31, 2.0);
  const auto cl = cl_dice(thin, thick);
  const double dc = dice(thin, thick);
  c.expect(cl.has_value() && *cl == 1.0, "clDice is not 1");
  c.expect(dc < 1.0, "dice is 1");
  return c.done(fmt("clDice %.12f, dice %.4f", cl.value_or(-1.0), dc));
}

Outcome n4_bias() {
  Checker c;
  const Volume v = sinusoidal_bias_phantom(48);
  const Volume mask = sphere_mask(48, 0.45);
  const auto r = intensity::n4_correct(v, mask);
  const double before = coefficient_of_variation(v, mask);
  const double after = coefficient_of_variation(r.corrected, mask);
  c.expect(after <= 0.5 * before, fmt("CV %.4f -> %.4f", before, after));

  std::mt19937 rng(4);
  std::normal_distribution<float> noise(100.0f, 2.0f);
  const Volume flat = volume_from({32, 32, 32}, Mat4::Identity(), [&](auto, auto, auto) { return noise(rng); });
  const Volume flat_mask = sphere_mask(32, 0.45);
  const auto f = intensity::n4_correct(flat, flat_mask);
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i)
    if (flat_mask[i] != 0.0f) worst = std::max(worst, std::abs(double(f.bias.field[i]) - 1.0));
  c.expect(worst <= 0.01, fmt("flat field deviates %.4f", worst));
  return c.done(fmt("masked CV %.4f -> %.4f (%.1f%% reduction)", before, after, 100.0 * (1.0 - after / before)) +
                fmt("; flat field max |f - 1| = %.4f", worst));
}

Outcome quickshear_contract() {
  Checker c;
  std::size_t fixtures = 0;
  auto contract = [&](const Volume& in, const Volume& brain, const anon::DefaceResult& r, const std::string& name) {
    std::size_t brain_changed = 0;
    for (std::size_t i = 0; i < in.size(); ++i)
      if (brain[i] != 0.0f && std::bit_cast<std::uint32_t>(r.volume[i]) != std::bit_cast<std::uint32_t>(in[i])) ++brain_changed;
    c.expect(brain_changed == 0, name + ": " + std::to_string(brain_changed) + " brain voxels modified");
  };
  for (const Vec3& spacing : {Vec3(1, 1, 1), Vec3(1.0, 1.2, 2.0), Vec3(0.8, 0.8, 0.8)}) {
    const FacePhantom p = face_phantom(spacing);
    const std::string name = fmt("face phantom %.1fx%.1fx%.1f", spacing[0], spacing[1], spacing[2]);
    std::vector<char> previous;
    for (double buffer : {0.0, 3.0, 10.0, 25.0}) {
      const auto r = anon::quickshear_deface(p.image, p.brain, buffer);
      ++fixtures;
      contract(p.image, p.brain, r, name);
      if (buffer == anon::kDefaultDefaceBuffer) {
        std::size_t kept = 0;
        for (std::size_t i = 0; i < p.face.size(); ++i) kept += p.face[i] != 0.0f && r.volume[i] != 0.0f;
        c.expect(kept == 0, name + ": face voxels kept");
      }
      const auto z = zeroed_set(p.image, r.volume);
      if (!previous.empty())
        for (std::size_t i = 0; i < z.size(); ++i)
          if (z[i] && !previous[i]) {
            c.expect(false, name + ": larger buffer removed a voxel a smaller one kept");
            break;
          }
      previous = z;
    }
  }
  // A synthetic subject with the brain mask of the pipeline fixture.
  const auto subject = synthetic_subject({t1c}, 3, 5.0, 5.0);
  const Volume& img = subject.inputs.images.at(t1c);
  const Volume brain = phantom_brain_mask(img, subject.truth.at(t1c));
  contract(img, brain, anon::quickshear_deface(img, brain), "pipeline phantom");
  ++fixtures;
  return c.done(std::to_string(fixtures) + " defacing runs; brain untouched, face zeroed, buffer monotone");
}

Outcome nifti_io() {
  Checker c;
  TempDir tmp("accept-io");
  std::mt19937 rng(11);
  std::normal_distribution<float> noise(0.0f, 1000.0f);
  Mat4 affine = Mat4::Identity();
  affine.topLeftCorner<3, 3>() = rotation_zyx(Vec3(0.1, 0.2, -0.3)) * Vec3(0.9, 1.1, 2.0).asDiagonal();
  affine.topRightCorner<3, 1>() = Vec3(-90.5, 12.25, 40.0);
  const Volume v = volume_from({17, 13, 9}, affine, [&](auto, auto, auto) { return noise(rng); });
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    write_nifti(v, tmp / name);
    const Volume back = read_nifti(tmp / name);
    c.expect(bit_equal(v.data(), back.data()), std::string(name) + ": voxel data differs");
    c.expect(back.dims() == v.dims(), std::string(name) + ": dims differ");
  }
  const Volume labels = volume_from({9, 8, 7}, Mat4::Identity(), [&](std::size_t i, std::size_t j, std::size_t) {
    return float((i * 7 + j) % 300);
  }, Intent::labels);
  write_nifti(labels, tmp / "l.nii.gz");
  c.expect(bit_equal(read_nifti(tmp / "l.nii.gz").data(), labels.data()), "label map round trip differs");

  std::size_t pairs = 0;
  for (const char* stem : {"ramp2", "int16_aniso", "lps", "singleton4d", "qform_only"}) {
    const Volume plain = read_nifti(data_dir() / (std::string(stem) + ".nii"));
    const Volume gz = read_nifti(data_dir() / (std::string(stem) + ".nii.gz"));
    c.expect(plain.dims() == gz.dims() && plain.affine() == gz.affine() && bit_equal(plain.data(), gz.data()),
             std::string(stem) + ": plain and gzip differ");
    ++pairs;
  }
  write_nifti(v, tmp / "p.nii");
  write_bytes(tmp / "p.nii.gz", read_maybe_gzipped(tmp / "p.nii"), true);
  c.expect(bit_equal(read_nifti(tmp / "p.nii").data(), read_nifti(tmp / "p.nii.gz").data()), "recompressed file differs");
  return c.done("float32 and label round trips bit-exact; " + std::to_string(pairs + 1) + " plain/gzip pairs identical");
}

// Output files of a batch, with the timing fields of provenance logs zeroed.
std::map<std::string, std::string> batch_outputs(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string content = slurp(e.path());
    if (e.path().filename() == "provenance.json") {
      json j = json::parse(content);
      for (auto& s : j["steps"]) s["wall_time_s"] = 0.0;
      content = j.dump();
    }
    files[fs::relative(e.path(), root).string()] = content;
  }
  return files;
}

Outcome batch_determinism() {
  Checker c;
  TempDir dir("accept-det");
  pipeline::PipelineConfig cfg;
  cfg.center_modality = t1c;
  cfg.moving_modalities = {t2w};
  cfg.registration.pyramid = {2, 1};
  cfg.n4.enabled = true;
  cfg.brain_extraction.source = pipeline::MaskSource::fallback;
  write_nifti(atlas_volume(32, 3.0), dir / "atlas.nii.gz");
  cfg.atlas = (dir / "atlas.nii.gz").string();
  for (unsigned s = 0; s < 4; ++s)
    write_subject(dir / "in", "s-" + std::to_string(s), synthetic_subject({t1c, t2w}, 100 + s, 3.0, 3.0, 40, 2.4));
  const auto subjects = pipeline::discover_subjects(dir / "in", cfg);
  cfg.output_dir = dir / "p1";
  const auto s1 = pipeline::run_batch(subjects, cfg, 1);
  cfg.output_dir = dir / "p4";
  const auto s4 = pipeline::run_batch(subjects, cfg, 4);
  c.expect(s1.failed == 0 && s4.failed == 0, "a subject failed");
  const auto a = batch_outputs(dir / "p1"), b = batch_outputs(dir / "p4");
  c.expect(a.size() == b.size() && !a.empty(), "different file sets");
  std::size_t differing = 0;
  for (const auto& [name, content] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != content) ++differing;
  }
  c.expect(differing == 0, std::to_string(differing) + " files differ");
  return c.done(std::to_string(a.size()) + " files from 4 subjects byte-identical (provenance timings excluded)");
}

struct CliRun {
  int code = -1;
  std::string err;
};

CliRun run_cli(const TempDir& dir, const std::string& args) {
  const fs::path err = dir / "cli-stderr.txt";
  const std::string cmd = std::string("'") + LESIONKIT_CLI + "' " + args + " >/dev/null 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

Outcome headless_tagging() {
  Checker c;
  TempDir dir("accept-sort");
  const fs::path inbox = dir / "inbox";
  fs::create_directories(inbox);
  const auto a = synthetic_subject({t1c, t2w, t2f}, 31, 3.0, 3.0, 40, 2.4);
  const auto b = synthetic_subject({t1c, t2w, t2f}, 32, 3.0, 3.0, 40, 2.4);
  write_nifti(a.inputs.images.at(t1c), inbox / "1.3.12.2.1107.5.nii.gz");
  write_nifti(a.inputs.images.at(t2w), inbox / "series_004.nii");
  write_nifti(a.inputs.images.at(t2f), inbox / "FLAIR AX.nii.gz");
  write_nifti(b.inputs.images.at(t1c), inbox / "post_gd.nii");
  write_nifti(b.inputs.images.at(t2w), inbox / "t2_tse.nii.gz");
  write_nifti(b.inputs.images.at(t2f), inbox / "flair.nii.gz");
  std::ofstream(inbox / "README.txt") << "not an image";

  tagging::Manifest m;
  m = tagging::assign(m, "1.3.12.2.1107.5.nii.gz", "P001", t1c, inbox);
  m = tagging::assign(m, "series_004.nii", "P001", t2w, inbox);
  m = tagging::assign(m, "FLAIR AX.nii.gz", "P001", t2f, inbox);
  m = tagging::assign(m, "post_gd.nii", "P002", t1c, inbox);
  m = tagging::assign(m, "t2_tse.nii.gz", "P002", t2w, inbox);
  m = tagging::assign(m, "flair.nii.gz", "P002", t2f, inbox);
  tagging::save_manifest(m, inbox / "manifest.json");

  const fs::path sorted = dir / "sorted";
  const CliRun apply = run_cli(dir, "sort-apply --manifest '" + (inbox / "manifest.json").string() + "' --out '" +
                                        sorted.string() + "'");
  c.expect(apply.code == 0, "sort-apply exited " + std::to_string(apply.code) + ": " + apply.err);

  pipeline::PipelineConfig cfg;
  cfg.center_modality = t1c;
  cfg.moving_modalities = {t2w, t2f};
  const auto subjects = pipeline::discover_subjects(sorted, cfg);
  std::size_t warnings = 0;
  for (const auto& s : subjects) warnings += s.warnings.size();
  c.expect(subjects.size() == 2, std::to_string(subjects.size()) + " subjects discovered");
  c.expect(warnings == 0, std::to_string(warnings) + " discovery warnings");
  for (const auto& s : subjects) c.expect(s.files.size() == 3, s.id + " is missing modalities");

  // The CLI reports the same discovery through preprocess.
  write_nifti(atlas_volume(32, 3.0), dir / "atlas.nii.gz");
  std::ofstream(dir / "cfg.json") << R"({"center_modality": "t1c", "moving_modalities": ["t2w", "t2f"],
    "atlas": "atlas.nii.gz", "do_second_coregistration": false, "output_dir": "out",
    "registration": {"pyramid": [2, 1]}})";
  const CliRun pre = run_cli(dir, "preprocess --config '" + (dir / "cfg.json").string() + "' --subjects '" + sorted.string() + "'");
  c.expect(pre.code == 0, "preprocess exited " + std::to_string(pre.code));
  c.expect(pre.err.find("warning:") == std::string::npos, "preprocess printed warnings");
  return c.done("6 files for 2 subjects sorted; preprocess discovered " + std::to_string(subjects.size()) +
                " subjects with " + std::to_string(warnings) + " warnings");
}

} // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"registration recovers 10 random perturbations", registration_recovery},
      {"pipeline aligns 3 modalities on the atlas grid", pipeline_end_to_end},
      {"panoptic quality identity and relabeling invariance", panoptic_identity},
      {"greedy matching equals the exhaustive optimum", greedy_is_optimal},
      {"ASSD agrees with brute force and is symmetric", assd_brute_force},
      {"clDice of a tube against its dilation", cldice_tube},
      {"N4 removes a sinusoidal bias and leaves a flat image", n4_bias},
      {"quickshear spares the brain and removes the face", quickshear_contract},
      {"NIfTI round trip and gzip equivalence", nifti_io},
      {"batch output independent of parallelism", batch_determinism},
      {"headless sorting feeds preprocess without warnings", headless_tagging},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%2zu] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
