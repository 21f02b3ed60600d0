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

// lesionkit command-line entry point.

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "lesionkit/nifti.hpp"
#include "lesionkit/panoptic.hpp"
#include "lesionkit/pipeline.hpp"
#include "lesionkit/resample.hpp"
#include "lesionkit/tagging.hpp"
#include "lesionkit/transform.hpp"
#include "lesionkit/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace lesionkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

// Writes `text` to `target`, or stdout for "-".
void emit(const std::string& target, const std::string& text) {
  if (target == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(target, std::ios::binary | std::ios::trunc);
  out << text << "\n";
  if (!out.flush()) throw IoError("cannot write '" + target + "'");
}

std::string version_text() {
  std::string s = std::string("lesionkit ") + kVersion + "\n";
  s += std::string("  transform file:   ") + kTransformFormatVersion + "\n";
  s += "  panoptic report:  " + std::string(eval::kReportSchemaVersion) + "\n";
  s += std::string("  pipeline config:  ") + pipeline::kConfigSchemaVersion + "\n";
  s += std::string("  provenance log:   ") + pipeline::kProvenanceSchemaVersion + "\n";
  s += std::string("  sort manifest:    ") + tagging::kManifestSchemaVersion + "\n";
  s += std::string("  naming scheme:    ") + tagging::kNamingScheme + "\n";
  return s;
}

struct PreprocessArgs {
  std::string config, subjects, summary;
  std::size_t parallel = 1;
};

int run_preprocess(const PreprocessArgs& a) {
  pipeline::PipelineConfig cfg;
  try {
    cfg = pipeline::load_config(a.config);
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "error: config '" << a.config << "' at " << e.pointer() << ": " << e.what() << "\n";
    return kExitFatal;
  }
  if (cfg.output_dir.empty()) {
    std::cerr << "error: config '" << a.config << "' at /output_dir: required for preprocess\n";
    return kExitFatal;
  }
  const auto subjects = pipeline::discover_subjects(a.subjects, cfg);
  std::size_t warnings = 0;
  for (const auto& s : subjects)
    for (const auto& w : s.warnings) {
      std::cerr << "warning: " << s.id << ": " << w << "\n";
      ++warnings;
    }
  std::cerr << "preprocess: " << subjects.size() << " subject(s), " << warnings << " discovery warning(s), parallelism "
            << a.parallel << "\n";
  const auto summary = pipeline::run_batch(subjects, cfg, a.parallel);
  for (const auto& s : summary.subjects)
    std::cerr << "  " << s.id << ": " << pipeline::to_string(s.status) << (s.message.empty() ? "" : " (" + s.message + ")") << "\n";
  std::cerr << "preprocess: " << summary.ok << " ok, " << summary.flagged << " flagged, " << summary.failed << " failed\n";
  if (!a.summary.empty()) emit(a.summary, summary.to_json());
  return summary.exit_code();
}

struct EvaluateArgs {
  std::string pred, ref, out, format = "json", match = "greedy", subject;
  double threshold = 0.5;
  std::optional<int> connectivity;
  bool surface = false, centerline = false;
};

int run_evaluate(const EvaluateArgs& a) {
  eval::SemanticOptions opts;
  opts.threshold = a.threshold;
  opts.connectivity = a.connectivity;
  opts.method = a.match == "optimal" ? eval::MatchMethod::optimal : eval::MatchMethod::greedy;
  opts.evaluation.surface = a.surface;
  opts.evaluation.centerline = a.centerline;
  opts.subject = a.subject.empty() ? fs::path(a.pred).filename().string() : a.subject;
  const auto report = eval::evaluate_semantic_pair(read_nifti(a.pred), read_nifti(a.ref), opts);
  for (const auto& c : report.classes)
    std::cerr << "class " << c.class_label << ": tp " << c.tp << " fp " << c.fp << " fn " << c.fn
              << " pq " << (c.pq ? std::to_string(*c.pq) : "undefined") << "\n";
  const auto format = a.format == "csv" ? eval::ReportFormat::csv : eval::ReportFormat::json;
  if (a.out == "-")
    std::cout << (format == eval::ReportFormat::csv ? eval::report_to_csv(report) : eval::report_to_json(report)) << "\n";
  else
    eval::write_report(report, a.out, format);
  return kExitOk;
}

int run_sort_scan(const std::string& inbox, const std::string& out) {
  const auto files = tagging::scan_inbox(inbox);
  json arr = json::array();
  std::size_t unclassifiable = 0;
  for (const auto& c : files) {
    json j{{"id", c.id}, {"name", c.name}, {"classifiable", c.classifiable}, {"size_bytes", c.size_bytes}};
    if (c.classifiable) {
      j["dims"] = {c.dims[0], c.dims[1], c.dims[2]};
      j["spacing"] = {c.spacing.x(), c.spacing.y(), c.spacing.z()};
      j["datatype"] = c.datatype;
      j["gzipped"] = c.gzipped;
      j["middle_slice"] = {{"index", c.slice_index}, {"min", c.middle_slice.min}, {"max", c.middle_slice.max}, {"mean", c.middle_slice.mean}};
    } else {
      j["error"] = c.error;
      ++unclassifiable;
    }
    arr.push_back(std::move(j));
  }
  std::cerr << "sort-scan: " << files.size() - unclassifiable << " candidate(s), " << unclassifiable << " unclassifiable\n";
  emit(out, arr.dump(2));
  return kExitOk;
}

int run_sort_apply(const std::string& manifest_path, const std::string& out, const std::string& report_path) {
  tagging::Manifest m = tagging::load_manifest(manifest_path);
  const fs::path base = fs::absolute(manifest_path).parent_path();
  const auto report = tagging::commit(m, out, base);
  tagging::save_manifest(m, manifest_path);
  for (const auto& e : report.entries)
    std::cerr << (e.ok ? "  copied " : "  FAILED ") << e.input_path.string() << " -> " << e.destination.string()
              << (e.ok ? "" : ": " + e.error) << "\n";
  std::cerr << "sort-apply: " << report.ok << " copied, " << report.failed << " failed\n";
  if (!report_path.empty()) emit(report_path, report.to_json());
  return report.failed == 0 ? kExitOk : kExitPartial;
}

int run_sort_serve(const std::string& inbox, const std::string& out, const std::string& bind, const std::string& static_dir) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("--bind expects host:port, got '" + bind + "'");
  const std::string host = bind.substr(0, colon);
  const int port = std::stoi(bind.substr(colon + 1));

  // Handle SIGINT/SIGTERM on a dedicated thread so the server can stop cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  tagging::TaggingService service(inbox, out, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
  const int bound = service.bind(host, port);
  std::cerr << "sort-serve: http://" << host << ":" << bound << "/ (inbox " << inbox << ", output " << out << ")\n";
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  });
  service.run();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
  return kExitOk;
}

struct TransformArgs {
  std::string apply, in, target, out;
  bool nearest = false;
};

int run_transform(const TransformArgs& a) {
  const RigidTransform t = load_transform(a.apply);
  const Volume source = read_nifti(a.in);
  const Volume target = read_nifti(a.target);
  const Volume result =
      resample(source, target.grid(), t, a.nearest ? Interpolation::nearest : Interpolation::trilinear);
  write_nifti(result, a.out);
  std::cerr << "transform: wrote " << a.out << "\n";
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"lesionkit: brain MRI preprocessing, lesion evaluation and sequence sorting"};
  app.require_subcommand(1, 1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_version_flag("--version", version_text());

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "Run the preprocessing pipeline over a subjects directory");
  preprocess->add_option("--config", pre.config, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
  preprocess->add_option("--subjects", pre.subjects, "Directory of {subject}/{subject}-{tag}.nii.gz")
      ->required()
      ->check(CLI::ExistingDirectory);
  preprocess->add_option("--parallel", pre.parallel, "Subjects processed concurrently")->check(CLI::PositiveNumber);
  preprocess->add_option("--summary", pre.summary, "Write the batch summary JSON here ('-' for stdout)");

  EvaluateArgs ev;
  int connectivity = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Instance-wise evaluation of a predicted against a reference label map");
  evaluate->add_option("--pred", ev.pred, "Predicted label map")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--ref", ev.ref, "Reference label map")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--threshold", ev.threshold, "IoU matching threshold in (0, 1]")->check(CLI::Range(0.0, 1.0));
  auto* conn = evaluate->add_option("--connectivity", connectivity, "4 or 8 (2D), 6, 18 or 26 (3D)")
                   ->check(CLI::IsMember({4, 6, 8, 18, 26}));
  evaluate->add_flag("--surface", ev.surface, "Per-pair average symmetric surface distance");
  evaluate->add_flag("--centerline", ev.centerline, "Global clDice");
  evaluate->add_option("--match", ev.match, "Matching: greedy or optimal")->check(CLI::IsMember({"greedy", "optimal"}));
  evaluate->add_option("--format", ev.format, "Report format: json or csv")->check(CLI::IsMember({"json", "csv"}));
  evaluate->add_option("--subject", ev.subject, "Subject name in the report (default: prediction file name)");
  evaluate->add_option("--out", ev.out, "Report path ('-' for stdout)")->required();

  std::string scan_inbox, scan_out = "-";
  auto* sort_scan = app.add_subcommand("sort-scan", "List NIfTI candidates in an inbox");
  sort_scan->add_option("--inbox", scan_inbox, "Inbox directory")->required()->check(CLI::ExistingDirectory);
  sort_scan->add_option("--out", scan_out, "Scan JSON path ('-' for stdout, the default)");

  std::string apply_manifest, apply_out, apply_report;
  auto* sort_apply = app.add_subcommand("sort-apply", "Copy the files of a manifest into the sorted layout");
  sort_apply->add_option("--manifest", apply_manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  sort_apply->add_option("--out", apply_out, "Output root")->required();
  sort_apply->add_option("--report", apply_report, "Write the commit report JSON here ('-' for stdout)");

  std::string serve_inbox, serve_out, serve_bind = "127.0.0.1:8080", serve_static;
  auto* sort_serve = app.add_subcommand("sort-serve", "Serve the sorting API and UI");
  sort_serve->add_option("--inbox", serve_inbox, "Inbox directory")->required()->check(CLI::ExistingDirectory);
  sort_serve->add_option("--out", serve_out, "Output root for commits")->required();
  sort_serve->add_option("--bind", serve_bind, "host:port (default 127.0.0.1:8080)");
  sort_serve->add_option("--static", serve_static, "Directory with UI assets")->check(CLI::ExistingDirectory);

  TransformArgs tr;
  auto* transform = app.add_subcommand("transform", "Resample an image onto a target grid through a rigid transform");
  transform->add_option("--apply", tr.apply, "Transform file (target world to source world)")->required()->check(CLI::ExistingFile);
  transform->add_option("--in", tr.in, "Source image")->required()->check(CLI::ExistingFile);
  transform->add_option("--target", tr.target, "Image defining the output grid")->required()->check(CLI::ExistingFile);
  transform->add_option("--out", tr.out, "Output image")->required();
  auto* nearest = transform->add_flag("--nearest", tr.nearest, "Nearest-neighbour interpolation");
  auto* linear = transform->add_flag("--linear", "Trilinear interpolation (default for images)");
  nearest->excludes(linear);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cerr, std::cerr);
    return code == 0 ? kExitOk : kExitFatal;
  }
  if (conn->count() > 0) ev.connectivity = connectivity;

  try {
    if (*preprocess) return run_preprocess(pre);
    if (*evaluate) return run_evaluate(ev);
    if (*sort_scan) return run_sort_scan(scan_inbox, scan_out);
    if (*sort_apply) return run_sort_apply(apply_manifest, apply_out, apply_report);
    if (*sort_serve) return run_sort_serve(serve_inbox, serve_out, serve_bind, serve_static);
    if (*transform) return run_transform(tr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitFatal;
}
