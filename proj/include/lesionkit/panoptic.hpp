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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lesionkit/labeling.hpp"
#include "lesionkit/volume.hpp"

namespace lesionkit::eval {

inline constexpr std::string_view kReportSchemaVersion = "lesionkit-panoptic-report v1";

/// Fixed CSV column order of write_report.
inline constexpr std::string_view kReportCsvHeader =
    "subject,class,tp,fp,fn,rq,sq,pq,dice,iou,cl_dice,mean_pair_dice,mean_pair_assd_mm";

struct MatchedPair {
  std::uint32_t pred = 0;
  std::uint32_t ref = 0;
  double iou = 0.0;
  bool operator==(const MatchedPair&) const = default;
};

struct MatchResult {
  std::vector<MatchedPair> pairs; ///< descending iou; ties by ref, then pred
  std::vector<std::uint32_t> unmatched_pred;
  std::vector<std::uint32_t> unmatched_ref;
  double threshold = 0.5;
};

enum class MatchMethod { greedy, optimal };

/// Match instances by spatial overlap. Greedy takes pairs in descending IoU
/// order, ties broken by smaller ref label then smaller pred label; optimal
/// maximises the total IoU (Hungarian assignment). Only pairs with
/// iou >= threshold are eligible.
MatchResult match_instances(const InstanceMap& pred, const InstanceMap& ref, double threshold = 0.5,
                            MatchMethod method = MatchMethod::greedy);

struct PairMetrics {
  std::uint32_t pred = 0;
  std::uint32_t ref = 0;
  double dice = 0.0;
  double iou = 0.0;
  std::optional<double> assd_mm;
};

/// Undefined values are std::nullopt.
struct PanopticReport {
  std::string subject;
  int class_label = 1;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::optional<double> rq, sq, pq;
  std::vector<PairMetrics> per_pair;
  std::optional<double> global_dice, global_iou;
  std::optional<double> cl_dice;
};

struct EvaluationOptions {
  bool surface = true;     ///< per-pair ASSD
  bool centerline = false; ///< global clDice
};

PanopticReport evaluate_panoptic(const MatchResult& match, const InstanceMap& pred, const InstanceMap& ref,
                                 const EvaluationOptions& opts = {});

struct SemanticOptions {
  std::optional<int> connectivity; ///< default 26 in 3D, 8 in 2D
  double threshold = 0.5;
  MatchMethod method = MatchMethod::greedy;
  EvaluationOptions evaluation;
  std::string subject;
};

struct MacroAverage {
  std::optional<double> rq, sq, pq; ///< mean over classes where defined
};

struct EvaluationReport {
  std::vector<PanopticReport> classes; ///< ascending class label
  MacroAverage macro;
};

/// Per class present in either map: binarise, extract instances, match and
/// evaluate. Classes are evaluated in parallel.
EvaluationReport evaluate_semantic_pair(const Volume& pred, const Volume& ref, const SemanticOptions& opts = {});

MacroAverage macro_average(const std::vector<PanopticReport>& classes);

enum class ReportFormat { json, csv };

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(std::string_view text);
std::string report_to_csv(const EvaluationReport& report);

void write_report(const EvaluationReport& report, const std::filesystem::path& path, ReportFormat format);
EvaluationReport read_report(const std::filesystem::path& path);

} // namespace lesionkit::eval
