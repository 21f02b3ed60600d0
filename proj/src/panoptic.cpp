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

#include "lesionkit/panoptic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/metrics.hpp"

namespace lesionkit::eval {

namespace {

using Json = nlohmann::json;

struct Candidate {
  std::uint32_t pred, ref;
  double iou;
};

std::vector<Candidate> candidate_pairs(const InstanceMap& pred, const InstanceMap& ref, double threshold) {
  if (pred.dims() != ref.dims()) throw InvalidArgument("match_instances: instance maps have different dimensions");
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> joint;
  for (std::size_t i = 0; i < pred.labels.size(); ++i)
    if (pred.labels[i] != 0 && ref.labels[i] != 0) ++joint[{pred.labels[i], ref.labels[i]}];
  const auto ps = pred.sizes();
  const auto rs = ref.sizes();
  std::vector<Candidate> out;
  for (const auto& [key, inter] : joint) {
    const double iou = static_cast<double>(inter) / static_cast<double>(ps[key.first] + rs[key.second] - inter);
    if (iou >= threshold) out.push_back({key.first, key.second, iou});
  }
  return out;
}

bool pair_order(const MatchedPair& a, const MatchedPair& b) {
  if (a.iou != b.iou) return a.iou > b.iou;
  if (a.ref != b.ref) return a.ref < b.ref;
  return a.pred < b.pred;
}

// Minimum-cost assignment of rows to distinct columns (rows <= cols).
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n == 0 ? 0 : static_cast<int>(cost[0].size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

std::vector<MatchedPair> optimal_pairs(const std::vector<Candidate>& cands, std::uint32_t n_pred, std::uint32_t n_ref) {
  const bool transpose = n_pred > n_ref;
  const std::uint32_t rows = transpose ? n_ref : n_pred;
  const std::uint32_t cols = transpose ? n_pred : n_ref;
  std::vector<std::vector<double>> cost(rows, std::vector<double>(cols, 0.0));
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> lookup;
  for (const auto& c : cands) {
    const std::uint32_t r = transpose ? c.ref : c.pred;
    const std::uint32_t k = transpose ? c.pred : c.ref;
    cost[r - 1][k - 1] = -c.iou;
    lookup[{c.pred, c.ref}] = c.iou;
  }
  std::vector<MatchedPair> out;
  const auto assignment = hungarian(cost);
  for (std::uint32_t r = 0; r < rows; ++r) {
    if (assignment[r] < 0) continue;
    const std::uint32_t a = r + 1, b = static_cast<std::uint32_t>(assignment[r]) + 1;
    const std::uint32_t p = transpose ? b : a, q = transpose ? a : b;
    const auto it = lookup.find({p, q});
    if (it != lookup.end()) out.push_back({p, q, it->second});
  }
  return out;
}

Region binary_of(const InstanceMap& map) {
  Region r{map.dims(), map.spacing(), std::vector<std::uint8_t>(map.labels.size(), 0)};
  for (std::size_t i = 0; i < map.labels.size(); ++i) r.voxels[i] = map.labels[i] != 0;
  return r;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_from(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

} // namespace

MatchResult match_instances(const InstanceMap& pred, const InstanceMap& ref, double threshold, MatchMethod method) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("match threshold must lie in (0, 1]");
  const auto cands = candidate_pairs(pred, ref, threshold);

  MatchResult out;
  out.threshold = threshold;
  if (method == MatchMethod::greedy) {
    std::vector<MatchedPair> order;
    for (const auto& c : cands) order.push_back({c.pred, c.ref, c.iou});
    std::sort(order.begin(), order.end(), pair_order);
    std::vector<char> pred_used(pred.n_instances + 1, 0), ref_used(ref.n_instances + 1, 0);
    for (const auto& p : order) {
      if (pred_used[p.pred] || ref_used[p.ref]) continue;
      pred_used[p.pred] = ref_used[p.ref] = 1;
      out.pairs.push_back(p);
    }
  } else {
    out.pairs = optimal_pairs(cands, pred.n_instances, ref.n_instances);
    std::sort(out.pairs.begin(), out.pairs.end(), pair_order);
  }

  std::vector<char> pred_used(pred.n_instances + 1, 0), ref_used(ref.n_instances + 1, 0);
  for (const auto& p : out.pairs) pred_used[p.pred] = ref_used[p.ref] = 1;
  for (std::uint32_t l = 1; l <= pred.n_instances; ++l)
    if (!pred_used[l]) out.unmatched_pred.push_back(l);
  for (std::uint32_t l = 1; l <= ref.n_instances; ++l)
    if (!ref_used[l]) out.unmatched_ref.push_back(l);
  return out;
}

PanopticReport evaluate_panoptic(const MatchResult& match, const InstanceMap& pred, const InstanceMap& ref,
                                 const EvaluationOptions& opts) {
  if (pred.dims() != ref.dims()) throw InvalidArgument("evaluate_panoptic: instance maps have different dimensions");
  PanopticReport r;
  r.tp = match.pairs.size();
  r.fp = match.unmatched_pred.size();
  r.fn = match.unmatched_ref.size();
  if (r.tp + r.fp + r.fn > 0) {
    r.rq = static_cast<double>(r.tp) / (static_cast<double>(r.tp) + 0.5 * static_cast<double>(r.fp) +
                                        0.5 * static_cast<double>(r.fn));
    double sum = 0.0;
    for (const auto& p : match.pairs) sum += p.iou;
    r.sq = r.tp > 0 ? sum / static_cast<double>(r.tp) : 0.0;
    r.pq = *r.rq * *r.sq;
    if (r.tp == 0) r.sq.reset();
  }

  for (const auto& p : match.pairs) {
    PairMetrics m{p.pred, p.ref, 0.0, p.iou, std::nullopt};
    m.dice = 2.0 * p.iou / (1.0 + p.iou);
    if (opts.surface) m.assd_mm = assd(Region::from_label(pred, p.pred), Region::from_label(ref, p.ref));
    r.per_pair.push_back(m);
  }

  const Region bp = binary_of(pred);
  const Region br = binary_of(ref);
  const std::size_t np = bp.count(), nr = br.count();
  if (np + nr > 0) {
    r.global_dice = dice(bp, br);
    r.global_iou = iou(bp, br);
  }
  if (opts.centerline && np > 0 && nr > 0) r.cl_dice = cl_dice(bp, br);
  return r;
}

MacroAverage macro_average(const std::vector<PanopticReport>& classes) {
  auto mean_of = [&](auto field) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : classes)
      if (const auto& v = c.*field; v) {
        sum += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  return {mean_of(&PanopticReport::rq), mean_of(&PanopticReport::sq), mean_of(&PanopticReport::pq)};
}

EvaluationReport evaluate_semantic_pair(const Volume& pred, const Volume& ref, const SemanticOptions& opts) {
  require_same_dims(pred, ref, "evaluate_semantic_pair");
  std::set<int> classes;
  for (const Volume* v : {&pred, &ref})
    for (float x : v->data()) {
      if (x < 0.0f || x != std::floor(x)) throw InvalidArgument("segmentation maps must hold non-negative integer labels");
      if (x != 0.0f) classes.insert(static_cast<int>(x));
    }

  auto evaluate_class = [&](int cls) {
    auto binarize = [cls](const Volume& v) {
      std::vector<float> m(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) m[i] = static_cast<int>(v[i]) == cls ? 1.0f : 0.0f;
      return v.with_data(std::move(m), Intent::mask);
    };
    const InstanceMap pi = connected_components(binarize(pred), opts.connectivity);
    const InstanceMap ri = connected_components(binarize(ref), opts.connectivity);
    PanopticReport r = evaluate_panoptic(match_instances(pi, ri, opts.threshold, opts.method), pi, ri, opts.evaluation);
    r.subject = opts.subject;
    r.class_label = cls;
    return r;
  };

  EvaluationReport out;
  const std::vector<int> list(classes.begin(), classes.end());
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers == 1 || list.size() <= 1) {
    for (int c : list) out.classes.push_back(evaluate_class(c));
  } else {
    std::vector<std::future<PanopticReport>> jobs;
    for (int c : list) jobs.push_back(std::async(std::launch::async, evaluate_class, c));
    for (auto& j : jobs) out.classes.push_back(j.get());
  }
  out.macro = macro_average(out.classes);
  return out;
}

std::string report_to_json(const EvaluationReport& report) {
  Json classes = Json::array();
  for (const auto& c : report.classes) {
    Json pairs = Json::array();
    for (const auto& p : c.per_pair)
      pairs.push_back({{"pred", p.pred}, {"ref", p.ref}, {"dice", p.dice}, {"iou", p.iou}, {"assd_mm", optional_json(p.assd_mm)}});
    classes.push_back({{"subject", c.subject},
                       {"class", c.class_label},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"rq", optional_json(c.rq)},
                       {"sq", optional_json(c.sq)},
                       {"pq", optional_json(c.pq)},
                       {"dice", optional_json(c.global_dice)},
                       {"iou", optional_json(c.global_iou)},
                       {"cl_dice", optional_json(c.cl_dice)},
                       {"pairs", pairs}});
  }
  const Json doc{{"schema_version", kReportSchemaVersion},
                 {"classes", classes},
                 {"macro", {{"rq", optional_json(report.macro.rq)}, {"sq", optional_json(report.macro.sq)}, {"pq", optional_json(report.macro.pq)}}}};
  return doc.dump(2) + "\n";
}

EvaluationReport report_from_json(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<std::string>() != kReportSchemaVersion)
      throw FormatError("unsupported report schema '" + doc.at("schema_version").get<std::string>() + "'");
    EvaluationReport out;
    for (const auto& c : doc.at("classes")) {
      PanopticReport r;
      r.subject = c.at("subject").get<std::string>();
      r.class_label = c.at("class").get<int>();
      r.tp = c.at("tp").get<std::size_t>();
      r.fp = c.at("fp").get<std::size_t>();
      r.fn = c.at("fn").get<std::size_t>();
      r.rq = optional_from(c, "rq");
      r.sq = optional_from(c, "sq");
      r.pq = optional_from(c, "pq");
      r.global_dice = optional_from(c, "dice");
      r.global_iou = optional_from(c, "iou");
      r.cl_dice = optional_from(c, "cl_dice");
      for (const auto& p : c.at("pairs"))
        r.per_pair.push_back({p.at("pred").get<std::uint32_t>(), p.at("ref").get<std::uint32_t>(),
                              p.at("dice").get<double>(), p.at("iou").get<double>(), optional_from(p, "assd_mm")});
      out.classes.push_back(std::move(r));
    }
    const Json& m = doc.at("macro");
    out.macro = {optional_from(m, "rq"), optional_from(m, "sq"), optional_from(m, "pq")};
    return out;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_csv(const EvaluationReport& report) {
  std::ostringstream os;
  os << kReportCsvHeader << "\n";
  for (const auto& c : report.classes) {
    std::optional<double> mean_dice, mean_assd;
    if (!c.per_pair.empty()) {
      double sd = 0.0, sa = 0.0;
      bool all_assd = true;
      for (const auto& p : c.per_pair) {
        sd += p.dice;
        if (p.assd_mm)
          sa += *p.assd_mm;
        else
          all_assd = false;
      }
      const auto n = static_cast<double>(c.per_pair.size());
      mean_dice = sd / n;
      if (all_assd) mean_assd = sa / n;
    }
    os << csv_escape(c.subject) << ',' << c.class_label << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
       << csv_cell(c.rq) << ',' << csv_cell(c.sq) << ',' << csv_cell(c.pq) << ',' << csv_cell(c.global_dice) << ','
       << csv_cell(c.global_iou) << ',' << csv_cell(c.cl_dice) << ',' << csv_cell(mean_dice) << ','
       << csv_cell(mean_assd) << "\n";
  }
  return os.str();
}

void write_report(const EvaluationReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << (format == ReportFormat::json ? report_to_json(report) : report_to_csv(report));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

EvaluationReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

} // namespace lesionkit::eval
