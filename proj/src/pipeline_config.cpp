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

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lesionkit/nifti.hpp"
#include "lesionkit/pipeline.hpp"

namespace lesionkit::pipeline {

namespace {

using json = nlohmann::json;

std::string escape_pointer_token(const std::string& key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

std::string child(const std::string& ptr, const std::string& key) { return ptr + "/" + escape_pointer_token(key); }
std::string child(const std::string& ptr, std::size_t index) { return ptr + "/" + std::to_string(index); }

// Walks one JSON object, rejecting unknown keys and wrong types.
class ObjectReader {
public:
  ObjectReader(const json& j, std::string ptr, std::set<std::string> allowed) : j_(j), ptr_(std::move(ptr)) {
    if (!j_.is_object()) throw ConfigError(ptr_.empty() ? "/" : ptr_, "expected an object");
    for (const auto& [key, value] : j_.items())
      if (!allowed.count(key)) throw ConfigError(child(ptr_, key), "unknown key");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string ptr(const std::string& key) const { return child(ptr_, key); }
  const json& raw(const std::string& key) const { return j_.at(key); }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError(ptr(key), "required key is missing");
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!raw(key).is_string()) throw ConfigError(ptr(key), "expected a string");
    return raw(key).get<std::string>();
  }
  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!raw(key).is_boolean()) throw ConfigError(ptr(key), "expected true or false");
    return raw(key).get<bool>();
  }
  double number(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    if (!raw(key).is_number()) throw ConfigError(ptr(key), "expected a number");
    return raw(key).get<double>();
  }
  long integer(const std::string& key, long fallback, long min) const {
    if (!has(key)) return fallback;
    if (!raw(key).is_number_integer()) throw ConfigError(ptr(key), "expected an integer");
    const long v = raw(key).get<long>();
    if (v < min) throw ConfigError(ptr(key), "must be at least " + std::to_string(min));
    return v;
  }

private:
  const json& j_;
  std::string ptr_;
};

SequenceTag tag_at(const json& j, const std::string& ptr) {
  if (!j.is_string()) throw ConfigError(ptr, "expected a sequence tag string");
  try {
    return SequenceTag::parse(j.get<std::string>());
  } catch (const InvalidArgument& e) {
    throw ConfigError(ptr, e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void parse_registration(const ObjectReader& top, PipelineConfig& cfg) {
  if (!top.has("registration")) return;
  const ObjectReader r(top.raw("registration"), top.ptr("registration"),
                       {"pyramid", "bins", "max_iterations", "rotation_step_deg", "translation_step_mm",
                        "min_rotation_step_deg", "min_translation_step_mm", "max_samples"});
  auto& o = cfg.registration;
  if (r.has("pyramid")) {
    const json& p = r.raw("pyramid");
    if (!p.is_array() || p.empty()) throw ConfigError(r.ptr("pyramid"), "expected a non-empty array of shrink factors");
    o.pyramid.clear();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!p[i].is_number_integer() || p[i].get<long>() < 1)
        throw ConfigError(child(r.ptr("pyramid"), i), "expected a positive integer");
      o.pyramid.push_back(p[i].get<std::size_t>());
    }
  }
  o.bins = static_cast<int>(r.integer("bins", o.bins, 2));
  o.max_iterations = static_cast<int>(r.integer("max_iterations", o.max_iterations, 1));
  o.rotation_step_deg = r.number("rotation_step_deg", o.rotation_step_deg);
  o.translation_step_mm = r.number("translation_step_mm", o.translation_step_mm);
  o.min_rotation_step_deg = r.number("min_rotation_step_deg", o.min_rotation_step_deg);
  o.min_translation_step_mm = r.number("min_translation_step_mm", o.min_translation_step_mm);
  o.max_samples = static_cast<std::size_t>(r.integer("max_samples", static_cast<long>(o.max_samples), 1000));
  for (const char* key : {"rotation_step_deg", "translation_step_mm", "min_rotation_step_deg", "min_translation_step_mm"})
    if (r.has(key) && !(r.number(key, 0) > 0)) throw ConfigError(r.ptr(key), "must be positive");
}

} // namespace

std::vector<SequenceTag> PipelineConfig::modalities() const {
  std::vector<SequenceTag> all{center_modality};
  all.insert(all.end(), moving_modalities.begin(), moving_modalities.end());
  return all;
}

void PipelineConfig::validate() const {
  std::set<SequenceTag> seen{center_modality};
  for (std::size_t i = 0; i < moving_modalities.size(); ++i) {
    if (moving_modalities[i] == center_modality)
      throw ConfigError(child("/moving_modalities", i), "the center modality cannot also be a moving modality");
    if (!seen.insert(moving_modalities[i]).second)
      throw ConfigError(child("/moving_modalities", i), "duplicate modality '" + moving_modalities[i].str() + "'");
  }
  if (atlas.empty()) throw ConfigError("/atlas", "must not be empty");
  if (brain_extraction.source == MaskSource::external_mask && brain_extraction.mask_path.empty())
    throw ConfigError("/brain_extraction/mask", "external_mask needs a mask file name");
  if (defacing.enabled && brain_extraction.source == MaskSource::none)
    throw ConfigError("/defacing/enabled", "defacing needs a brain mask; set brain_extraction.mode");
  if (!(defacing.buffer_mm >= 0.0)) throw ConfigError("/defacing/buffer_mm", "must be non-negative");
  if (normalization) {
    const auto [lo, hi] = normalization->percentiles;
    if (!(lo >= 0.0 && lo < hi && hi <= 100.0))
      throw ConfigError("/normalization/percentiles", "expected 0 <= low < high <= 100");
  }
  if (registration.pyramid.empty()) throw ConfigError("/registration/pyramid", "must not be empty");
}

PipelineConfig config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("not valid JSON: ") + e.what());
  }
  const ObjectReader top(j, "",
                         {"schema", "center_modality", "moving_modalities", "atlas", "do_second_coregistration",
                          "brain_extraction", "defacing", "n4", "normalization", "registration", "output_dir"});
  PipelineConfig cfg;
  if (top.has("schema") && top.string("schema", "") != kConfigSchemaVersion)
    throw ConfigError("/schema", std::string("expected \"") + kConfigSchemaVersion + "\"");

  top.require("center_modality");
  cfg.center_modality = tag_at(top.raw("center_modality"), "/center_modality");
  if (top.has("moving_modalities")) {
    const json& m = top.raw("moving_modalities");
    if (!m.is_array()) throw ConfigError("/moving_modalities", "expected an array of sequence tags");
    for (std::size_t i = 0; i < m.size(); ++i) cfg.moving_modalities.push_back(tag_at(m[i], child("/moving_modalities", i)));
  }

  cfg.atlas = top.string("atlas", cfg.atlas);
  if (has_nifti_extension(cfg.atlas)) cfg.atlas = resolve(cfg.atlas, base_dir).string();
  cfg.do_second_coregistration = top.boolean("do_second_coregistration", cfg.do_second_coregistration);

  if (top.has("brain_extraction")) {
    const ObjectReader b(top.raw("brain_extraction"), "/brain_extraction", {"mode", "mask", "apply"});
    const std::string mode = b.string("mode", "none");
    if (mode == "none")
      cfg.brain_extraction.source = MaskSource::none;
    else if (mode == "fallback")
      cfg.brain_extraction.source = MaskSource::fallback;
    else if (mode == "external_mask")
      cfg.brain_extraction.source = MaskSource::external_mask;
    else
      throw ConfigError("/brain_extraction/mode", "expected one of none, fallback, external_mask");
    const std::filesystem::path mask = b.string("mask", "");
    // Bare file names are looked up per subject; anything else is a shared file.
    cfg.brain_extraction.mask_path = mask.has_parent_path() ? resolve(mask, base_dir) : mask;
    cfg.brain_extraction.apply = b.boolean("apply", cfg.brain_extraction.apply);
  }

  if (top.has("defacing")) {
    const ObjectReader d(top.raw("defacing"), "/defacing", {"enabled", "buffer_mm"});
    cfg.defacing.enabled = d.boolean("enabled", cfg.defacing.enabled);
    cfg.defacing.buffer_mm = d.number("buffer_mm", cfg.defacing.buffer_mm);
  }

  if (top.has("n4")) {
    const ObjectReader n(top.raw("n4"), "/n4",
                         {"enabled", "fitting_levels", "initial_spans", "max_iterations", "convergence_tolerance",
                          "histogram_bins", "fwhm", "wiener_noise"});
    auto& o = cfg.n4.options;
    cfg.n4.enabled = n.boolean("enabled", cfg.n4.enabled);
    o.fitting_levels = static_cast<int>(n.integer("fitting_levels", o.fitting_levels, 1));
    o.initial_spans = static_cast<std::size_t>(n.integer("initial_spans", static_cast<long>(o.initial_spans), 1));
    o.max_iterations = static_cast<int>(n.integer("max_iterations", o.max_iterations, 1));
    o.convergence_tolerance = n.number("convergence_tolerance", o.convergence_tolerance);
    o.histogram_bins = static_cast<int>(n.integer("histogram_bins", o.histogram_bins, 2));
    o.fwhm = n.number("fwhm", o.fwhm);
    o.wiener_noise = n.number("wiener_noise", o.wiener_noise);
    for (const char* key : {"convergence_tolerance", "fwhm", "wiener_noise"})
      if (n.has(key) && !(n.number(key, 0) > 0)) throw ConfigError(n.ptr(key), "must be positive");
  }

  if (top.has("normalization") && !top.raw("normalization").is_null()) {
    const ObjectReader n(top.raw("normalization"), "/normalization", {"method", "percentiles"});
    NormalizationStep step;
    try {
      step.method = intensity::normalization_method_from_string(n.string("method", "zscore"));
    } catch (const InvalidArgument& e) {
      throw ConfigError("/normalization/method", e.what());
    }
    if (n.has("percentiles")) {
      const json& p = n.raw("percentiles");
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        throw ConfigError("/normalization/percentiles", "expected [low, high]");
      step.percentiles = {p[0].get<double>(), p[1].get<double>()};
    }
    cfg.normalization = step;
  }

  parse_registration(top, cfg);
  cfg.output_dir = resolve(top.string("output_dir", ""), base_dir);
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string config_to_json(const PipelineConfig& cfg) {
  json j;
  j["schema"] = kConfigSchemaVersion;
  j["center_modality"] = cfg.center_modality.str();
  j["moving_modalities"] = json::array();
  for (const auto& t : cfg.moving_modalities) j["moving_modalities"].push_back(t.str());
  j["atlas"] = cfg.atlas;
  j["do_second_coregistration"] = cfg.do_second_coregistration;
  const char* modes[] = {"none", "external_mask", "fallback"};
  j["brain_extraction"] = {{"mode", modes[static_cast<int>(cfg.brain_extraction.source)]},
                           {"mask", cfg.brain_extraction.mask_path.string()},
                           {"apply", cfg.brain_extraction.apply}};
  j["defacing"] = {{"enabled", cfg.defacing.enabled}, {"buffer_mm", cfg.defacing.buffer_mm}};
  const auto& n4 = cfg.n4.options;
  j["n4"] = {{"enabled", cfg.n4.enabled},
             {"fitting_levels", n4.fitting_levels},
             {"initial_spans", n4.initial_spans},
             {"max_iterations", n4.max_iterations},
             {"convergence_tolerance", n4.convergence_tolerance},
             {"histogram_bins", n4.histogram_bins},
             {"fwhm", n4.fwhm},
             {"wiener_noise", n4.wiener_noise}};
  if (cfg.normalization)
    j["normalization"] = {{"method", std::string(intensity::to_string(cfg.normalization->method))},
                          {"percentiles", {cfg.normalization->percentiles.first, cfg.normalization->percentiles.second}}};
  else
    j["normalization"] = nullptr;
  const auto& r = cfg.registration;
  j["registration"] = {{"pyramid", r.pyramid},
                       {"bins", r.bins},
                       {"max_iterations", r.max_iterations},
                       {"rotation_step_deg", r.rotation_step_deg},
                       {"translation_step_mm", r.translation_step_mm},
                       {"min_rotation_step_deg", r.min_rotation_step_deg},
                       {"min_translation_step_mm", r.min_translation_step_mm},
                       {"max_samples", r.max_samples}};
  j["output_dir"] = cfg.output_dir.string();
  return j.dump(2);
}

} // namespace lesionkit::pipeline
