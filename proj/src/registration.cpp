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

#include "lesionkit/registration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <thread>

#include "lesionkit/error.hpp"
#include "lesionkit/filters.hpp"
#include "lesionkit/resample.hpp"
#include "lesionkit/stats.hpp"

namespace lesionkit::reg {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kChunk = std::size_t{1} << 16;
constexpr double kMinImprovement = 1e-12;

/// Maps intensities to histogram bins after percentile clamping.
struct Binning {
  double lo = 0.0;
  double scale = 0.0; ///< bins / (hi - lo); 0 for a degenerate range
  int bins = 1;

  Binning(const Volume& v, int nbins, double plo, double phi) : bins(nbins) {
    const auto [lo_v, hi_v] = percentile_pair({v.data().begin(), v.data().end()}, plo, phi);
    lo = lo_v;
    scale = hi_v > lo_v ? static_cast<double>(nbins) / (hi_v - lo_v) : 0.0;
  }

  int operator()(double value) const {
    if (scale == 0.0) return 0;
    const double pos = std::floor((value - lo) * scale);
    if (pos <= 0.0) return 0;
    if (pos >= bins - 1) return bins - 1;
    return static_cast<int>(pos);
  }
};

double mi_from_histogram(const std::vector<std::int64_t>& joint, int bins) {
  std::vector<std::int64_t> rows(bins, 0), cols(bins, 0);
  std::int64_t total = 0;
  for (int a = 0; a < bins; ++a)
    for (int b = 0; b < bins; ++b) {
      const std::int64_t c = joint[static_cast<std::size_t>(a) * bins + b];
      rows[a] += c;
      cols[b] += c;
      total += c;
    }
  if (total == 0) return 0.0;
  // A single occupied bin on either side carries no information.
  const auto occupied = [](const std::vector<std::int64_t>& m) { return std::count_if(m.begin(), m.end(), [](std::int64_t c) { return c > 0; }); };
  if (occupied(rows) < 2 || occupied(cols) < 2) return 0.0;
  const double n = static_cast<double>(total);
  const double log_n = std::log(n);
  double mi = 0.0;
  for (int a = 0; a < bins; ++a)
    for (int b = 0; b < bins; ++b) {
      const std::int64_t c = joint[static_cast<std::size_t>(a) * bins + b];
      if (c == 0) continue;
      const double cd = static_cast<double>(c);
      mi += cd / n *
            (std::log(cd) + log_n - std::log(static_cast<double>(rows[a])) -
             std::log(static_cast<double>(cols[b])));
    }
  return std::max(mi, 0.0);
}

/// Fixed-image samples (voxel index plus bin) and the moving image, ready for
/// repeated MI evaluation under different transforms.
class MiMetric {
public:
  MiMetric(const Volume& fixed, const Volume& moving, int bins, double plo, double phi,
           std::size_t max_samples)
      : bins_(bins), moving_(moving), moving_binning_(moving, bins, plo, phi),
        fixed_affine_(fixed.affine()) {
    if (bins < 2) throw InvalidArgument("mutual information needs at least 2 bins");
    const Binning fixed_binning(fixed, bins, plo, phi);
    const std::size_t n = fixed.size();
    const std::size_t stride = max_samples > 0 && n > max_samples ? (n + max_samples - 1) / max_samples : 1;
    const Dims& d = fixed.dims();
    for (std::size_t idx = 0; idx < n; idx += stride) {
      const std::size_t i = idx % d[0];
      const std::size_t j = (idx / d[0]) % d[1];
      const std::size_t k = idx / (d[0] * d[1]);
      positions_.push_back({static_cast<float>(i), static_cast<float>(j), static_cast<float>(k)});
      fixed_bins_.push_back(static_cast<std::uint16_t>(fixed_binning(fixed[idx])));
    }
    required_overlap_ = std::min<std::size_t>(1000, positions_.size());
  }

  /// MI under the transform, or nullopt when the overlap is too small.
  std::optional<double> evaluate(const RigidTransform& fixed_to_moving) const {
    const Mat4 m = moving_.grid().inverse_affine() * fixed_to_moving.matrix() * fixed_affine_;
    const std::size_t n = positions_.size();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    const std::size_t cells = static_cast<std::size_t>(bins_) * bins_;
    std::vector<std::vector<std::int64_t>> partial(chunks, std::vector<std::int64_t>(cells, 0));

    auto run_chunk = [&](std::size_t c) {
      auto& hist = partial[c];
      const float* data = moving_.data().data();
      const Dims& md = moving_.dims();
      const std::size_t end = std::min(n, (c + 1) * kChunk);
      for (std::size_t s = c * kChunk; s < end; ++s) {
        const auto& p = positions_[s];
        const double x = m(0, 0) * p[0] + m(0, 1) * p[1] + m(0, 2) * p[2] + m(0, 3);
        const double y = m(1, 0) * p[0] + m(1, 1) * p[1] + m(1, 2) * p[2] + m(1, 3);
        const double z = m(2, 0) * p[0] + m(2, 1) * p[1] + m(2, 2) * p[2] + m(2, 3);
        float value;
        if (!detail::sample_linear(data, md, x, y, z, value)) continue;
        ++hist[static_cast<std::size_t>(fixed_bins_[s]) * bins_ + moving_binning_(value)];
      }
    };

    const std::size_t workers =
        std::min<std::size_t>(chunks, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
      for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
        });
      for (auto& t : pool) t.join();
    }

    // Merge in chunk order so the result does not depend on scheduling.
    std::vector<std::int64_t> joint(cells, 0);
    std::size_t overlap = 0;
    for (const auto& hist : partial)
      for (std::size_t i = 0; i < cells; ++i) {
        joint[i] += hist[i];
        overlap += static_cast<std::size_t>(hist[i]);
      }
    if (overlap < required_overlap_) return std::nullopt;
    return mi_from_histogram(joint, bins_);
  }

private:
  int bins_;
  const Volume& moving_;
  Binning moving_binning_;
  Mat4 fixed_affine_;
  std::vector<std::array<float, 3>> positions_;
  std::vector<std::uint16_t> fixed_bins_;
  std::size_t required_overlap_ = 0;
};

using Params = std::array<double, 6>; // angles (rad), translation (mm)

RigidTransform to_transform(const Params& p, const Vec3& center) {
  return {Vec3(p[0], p[1], p[2]), Vec3(p[3], p[4], p[5]), center};
}

double score(const MiMetric& metric, const Params& p, const Vec3& center) {
  const auto v = metric.evaluate(to_transform(p, center));
  return v ? *v : -std::numeric_limits<double>::infinity();
}

/// Coordinate search with golden-section refinement along each parameter.
LevelRecord optimize_level(const MiMetric& metric, Params& params, double& value, const Vec3& center,
                           const RegistrationOptions& opts) {
  LevelRecord record;
  record.mi_before = value;
  std::array<double, 6> step{};
  std::array<double, 6> min_step{};
  for (int d = 0; d < 3; ++d) {
    step[d] = opts.rotation_step_deg * kDeg;
    min_step[d] = opts.min_rotation_step_deg * kDeg;
    step[d + 3] = opts.translation_step_mm;
    min_step[d + 3] = opts.min_translation_step_mm;
  }
  auto all_small = [&] {
    for (int d = 0; d < 6; ++d)
      if (step[d] >= min_step[d]) return false;
    return true;
  };

  constexpr double kGolden = 0.6180339887498949;
  record.converged = false;
  while (record.iterations < opts.max_iterations) {
    if (all_small()) {
      record.converged = true;
      break;
    }
    ++record.iterations;
    for (int d = 0; d < 6; ++d) {
      if (step[d] < min_step[d]) continue;
      const double x0 = params[d];
      auto at = [&](double x) {
        Params trial = params;
        trial[d] = x;
        return score(metric, trial, center);
      };
      const double f_plus = at(x0 + step[d]);
      const double f_minus = at(x0 - step[d]);
      if (std::max(f_plus, f_minus) <= value + kMinImprovement) {
        step[d] *= 0.5;
        continue;
      }
      const double dir = f_plus >= f_minus ? 1.0 : -1.0;
      double best_x = x0 + dir * step[d];
      double best_f = std::max(f_plus, f_minus);

      // Golden-section search over [x0, x0 + 2*step] in the improving direction.
      double a = x0;
      double b = x0 + 2.0 * dir * step[d];
      double c = b - kGolden * (b - a);
      double e = a + kGolden * (b - a);
      double fc = at(c);
      double fe = at(e);
      while (std::abs(b - a) > 0.125 * step[d]) {
        if (fc > best_f) { best_f = fc; best_x = c; }
        if (fe > best_f) { best_f = fe; best_x = e; }
        if (fc >= fe) {
          b = e;
          e = c;
          fe = fc;
          c = b - kGolden * (b - a);
          fc = at(c);
        } else {
          a = c;
          c = e;
          fc = fe;
          e = a + kGolden * (b - a);
          fe = at(e);
        }
      }
      if (fc > best_f) { best_f = fc; best_x = c; }
      if (fe > best_f) { best_f = fe; best_x = e; }

      if (best_f > value + kMinImprovement) {
        params[d] = best_x;
        value = best_f;
        record.accepted.push_back(value);
      } else {
        step[d] *= 0.5;
      }
    }
  }
  if (!record.converged && all_small()) record.converged = true;
  record.mi_after = value;
  return record;
}

} // namespace

double mutual_information(const Volume& fixed, const Volume& moving, const RigidTransform& fixed_to_moving,
                          int bins) {
  const MiMetric metric(fixed, moving, bins, 0.5, 99.5, 0);
  const auto mi = metric.evaluate(fixed_to_moving);
  if (!mi) throw DegenerateInput("mutual_information: volumes do not overlap sufficiently");
  return *mi;
}

Vec3 intensity_centroid(const Volume& v) {
  const Dims& d = v.dims();
  double wsum = 0.0;
  Vec3 acc = Vec3::Zero();
  std::size_t idx = 0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i, ++idx) {
        const double w = std::max(0.0f, v[idx]);
        if (w == 0.0) continue;
        wsum += w;
        acc += w * Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
      }
  const Vec3 index = wsum > 0.0 ? Vec3(acc / wsum)
                                : Vec3(0.5 * static_cast<double>(d[0] - 1), 0.5 * static_cast<double>(d[1] - 1),
                                       0.5 * static_cast<double>(d[2] - 1));
  return v.voxel_to_world(index);
}

RegistrationResult register_rigid(const Volume& fixed, const Volume& moving, const RegistrationOptions& opts) {
  if (opts.pyramid.empty()) throw InvalidArgument("registration pyramid must have at least one level");
  if (opts.bins < 2) throw InvalidArgument("registration needs at least 2 histogram bins");

  const Vec3 fixed_center = intensity_centroid(fixed);
  const Vec3 moving_center = intensity_centroid(moving);
  Params params{0, 0, 0, 0, 0, 0};
  if (opts.initial) {
    const RigidTransform t = RigidTransform::from_matrix(opts.initial->matrix(), fixed_center, 1e-6);
    for (int a = 0; a < 3; ++a) {
      params[a] = t.angles[a];
      params[3 + a] = t.translation[a];
    }
  } else {
    for (int a = 0; a < 3; ++a) params[3 + a] = moving_center[a] - fixed_center[a];
  }
  const Params initial = params;

  const MiMetric full(fixed, moving, opts.bins, opts.clamp_low_percentile, opts.clamp_high_percentile,
                      opts.max_samples);
  const auto initial_mi = full.evaluate(to_transform(initial, fixed_center));
  if (!initial_mi) throw DegenerateInput("register_rigid: insufficient overlap at initialization");

  RegistrationResult result;
  result.initial_mi = *initial_mi;

  for (std::size_t level = 0; level < opts.pyramid.size(); ++level) {
    const std::size_t factor = opts.pyramid[level];
    const bool finest = factor == 1;
    // The two coarsest levels use every voxel; finer levels honour the cap.
    const std::size_t cap = level < 2 && !finest ? 0 : opts.max_samples;
    const Volume fixed_level = downsample(fixed, factor);
    const Volume moving_level = downsample(moving, factor);
    const MiMetric metric(fixed_level, moving_level, opts.bins, opts.clamp_low_percentile,
                          opts.clamp_high_percentile, cap);

    double value = score(metric, params, fixed_center);
    if (level + 1 == opts.pyramid.size()) {
      // Never finish worse than the initialization.
      const double from_init = score(metric, initial, fixed_center);
      if (from_init > value) {
        value = from_init;
        params = initial;
      }
    }
    if (!std::isfinite(value)) {
      params = initial;
      value = score(metric, params, fixed_center);
      if (!std::isfinite(value)) continue; // too coarse to overlap; finer levels take over
    }
    LevelRecord record = optimize_level(metric, params, value, fixed_center, opts);
    record.factor = factor;
    result.converged = result.converged && record.converged;
    result.levels.push_back(std::move(record));
  }

  result.transform = to_transform(params, fixed_center);
  const auto final_mi = full.evaluate(result.transform);
  result.final_mi = final_mi ? *final_mi : 0.0;
  if (result.final_mi < result.initial_mi) {
    result.transform = to_transform(initial, fixed_center);
    result.final_mi = result.initial_mi;
  }
  return result;
}

} // namespace lesionkit::reg
