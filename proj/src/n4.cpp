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

#include "lesionkit/n4.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "lesionkit/error.hpp"

namespace lesionkit::intensity {

namespace {

struct AxisWeights {
  std::vector<std::size_t> span;
  std::vector<std::array<double, 4>> w;
};

std::array<double, 4> cubic_basis(double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double s = 1.0 - t;
  return {s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
          t3 / 6.0};
}

AxisWeights axis_weights(std::size_t extent, std::size_t spans) {
  AxisWeights out;
  out.span.resize(extent);
  out.w.resize(extent);
  for (std::size_t i = 0; i < extent; ++i) {
    const double u =
        extent > 1 ? static_cast<double>(i) * static_cast<double>(spans) / static_cast<double>(extent - 1) : 0.0;
    const std::size_t s = std::min(static_cast<std::size_t>(std::floor(u)), spans - 1);
    out.span[i] = s;
    out.w[i] = cubic_basis(u - static_cast<double>(s));
  }
  return out;
}

/// One-dimensional subdivision of a uniform cubic B-spline with n - 3 spans.
std::vector<double> refine_line(const std::vector<double>& c) {
  const std::size_t spans = c.size() - 3;
  std::vector<double> d(2 * spans + 3);
  for (std::size_t i = 0; i <= spans + 1; ++i) d[2 * i] = 0.5 * (c[i] + c[i + 1]);
  for (std::size_t i = 1; i <= spans + 1; ++i) d[2 * i - 1] = (c[i - 1] + 6.0 * c[i] + c[i + 1]) / 8.0;
  return d;
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

using Complex = std::complex<double>;

/// In-place DFT. Inverse transforms are scaled by 1/N.
void dft(std::vector<Complex>& data, bool inverse) {
  const int n = static_cast<int>(data.size());
  std::vector<Complex> out(data.size());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_1d(n, reinterpret_cast<fftw_complex*>(data.data()),
                            reinterpret_cast<fftw_complex*>(out.data()), inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                            FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  if (inverse)
    for (auto& x : out) x /= static_cast<double>(n);
  data.swap(out);
}

/// Maps each log intensity to its expected value under the deconvolved
/// (sharpened) intensity distribution.
std::vector<double> sharpen(const std::vector<double>& logs, const N4Options& opts) {
  const auto [min_it, max_it] = std::minmax_element(logs.begin(), logs.end());
  const double bin_min = *min_it;
  const double bin_max = *max_it;
  const int nbins = opts.histogram_bins;
  if (!(bin_max - bin_min > 1e-12)) return logs;
  const double slope = (bin_max - bin_min) / (nbins - 1);

  std::vector<double> hist(nbins, 0.0);
  for (double x : logs) {
    const double c = (x - bin_min) / slope;
    const int idx = std::min(nbins - 1, static_cast<int>(std::floor(c)));
    const double off = c - idx;
    hist[idx] += 1.0 - off;
    if (idx + 1 < nbins) hist[idx + 1] += off;
  }

  const int exponent = static_cast<int>(std::ceil(std::log2(static_cast<double>(nbins)))) + 1;
  const int padded = 1 << exponent;
  const int offset = static_cast<int>(std::floor(0.5 * (padded - nbins)));

  std::vector<Complex> vf(padded, 0.0);
  for (int n = 0; n < nbins; ++n) vf[n + offset] = hist[n];
  dft(vf, false);

  // Zero-mean Gaussian with the requested FWHM, in bin units.
  const double scaled_fwhm = opts.fwhm / slope;
  const double exp_factor = 4.0 * std::log(2.0) / (scaled_fwhm * scaled_fwhm);
  const double scale_factor = 2.0 * std::sqrt(std::log(2.0) / std::numbers::pi) / scaled_fwhm;
  std::vector<Complex> ff(padded, 0.0);
  ff[0] = scale_factor;
  const int half = padded / 2;
  for (int n = 1; n <= half; ++n) {
    const double g = scale_factor * std::exp(-static_cast<double>(n) * n * exp_factor);
    ff[n] = g;
    ff[padded - n] = g;
  }
  if (padded % 2 == 0)
    ff[half] = scale_factor * std::exp(-0.25 * static_cast<double>(padded) * padded * exp_factor);
  dft(ff, false);

  // Wiener deconvolution of the histogram.
  std::vector<Complex> uf(padded);
  for (int n = 0; n < padded; ++n) {
    const Complex g = std::conj(ff[n]) / (std::conj(ff[n]) * ff[n] + opts.wiener_noise);
    uf[n] = vf[n] * g;
  }
  dft(uf, true);
  std::vector<double> u(padded);
  for (int n = 0; n < padded; ++n) u[n] = std::max(uf[n].real(), 0.0);

  // E[u | v] = (u * x) conv f / (u conv f).
  std::vector<Complex> num(padded), den(padded);
  for (int n = 0; n < padded; ++n) {
    num[n] = (bin_min + (n - offset) * slope) * u[n];
    den[n] = u[n];
  }
  dft(num, false);
  dft(den, false);
  for (int n = 0; n < padded; ++n) {
    num[n] *= ff[n];
    den[n] *= ff[n];
  }
  dft(num, true);
  dft(den, true);

  std::vector<double> expected(nbins);
  for (int n = 0; n < nbins; ++n) {
    const double d = den[n + offset].real();
    expected[n] = d != 0.0 ? num[n + offset].real() / d : 0.0;
  }

  std::vector<double> out(logs.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const double c = (logs[i] - bin_min) / slope;
    const int idx = std::min(nbins - 1, static_cast<int>(std::floor(c)));
    if (idx < nbins - 1)
      out[i] = expected[idx] + (expected[idx + 1] - expected[idx]) * (c - idx);
    else
      out[i] = expected[nbins - 1];
  }
  return out;
}

/// Coefficient of variation of exp(a - b) over the sample set (sample std).
double field_change(const std::vector<double>& a, const std::vector<double>& b,
                    const std::vector<std::size_t>& samples) {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (std::size_t idx : samples) {
    const double x = std::exp(a[idx] - b[idx]);
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  if (n < 2) return 0.0;
  return std::sqrt(m2 / static_cast<double>(n - 1)) / mean;
}

} // namespace

BSplineLattice::BSplineLattice(std::array<std::size_t, 3> spans) : spans_(spans) {
  for (std::size_t s : spans_)
    if (s == 0) throw InvalidArgument("B-spline lattice needs at least one span per axis");
  const auto cp = control_points();
  coeffs_.assign(cp[0] * cp[1] * cp[2], 0.0);
}

BSplineLattice BSplineLattice::fit(const Dims& dims, std::array<std::size_t, 3> spans,
                                   const std::vector<double>& values, const std::vector<char>& use) {
  BSplineLattice lattice(spans);
  const auto cp = lattice.control_points();
  const AxisWeights ax = axis_weights(dims[0], spans[0]);
  const AxisWeights ay = axis_weights(dims[1], spans[1]);
  const AxisWeights az = axis_weights(dims[2], spans[2]);
  std::vector<double> num(lattice.coeffs_.size(), 0.0);
  std::vector<double> den(lattice.coeffs_.size(), 0.0);

  std::size_t idx = 0;
  for (std::size_t k = 0; k < dims[2]; ++k) {
    const auto& wz = az.w[k];
    for (std::size_t j = 0; j < dims[1]; ++j) {
      const auto& wy = ay.w[j];
      for (std::size_t i = 0; i < dims[0]; ++i, ++idx) {
        if (!use[idx]) continue;
        const auto& wx = ax.w[i];
        double sx = 0, sy = 0, sz = 0;
        for (int a = 0; a < 4; ++a) {
          sx += wx[a] * wx[a];
          sy += wy[a] * wy[a];
          sz += wz[a] * wz[a];
        }
        const double r = values[idx] / (sx * sy * sz);
        for (int c = 0; c < 4; ++c) {
          for (int b = 0; b < 4; ++b) {
            const double wyz = wy[b] * wz[c];
            const std::size_t base = ax.span[i] + cp[0] * (ay.span[j] + b + cp[1] * (az.span[k] + c));
            for (int a = 0; a < 4; ++a) {
              const double w = wx[a] * wyz;
              const double w2 = w * w;
              num[base + a] += w2 * w * r;
              den[base + a] += w2;
            }
          }
        }
      }
    }
  }
  for (std::size_t c = 0; c < num.size(); ++c) lattice.coeffs_[c] = den[c] > 0.0 ? num[c] / den[c] : 0.0;
  return lattice;
}

std::vector<double> BSplineLattice::evaluate(const Dims& dims) const {
  const auto cp = control_points();
  const AxisWeights ax = axis_weights(dims[0], spans_[0]);
  const AxisWeights ay = axis_weights(dims[1], spans_[1]);
  const AxisWeights az = axis_weights(dims[2], spans_[2]);

  // Contract one axis at a time: x, then y, then z.
  std::vector<double> t1(dims[0] * cp[1] * cp[2], 0.0);
  for (std::size_t cz = 0; cz < cp[2]; ++cz)
    for (std::size_t cy = 0; cy < cp[1]; ++cy)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        double acc = 0.0;
        for (int a = 0; a < 4; ++a) acc += ax.w[i][a] * coeffs_[ax.span[i] + a + cp[0] * (cy + cp[1] * cz)];
        t1[i + dims[0] * (cy + cp[1] * cz)] = acc;
      }
  std::vector<double> t2(dims[0] * dims[1] * cp[2], 0.0);
  for (std::size_t cz = 0; cz < cp[2]; ++cz)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        double acc = 0.0;
        for (int b = 0; b < 4; ++b) acc += ay.w[j][b] * t1[i + dims[0] * (ay.span[j] + b + cp[1] * cz)];
        t2[i + dims[0] * (j + dims[1] * cz)] = acc;
      }
  std::vector<double> out(dims[0] * dims[1] * dims[2], 0.0);
  const std::size_t plane = dims[0] * dims[1];
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (int c = 0; c < 4; ++c) acc += az.w[k][c] * t2[p + plane * (az.span[k] + c)];
      out[p + plane * k] = acc;
    }
  return out;
}

BSplineLattice BSplineLattice::refined() const {
  std::array<std::size_t, 3> cp = control_points();
  std::vector<double> data = coeffs_;
  std::array<std::size_t, 3> spans = spans_;
  for (int axis = 0; axis < 3; ++axis) {
    std::array<std::size_t, 3> ncp = cp;
    ncp[axis] = 2 * spans[axis] + 3;
    std::vector<double> next(ncp[0] * ncp[1] * ncp[2]);
    const std::array<std::size_t, 3> stride{1, cp[0], cp[0] * cp[1]};
    const std::array<std::size_t, 3> nstride{1, ncp[0], ncp[0] * ncp[1]};
    // Iterate over every line along `axis`.
    std::array<std::size_t, 3> pos{0, 0, 0};
    const int u = (axis + 1) % 3;
    const int w = (axis + 2) % 3;
    std::vector<double> line(cp[axis]);
    for (pos[w] = 0; pos[w] < cp[w]; ++pos[w])
      for (pos[u] = 0; pos[u] < cp[u]; ++pos[u]) {
        std::size_t base = pos[u] * stride[u] + pos[w] * stride[w];
        for (std::size_t t = 0; t < cp[axis]; ++t) line[t] = data[base + t * stride[axis]];
        const std::vector<double> refined_line = refine_line(line);
        std::size_t nbase = pos[u] * nstride[u] + pos[w] * nstride[w];
        for (std::size_t t = 0; t < refined_line.size(); ++t) next[nbase + t * nstride[axis]] = refined_line[t];
      }
    data.swap(next);
    cp = ncp;
    spans[axis] *= 2;
  }
  BSplineLattice out;
  out.spans_ = spans;
  out.coeffs_ = std::move(data);
  return out;
}

void BSplineLattice::add(const BSplineLattice& other) {
  if (other.spans_ != spans_) throw InvalidArgument("cannot add B-spline lattices of different resolution");
  for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += other.coeffs_[i];
}

void BSplineLattice::add_constant(double c) {
  for (double& x : coeffs_) x += c;
}

N4Result n4_correct(const Volume& v, const Volume& mask, const N4Options& opts) {
  require_same_dims(v, mask, "n4_correct");
  if (opts.fitting_levels < 1 || opts.initial_spans < 1 || opts.histogram_bins < 2)
    throw InvalidArgument("n4_correct: invalid options");
  const Dims& dims = v.dims();
  const std::size_t n = v.size();

  std::vector<char> use(n, 0);
  std::vector<std::size_t> samples;
  bool any_mask = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0f) continue;
    any_mask = true;
    if (v[i] > 0.0f) {
      use[i] = 1;
      samples.push_back(i);
    }
  }
  if (!any_mask) throw DegenerateInput("n4_correct: mask is empty");
  if (samples.empty()) throw DegenerateInput("n4_correct: no positive intensities inside the mask");

  std::array<std::size_t, 3> spans{opts.initial_spans, opts.initial_spans, opts.initial_spans};
  const Vec3 spacing = v.spacing();
  auto control_spacing = [&](const std::array<std::size_t, 3>& s) {
    Vec3 out;
    for (int a = 0; a < 3; ++a)
      out[a] = spacing[a] * static_cast<double>(std::max<std::size_t>(dims[a], 2) - 1) / static_cast<double>(s[a]);
    return out;
  };

  N4Result result{v, BiasField{Volume::zeros(v.grid()), BSplineLattice(spans), Vec3::Zero()}, false, {}, {}};

  const float first = v[samples.front()];
  const bool constant = std::all_of(samples.begin(), samples.end(), [&](std::size_t i) { return v[i] == first; });
  if (constant) {
    std::vector<float> ones(n, 1.0f);
    result.bias.field = v.with_data(std::move(ones), Intent::image);
    result.bias.control_spacing_mm = control_spacing(spans);
    result.no_op = true;
    return result;
  }

  std::vector<double> log_original(n, 0.0);
  for (std::size_t i : samples) log_original[i] = std::log(static_cast<double>(v[i]));

  BSplineLattice total(spans);
  std::vector<double> log_bias(n, 0.0);
  std::vector<double> log_uncorrected = log_original;
  std::vector<double> residual(n, 0.0);
  std::vector<double> logs(samples.size());

  for (int level = 0; level < opts.fitting_levels; ++level) {
    int iterations = 0;
    double change = HUGE_VAL;
    while (iterations < opts.max_iterations && change > opts.convergence_tolerance) {
      ++iterations;
      for (std::size_t s = 0; s < samples.size(); ++s) logs[s] = log_uncorrected[samples[s]];
      const std::vector<double> sharpened = sharpen(logs, opts);
      for (std::size_t s = 0; s < samples.size(); ++s) residual[samples[s]] = logs[s] - sharpened[s];

      total.add(BSplineLattice::fit(dims, spans, residual, use));
      std::vector<double> next = total.evaluate(dims);
      change = field_change(next, log_bias, samples);
      log_bias.swap(next);
      for (std::size_t i : samples) log_uncorrected[i] = log_original[i] - log_bias[i];
    }
    result.iterations_per_level.push_back(iterations);
    result.final_convergence_per_level.push_back(change);
    if (level + 1 < opts.fitting_levels) {
      total = total.refined();
      for (auto& s : spans) s *= 2;
    }
  }

  // Scale the field so that its mean over the estimation voxels is 1.
  double mean_field = 0.0;
  for (std::size_t i : samples) mean_field += std::exp(log_bias[i]);
  mean_field /= static_cast<double>(samples.size());
  const double shift = std::log(mean_field);
  total.add_constant(-shift);

  std::vector<float> field(n), corrected(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = std::exp(log_bias[i] - shift);
    field[i] = static_cast<float>(f);
    const bool excluded = mask[i] != 0.0f && !use[i];
    corrected[i] = excluded ? v[i] : static_cast<float>(v[i] / f);
  }
  result.corrected = v.with_data(std::move(corrected), Intent::image);
  result.bias.field = v.with_data(std::move(field), Intent::image);
  result.bias.log_field_spline = std::move(total);
  result.bias.control_spacing_mm = control_spacing(spans);
  return result;
}

} // namespace lesionkit::intensity
