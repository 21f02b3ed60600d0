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

#include "lesionkit/error.hpp"
#include "lesionkit/intensity.hpp"
#include "lesionkit/n4.hpp"
#include "lesionkit/stats.hpp"
#include "oracles.hpp"

using namespace lesionkit;
using namespace lesionkit::intensity;
using namespace testsupport;

namespace {

Volume textured_bias_phantom(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> noise(0.0, 5.0);
  const double x_extent = static_cast<double>(n) - 1.0;
  return volume_from({n, n, n}, Mat4::Identity(), [&](std::size_t i, std::size_t, std::size_t k) {
    const double base = (k > n / 2 ? 120.0 : 80.0) + noise(rng);
    return static_cast<float>(base * (1.0 + 0.3 * std::sin(M_PI * static_cast<double>(i) / x_extent)));
  });
}

double masked_mean(const Volume& v, const Volume& mask) { return mean_std(masked_values(v, &mask)).mean; }

// Between-class variance for every boundary of a 256-bin histogram, by brute force.
double exhaustive_otsu(const std::vector<float>& values) {
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  const double width = (hi - lo) / 256.0;
  double best = -1.0, best_t = 0.0;
  for (int b = 1; b < 256; ++b) {
    // Class membership follows the same bin assignment as the histogram.
    double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (float x : values) {
      const int bin = std::min(255, static_cast<int>((x - lo) / width));
      if (bin < b) {
        n0 += 1;
        s0 += x;
      } else {
        n1 += 1;
        s1 += x;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const double between = n0 * n1 * (s0 / n0 - s1 / n1) * (s0 / n0 - s1 / n1);
    if (between > best) {
      best = between;
      best_t = lo + b * width;
    }
  }
  return best_t;
}

} // namespace

TEST_SUITE("stats") {
  TEST_CASE("percentile interpolates between order statistics") {
    CHECK(percentile({1, 2, 3, 4}, 50) == doctest::Approx(2.5));
    CHECK(percentile({5, 1, 3}, 0) == 1.0);
    CHECK(percentile({5, 1, 3}, 100) == 5.0);
    CHECK(percentile({0, 10}, 25) == doctest::Approx(2.5));
    CHECK_THROWS_AS(percentile({}, 50), Error);
  }

  TEST_CASE("mean and population std") {
    const std::vector<float> v{2, 4, 4, 4, 5, 5, 7, 9};
    const MeanStd ms = mean_std(v);
    CHECK(ms.mean == doctest::Approx(5.0));
    CHECK(ms.std == doctest::Approx(2.0));
  }
}

TEST_SUITE("normalize") {
  TEST_CASE("zscore under a mask and its inverse") {
    std::mt19937 rng(1);
    std::normal_distribution<float> noise(300.0f, 40.0f);
    const Volume v = volume_from({16, 16, 16}, Mat4::Identity(), [&](auto, auto, auto) { return noise(rng); });
    const Volume mask = sphere_mask(16, 0.4);
    NormalizationRecord rec;
    const Volume z = normalize(v, {NormalizationMethod::zscore, mask, {0.5, 99.5}}, &rec);
    const MeanStd ms = mean_std(masked_values(z, &mask));
    CHECK(std::abs(ms.mean) < 1e-6);
    CHECK(std::abs(ms.std - 1.0) < 1e-6);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (mask[i] == 0.0f) {
        CHECK(z[i] == 0.0f);
        continue;
      }
      CHECK(std::abs(z[i] * rec.scale + rec.offset - v[i]) < 1e-6 * std::abs(v[i]) + 1e-6);
    }
  }

  TEST_CASE("minmax") {
    const Volume v(Dims{3, 1, 1}, Mat4::Identity(), {10, 20, 30});
    const Volume m = normalize(v, {NormalizationMethod::minmax, std::nullopt, {0.5, 99.5}});
    CHECK(m[0] == 0.0f);
    CHECK(m[1] == 0.5f);
    CHECK(m[2] == 1.0f);
  }

  TEST_CASE("percentile clamp with a hot voxel") {
    std::vector<float> data(1000);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i % 97) + 0.25f * static_cast<float>(i % 7);
    data[123] = 1e6f;
    const Volume v(Dims{10, 10, 10}, Mat4::Identity(), data);
    const Volume p = normalize(v, {NormalizationMethod::percentile_clamp, std::nullopt, {0.5, 99.5}});
    CHECK(p[123] == 1.0f);
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    auto oracle = [&](double q) {
      const double pos = q / 100.0 * (sorted.size() - 1);
      const auto lo = static_cast<std::size_t>(pos);
      return sorted[lo] + (pos - lo) * (sorted[lo + 1] - sorted[lo]);
    };
    const double lo = oracle(0.5), hi = oracle(99.5);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double expected = (std::clamp<double>(data[i], lo, hi) - lo) / (hi - lo);
      CHECK(p[i] == doctest::Approx(expected).epsilon(1e-6));
      if (data[i] >= hi) CHECK(p[i] == 1.0f);
    }
  }

  TEST_CASE("degenerate inputs") {
    const Volume flat = volume_from({4, 4, 4}, Mat4::Identity(), [](auto, auto, auto) { return 5.0f; });
    CHECK_THROWS_AS(normalize(flat, {NormalizationMethod::zscore, std::nullopt, {0.5, 99.5}}), DegenerateInput);
    CHECK_THROWS_AS(normalize(flat, {NormalizationMethod::minmax, std::nullopt, {0.5, 99.5}}), DegenerateInput);
    const Volume empty = Volume::zeros(flat.grid(), Intent::mask);
    CHECK_THROWS_AS(normalize(flat, {NormalizationMethod::zscore, empty, {0.5, 99.5}}), InvalidArgument);
    CHECK_THROWS_AS(normalization_method_from_string("histogram"), InvalidArgument);
    CHECK(normalization_method_from_string("percentile_clamp") == NormalizationMethod::percentile_clamp);
  }
}

TEST_SUITE("otsu") {
  TEST_CASE("bimodal fixture") {
    std::mt19937 rng(2);
    std::normal_distribution<float> a(10.0f, 2.0f), b(100.0f, 5.0f);
    std::vector<float> data(4096);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = i % 2 ? a(rng) : b(rng);
    const Volume v(Dims{16, 16, 16}, Mat4::Identity(), data);
    const double t = otsu_threshold(v);
    CHECK(t > 10.0);
    CHECK(t < 100.0);
    CHECK(t == doctest::Approx(exhaustive_otsu(data)).epsilon(1e-12));
  }

  TEST_CASE("matches the exhaustive search on random inputs") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::gamma_distribution<float> g(1.0f + trial % 5, 10.0f);
      std::vector<float> data(512);
      for (float& x : data) x = g(rng);
      const Volume v(Dims{8, 8, 8}, Mat4::Identity(), data);
      CHECK(otsu_threshold(v) == doctest::Approx(exhaustive_otsu(data)).epsilon(1e-12));
    }
  }

  TEST_CASE("two values") {
    const Volume v(Dims{4, 1, 1}, Mat4::Identity(), {0, 1, 0, 1});
    const double t = otsu_threshold(v);
    CHECK(t > 0.0);
    CHECK(t <= 1.0);
    CHECK_THROWS_AS(otsu_threshold(Volume(Dims{2, 1, 1}, Mat4::Identity(), {3, 3})), DegenerateInput);
  }
}

TEST_SUITE("n4") {
  TEST_CASE("constant input is a no-op") {
    const Volume v = volume_from({24, 24, 24}, Mat4::Identity(), [](auto, auto, auto) { return 100.0f; });
    const Volume mask = sphere_mask(24, 0.4);
    const N4Result r = n4_correct(v, mask);
    CHECK(r.no_op);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (mask[i] != 0.0f) CHECK(std::abs(r.bias.field[i] - 1.0f) < 0.01f);
  }

  TEST_CASE("flat noisy phantom keeps a near-unit field") {
    std::mt19937 rng(4);
    std::normal_distribution<float> noise(100.0f, 2.0f);
    const Volume v = volume_from({32, 32, 32}, Mat4::Identity(), [&](auto, auto, auto) { return noise(rng); });
    const Volume mask = sphere_mask(32, 0.45);
    const N4Result r = n4_correct(v, mask);
    CHECK_FALSE(r.no_op);
    for (std::size_t i = 0; i < v.size(); ++i)
      if (mask[i] != 0.0f) CHECK(std::abs(r.bias.field[i] - 1.0f) < 0.01f);
  }

  TEST_CASE("sinusoidal bias is removed and brightness kept") {
    const Volume v = sinusoidal_bias_phantom(48);
    const Volume mask = sphere_mask(48, 0.45);
    const N4Result r = n4_correct(v, mask);
    const double before = coefficient_of_variation(v, mask);
    const double after = coefficient_of_variation(r.corrected, mask);
    CHECK(after <= 0.5 * before);
    CHECK(std::abs(masked_mean(r.corrected, mask) / masked_mean(v, mask) - 1.0) < 0.01);
    CHECK(mean_std(masked_values(r.bias.field, &mask)).mean == doctest::Approx(1.0).epsilon(1e-6));
    REQUIRE(r.iterations_per_level.size() == 4);
    CHECK(r.bias.log_field_spline.control_points() == std::array<std::size_t, 3>{11, 11, 11});
  }

  TEST_CASE("second pass changes little on a textured phantom") {
    const Volume v = textured_bias_phantom(40, 5);
    const Volume mask = sphere_mask(40, 0.45);
    const N4Result first = n4_correct(v, mask);
    const N4Result second = n4_correct(first.corrected, mask);
    const double cv1 = coefficient_of_variation(first.corrected, mask);
    const double cv2 = coefficient_of_variation(second.corrected, mask);
    CHECK(cv1 < coefficient_of_variation(v, mask));
    CHECK(std::abs(cv1 - cv2) / cv1 < 0.05);
  }

  TEST_CASE("field is strictly positive for random positive inputs") {
    std::mt19937 rng(6);
    std::uniform_real_distribution<float> u(0.5f, 500.0f);
    const Volume mask = sphere_mask(12, 0.5);
    N4Options quick;
    quick.max_iterations = 10;
    for (int trial = 0; trial < 50; ++trial) {
      const Volume v = volume_from({12, 12, 12}, Mat4::Identity(), [&](auto, auto, auto) { return u(rng); });
      const N4Result r = n4_correct(v, mask, quick);
      for (float f : r.bias.field.data()) REQUIRE(f > 0.0f);
    }
  }

  TEST_CASE("non-positive voxels are left alone") {
    Volume v = sinusoidal_bias_phantom(16);
    std::vector<float> data(v.data().begin(), v.data().end());
    data[16 * 16 * 8 + 16 * 8 + 8] = -3.0f;
    v = v.with_data(data);
    const N4Result r = n4_correct(v, sphere_mask(16, 0.45));
    CHECK(r.corrected[16 * 16 * 8 + 16 * 8 + 8] == -3.0f);
  }

  TEST_CASE("errors") {
    const Volume v = sinusoidal_bias_phantom(8);
    CHECK_THROWS_AS(n4_correct(v, Volume::zeros(v.grid(), Intent::mask)), DegenerateInput);
    const Volume negative = volume_from({8, 8, 8}, Mat4::Identity(), [](auto, auto, auto) { return -1.0f; });
    CHECK_THROWS_AS(n4_correct(negative, sphere_mask(8, 0.5)), DegenerateInput);
  }

  TEST_CASE("spline refinement is exact") {
    std::mt19937 rng(7);
    std::normal_distribution<double> g(0.0, 1.0);
    BSplineLattice coarse({2, 3, 1});
    for (double& c : coarse.coefficients()) c = g(rng);
    const Dims d{9, 13, 5};
    const auto a = coarse.evaluate(d);
    const auto b = coarse.refined().evaluate(d);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }

  TEST_CASE("repeated residual fits approach a linear function") {
    const Dims d{10, 10, 10};
    std::vector<double> values(1000);
    std::vector<char> use(1000, 1);
    for (std::size_t i = 0; i < 1000; ++i) values[i] = 0.1 * (i % 10) - 0.05 * (i / 100) + 2.0;
    BSplineLattice total({1, 1, 1});
    std::vector<double> residual = values;
    double previous = HUGE_VAL, first = 0.0;
    for (int round = 0; round < 30; ++round) {
      total.add(BSplineLattice::fit(d, {1, 1, 1}, residual, use));
      const auto approx = total.evaluate(d);
      double worst = 0.0;
      for (std::size_t i = 0; i < 1000; ++i) {
        residual[i] = values[i] - approx[i];
        worst = std::max(worst, std::abs(residual[i]));
      }
      CHECK(worst < previous);
      if (round == 0) first = worst;
      previous = worst;
    }
    CHECK(previous < 0.5 * first);
  }
}
