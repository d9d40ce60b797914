#include <gtest/gtest.h>

#include <cmath>

#include "safegen/diffusion.hpp"
#include "safegen/toy_world.hpp"
#include "oracles.hpp"

using namespace safegen;

namespace {

// Exact noise prediction for data ~ N(mu, var I); the condition is ignored.
struct GaussianPredictor {
  const NoiseSchedule* schedule;
  Vec mu;
  double var;

  Vec operator()(std::span<const double> z, int t, const Condition*) const {
    const double ab = schedule->alpha_bar_at(t);
    const double s = std::sqrt(ab), v = ab * var + 1.0 - ab;
    Vec out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::sqrt(1.0 - ab) * (z[i] - s * mu[i]) / v;
    return out;
  }
};

// Condition shifts the prediction; lets guidance be checked through the
// generic two-call path.
struct ShiftPredictor {
  Vec operator()(std::span<const double> z, int t, const Condition* c) const {
    Vec out(z.begin(), z.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.1 * out[i] * t + (c ? (*c)[i] : 0.0);
    return out;
  }
};

GaussianMixtureWorld two_blob_world() {
  return GaussianMixtureWorld({{{2.0, 0.0}, 0.3, 0.5, "a", Safety::unsafe}, {{-2.0, 0.5}, 0.2, 0.5, "b", Safety::safe}},
                              0.1);
}

double energy_statistic(const std::vector<Vec>& x, const std::vector<Vec>& y) {
  auto mean_dist = [](const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double s = 0.0;
    for (const auto& p : a)
      for (const auto& q : b) s += distance(p, q);
    return s / static_cast<double>(a.size() * b.size());
  };
  return 2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

}  // namespace

TEST(Schedule, LinearBetasAndCumulativeProduct) {
  const NoiseSchedule s = make_schedule(500, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
  EXPECT_NEAR(s.beta_at(500), 0.02, 1e-15);
  double prod = 1.0;
  for (int t = 1; t <= 500; ++t) {
    prod *= 1.0 - s.beta_at(t);
    ASSERT_NEAR(s.alpha_bar_at(t), prod, 1e-15);
  }
  EXPECT_EQ(s.alpha_bar_at(0), 1.0);
  EXPECT_THROW(s.alpha_bar_at(501), DomainError);
  EXPECT_THROW(make_schedule(0, 1e-4, 0.02), DomainError);
  EXPECT_THROW(make_schedule(10, 0.02, 1e-4), DomainError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), DomainError);
  EXPECT_EQ(sampler_from_string("ddim"), Sampler::ddim);
  EXPECT_THROW(sampler_from_string("euler"), ValidationError);
}

TEST(Guidance, CombineExamples) {
  const Vec u = {1.0, -1.0}, c = {3.0, 1.0};
  EXPECT_EQ(combine_guidance(u, c, 0.0), u);
  EXPECT_EQ(combine_guidance(u, c, 1.0), c);
  EXPECT_EQ(combine_guidance(u, c, 2.0), (Vec{5.0, 3.0}));
}

TEST(Guidance, AffineInGamma) {
  Rng rng(2);
  const ShiftPredictor p;
  for (int i = 0; i < 100; ++i) {
    const Vec z = rng.normal_vector(5), c = rng.normal_vector(5);
    const double g1 = rng.normal() * 5, g2 = rng.normal() * 5;
    const Vec a = guided_noise(p, z, 7, c, g1), b = guided_noise(p, z, 7, c, g2);
    const Vec ab = guided_noise(p, z, 7, c, g1 + g2), zero = guided_noise(p, z, 7, c, 0.0);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(a[k] + b[k], ab[k] + zero[k], 1e-12);
  }
  EXPECT_THROW(guided_noise(p, Vec{1.0}, 1, Vec{1.0}, NAN), DomainError);
}

TEST(Guidance, FusedMixturePathEqualsTwoPredictions) {
  const GaussianMixtureWorld w = make_demo_world({.latent_dim = 16, .radius = 4.0});
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const Vec z = rng.normal_vector(16);
    const int t = 1 + static_cast<int>(rng.uniform() * 100) % 100;
    Vec weights(w.size());
    double total = 0.0;
    for (double& x : weights) total += x = rng.uniform() + 1e-3;
    for (double& x : weights) x /= total;
    const double gamma = rng.normal() * 8.0;
    const Vec fused = guided_noise_prediction(w, s, z, t, weights, gamma);
    const Vec ref = combine_guidance(exact_noise_prediction(w, s, z, t), exact_noise_prediction(w, s, z, t, &weights), gamma);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_NEAR(fused[k], ref[k], 1e-9 * (1.0 + std::abs(ref[k])));
  }
}

TEST(Sampler, DeterministicPerSeed) {
  const GaussianMixtureWorld w = two_blob_world();
  for (Sampler kind : {Sampler::ddpm, Sampler::ddim}) {
    const NoiseSchedule s = make_schedule(50, 1e-4, 0.02, kind);
    const Vec cond = {0.9, 0.1};
    const auto a = generate(s, WorldPredictor{&w, &s}, &cond, 3.0, 17, 2);
    const auto b = generate(s, WorldPredictor{&w, &s}, &cond, 3.0, 17, 2);
    EXPECT_EQ(a.latent, b.latent);
    EXPECT_NE(a.latent, generate(s, WorldPredictor{&w, &s}, &cond, 3.0, 18, 2).latent);
  }
}

TEST(Sampler, KeepsStatesAndStartsFromSeededNoise) {
  const NoiseSchedule s = make_schedule(20, 1e-4, 0.02);
  const GaussianPredictor p{&s, {0.0, 0.0}, 1.0};
  const auto r = generate(s, p, nullptr, 1.0, 5, 2, true);
  EXPECT_EQ(r.states.size(), 20u);
  EXPECT_EQ(r.states.back(), r.latent);
  EXPECT_EQ(r.initial_noise, Rng(5).normal_vector(2));
  EXPECT_THROW(generate(s, p, nullptr, 1.0, 5, 0), DomainError);
}

TEST(Sampler, SingleGaussianMomentsDdpm) {
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02);
  const Vec mu = {1.0, -2.0};
  const double var = 0.25;
  const GaussianPredictor p{&s, mu, var};
  const int n = 2000;
  Vec mean(2, 0.0), m2(2, 0.0);
  for (int i = 0; i < n; ++i) {
    const Vec z = generate(s, p, &mu, 1.0, derive_seed(42, static_cast<std::uint64_t>(i)), 2).latent;
    for (int k = 0; k < 2; ++k) mean[k] += z[k] / n, m2[k] += z[k] * z[k] / n;
  }
  for (int k = 0; k < 2; ++k) {
    const auto exact = oracle::reverse_gaussian_moments(200, 1e-4, 0.02, true, mu[k], var);
    const double sample_var = (m2[k] - mean[k] * mean[k]) * n / (n - 1);
    EXPECT_NEAR(mean[k], exact.mean, 4.0 * std::sqrt(exact.variance / n));
    EXPECT_NEAR(sample_var, exact.variance, 4.0 * exact.variance * std::sqrt(2.0 / (n - 1)));
  }
}

TEST(Sampler, UnguidedMatchesMixtureByEnergyDistance) {
  const GaussianMixtureWorld w = two_blob_world();
  const NoiseSchedule s = make_schedule(200, 1e-4, 0.02);
  const Vec cond = {0.99, 0.01};
  const std::size_t n = 250;
  std::vector<Vec> gen, ref;
  Rng rng(123);
  for (std::size_t i = 0; i < n; ++i) {
    gen.push_back(generate(s, WorldPredictor{&w, &s}, &cond, 0.0, derive_seed(9, i), 2).latent);
    const auto& c = w.components()[rng.uniform() < w.components()[0].weight ? 0 : 1];
    Vec x = rng.normal_vector(2);
    for (std::size_t k = 0; k < 2; ++k) x[k] = c.mean[k] + std::sqrt(c.variance) * x[k];
    ref.push_back(x);
  }
  const double observed = energy_statistic(gen, ref);
  std::vector<Vec> pool = gen;
  pool.insert(pool.end(), ref.begin(), ref.end());
  int as_extreme = 0;
  const int perms = 200;
  for (int p = 0; p < perms; ++p) {
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    const std::vector<Vec> a(pool.begin(), pool.begin() + static_cast<long>(n)), b(pool.begin() + static_cast<long>(n), pool.end());
    as_extreme += energy_statistic(a, b) >= observed ? 1 : 0;
  }
  EXPECT_GT(static_cast<double>(as_extreme + 1) / (perms + 1), 0.01);
}

TEST(Sampler, DdimMatchesClosedFormMoments) {
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02, Sampler::ddim);
  const Vec mu = {3.0, 1.0};
  const GaussianPredictor p{&s, mu, 0.1};
  Vec mean(2, 0.0), m2(2, 0.0);
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    const Vec z = generate(s, p, nullptr, 1.0, derive_seed(1, static_cast<std::uint64_t>(i)), 2).latent;
    for (int k = 0; k < 2; ++k) mean[k] += z[k] / n, m2[k] += z[k] * z[k] / n;
  }
  for (int k = 0; k < 2; ++k) {
    const auto exact = oracle::reverse_gaussian_moments(100, 1e-4, 0.02, false, mu[k], 0.1);
    EXPECT_NEAR(mean[k], exact.mean, 4.0 * std::sqrt(exact.variance / n));
    EXPECT_NEAR(m2[k] - mean[k] * mean[k], exact.variance, 4.0 * exact.variance * std::sqrt(2.0 / (n - 1)));
  }
  const auto long_run = oracle::reverse_gaussian_moments(2000, 1e-4, 0.02, false, 3.0, 0.1);
  EXPECT_NEAR(long_run.mean, 3.0, 1e-3);
  EXPECT_NEAR(long_run.variance, 0.1, 1e-2);
}

TEST(Sampler, StepRangeChecked) {
  const NoiseSchedule s = make_schedule(3, 1e-4, 0.02);
  const GaussianPredictor p{&s, {0.0}, 1.0};
  const Vec xi = {0.0};
  EXPECT_THROW(sample_step(s, p, LatentState{{0.0}, 3}, nullptr, 1.0, xi), DomainError);
  EXPECT_THROW(sample_step(s, p, LatentState{{0.0}, -1}, nullptr, 1.0, xi), DomainError);
}
