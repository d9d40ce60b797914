#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "safegen/registry.hpp"
#include "safegen/toy_world.hpp"
#include "oracles.hpp"

using namespace safegen;

namespace {

GaussianMixtureWorld random_world(std::uint64_t seed, std::size_t d, std::size_t k) {
  Rng rng(seed);
  std::vector<MixtureComponent> comps;
  for (std::size_t i = 0; i < k; ++i)
    comps.push_back({scaled(rng.normal_vector(d), 2.0), 0.1 + rng.uniform(), 0.2 + rng.uniform(),
                     "c" + std::to_string(i), i % 2 ? Safety::safe : Safety::unsafe});
  return GaussianMixtureWorld(std::move(comps), 0.1);
}

// Relative error of the noise prediction against a finite-difference score of
// an independently written log-density, worst over `probes` random (z, t).
double worst_score_error(const GaussianMixtureWorld& w, const NoiseSchedule& s, int probes, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    const int t = 1 + static_cast<int>(rng.uniform() * s.steps) % s.steps;
    const auto params = marginal_params(w, s, t);
    std::vector<Vec> means;
    Vec vars, weights;
    for (std::size_t k = 0; k < w.size(); ++k) {
      means.push_back(params[k].mean);
      vars.push_back(params[k].variance);
      weights.push_back(w.components()[k].weight);
    }
    const auto& c = params[static_cast<std::size_t>(rng.uniform() * w.size()) % w.size()];
    Vec z = rng.normal_vector(w.latent_dim());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = c.mean[i] + std::sqrt(c.variance) * z[i];

    const Vec fd = oracle::numeric_gradient(
        [&](const Vec& x) { return oracle::mixture_log_density(means, vars, weights, x); }, z, 1e-5);
    const Vec eps = exact_noise_prediction(w, s, z, t);
    const double f = -std::sqrt(1.0 - s.alpha_bar_at(t));
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      num += (eps[i] - f * fd[i]) * (eps[i] - f * fd[i]);
      den += f * fd[i] * f * fd[i];
    }
    worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
  }
  return worst;
}

}  // namespace

TEST(World, ScoreMatchesFiniteDifferences) {
  const NoiseSchedule s = make_schedule(500, 1e-4, 0.02);
  EXPECT_LE(worst_score_error(random_world(1, 3, 4), s, 100, 10), 1e-5);
  EXPECT_LE(worst_score_error(make_demo_world({.latent_dim = 8, .radius = 4.0}), s, 100, 11), 1e-5);
  EXPECT_LE(worst_score_error(make_concept_world(make_default_registry()), s, 100, 12), 1e-5);
}

TEST(World, LogDensityMatchesDirectFormula) {
  const GaussianMixtureWorld w = random_world(4, 5, 3);
  const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const int t = 1 + i;
    const auto params = marginal_params(w, s, t);
    std::vector<Vec> means;
    Vec vars, weights;
    for (std::size_t k = 0; k < w.size(); ++k) {
      means.push_back(params[k].mean);
      vars.push_back(params[k].variance);
      weights.push_back(w.components()[k].weight);
    }
    const Vec z = rng.normal_vector(5);
    EXPECT_NEAR(log_density(w, s, z, t), oracle::mixture_log_density(means, vars, weights, z), 1e-9);
  }
}

TEST(World, MarginalParams) {
  const GaussianMixtureWorld w = random_world(2, 3, 2);
  const NoiseSchedule s = make_schedule(10, 1e-4, 0.02);
  const auto p0 = marginal_params(w, s, 0);
  EXPECT_EQ(p0[0].mean, w.components()[0].mean);
  EXPECT_DOUBLE_EQ(p0[0].variance, w.components()[0].variance);
  const auto p = marginal_params(w, s, 10);
  const double ab = s.alpha_bar_at(10);
  EXPECT_NEAR(p[1].variance, ab * w.components()[1].variance + 1.0 - ab, 1e-15);
  EXPECT_NEAR(p[1].mean[2], std::sqrt(ab) * w.components()[1].mean[2], 1e-15);
}

TEST(World, Validation) {
  const Vec m = {0.0, 1.0};
  EXPECT_THROW(GaussianMixtureWorld({{m, 1.0, 1.0, "a", Safety::safe}}, 0.1), ValidationError);
  EXPECT_THROW(GaussianMixtureWorld({{m, 0.0, 1.0, "a", Safety::safe}, {m, 1.0, 1.0, "b", Safety::unsafe}}, 0.1),
               ValidationError);
  EXPECT_THROW(GaussianMixtureWorld({{m, 1.0, -1.0, "a", Safety::safe}, {m, 1.0, 1.0, "b", Safety::unsafe}}, 0.1),
               ValidationError);
  EXPECT_THROW(GaussianMixtureWorld({{m, 1.0, 1.0, "a", Safety::safe}, {{1.0}, 1.0, 1.0, "b", Safety::unsafe}}, 0.1),
               ValidationError);
  const GaussianMixtureWorld w({{m, 1.0, 3.0, "a", Safety::safe}, {m, 1.0, 1.0, "b", Safety::unsafe}}, 0.1);
  EXPECT_DOUBLE_EQ(w.components()[0].weight, 0.75);
  const ConceptRegistry r = make_default_registry();
  EXPECT_THROW(w.require_bound_to(r), ValidationError);
  make_demo_world().require_bound_to(r);
}

TEST(World, JsonRoundTrip) {
  const GaussianMixtureWorld w = random_world(9, 4, 5);
  EXPECT_EQ(world_from_json(nlohmann::json::parse(world_to_json(w).dump())), w);
  nlohmann::json j = world_to_json(w);
  j["components"][0].erase("variance");
  EXPECT_THROW(world_from_json(j), LoadError);
}

TEST(UnsafeProbability, Examples) {
  const GaussianMixtureWorld demo = make_demo_world();
  Vec at_violence(demo.latent_dim(), 0.0);
  at_violence[0] = 17.16;
  EXPECT_GT(unsafe_probability(demo, at_violence), 0.999);

  const GaussianMixtureWorld sym({{{-1.0, 0.0}, 0.5, 1.0, "u", Safety::unsafe}, {{1.0, 0.0}, 0.5, 1.0, "s", Safety::safe}}, 0.1);
  EXPECT_NEAR(unsafe_probability(sym, Vec{0.0, 3.0}), 0.5, 1e-15);

  const GaussianMixtureWorld none({{{-1.0}, 0.5, 1.0, "a", Safety::safe}, {{1.0}, 0.5, 1.0, "b", Safety::safe}}, 0.1);
  EXPECT_EQ(unsafe_probability(none, Vec{0.3}), 0.0);
}

TEST(UnsafeProbability, InvariantUnderComponentOrder) {
  const GaussianMixtureWorld w = random_world(21, 3, 5);
  auto comps = w.components();
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(comps.begin(), comps.end(), rng.engine());
    const GaussianMixtureWorld p(comps, 0.1);
    for (int i = 0; i < 20; ++i) {
      const Vec z = scaled(rng.normal_vector(3), 2.0);
      EXPECT_NEAR(unsafe_probability(w, z), unsafe_probability(p, z), 1e-12);
    }
  }
}

TEST(Conditioning, ProperReweighting) {
  const ConceptRegistry r = make_default_registry();
  const GaussianMixtureWorld w = make_concept_world(r);
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const Vec c = condition_from_embedding(w, r, Embedding(rng.normal_vector(r.dimension())));
    double total = 0.0;
    for (double x : c) {
      EXPECT_GT(x, 0.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  const Vec v = condition_from_embedding(w, r, r.at("violence").centroid);
  const auto it = std::max_element(v.begin(), v.end());
  EXPECT_EQ(w.components()[static_cast<std::size_t>(it - v.begin())].concept_label, "violence");
}

TEST(Conditioning, SampledLatentsLandOnTheConditionedComponent) {
  const ConceptRegistry r = make_default_registry();
  const GaussianMixtureWorld w = make_demo_world({.latent_dim = 64, .radius = 6.0});
  const NoiseSchedule s = make_schedule(500, 1e-4, 0.02, Sampler::ddim);
  const Vec cond = condition_from_embedding(w, r, r.at("full clothing").centroid);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Vec z = generate(s, WorldPredictor{&w, &s}, &cond, 7.5, seed, w.latent_dim()).latent;
    EXPECT_LT(unsafe_probability(w, z), 0.01);
    EXPECT_LT(z[1], -4.0);
  }
}
