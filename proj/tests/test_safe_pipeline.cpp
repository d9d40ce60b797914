#include <gtest/gtest.h>

#include "safegen/registry.hpp"
#include "safegen/safe_pipeline.hpp"

using namespace safegen;

namespace {

struct Demo {
  ConceptRegistry registry = make_default_registry();
  GaussianMixtureWorld world = make_demo_world();
  NoiseSchedule ddim = make_schedule(100, 1e-4, 0.02, Sampler::ddim);
  NoiseSchedule ddpm = make_schedule(100, 1e-4, 0.02, Sampler::ddpm);

  const Embedding& x() const { return registry.at("violence").centroid; }
  const Embedding& safe() const { return registry.safe_counterpart_of("violence").centroid; }
};

const Demo& demo() {
  static const Demo d;
  return d;
}

SafetyConfig config(double w_safe, double tau, std::uint64_t seed, int steps = 100) {
  SafetyConfig c;
  c.w_safe = w_safe;
  c.w_context = 1.0 - w_safe;
  c.tau_gc = tau;
  c.seed = seed;
  c.steps = steps;
  return c;
}

}  // namespace

TEST(SafetyConfig, Validation) {
  SafetyConfig c;
  c.validate();
  c.w_safe = 0.9;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.w_safe = -0.1;
  c.w_context = 1.1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.alpha1 = 0.7;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.steps = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.tau_gc = NAN;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(fusion_strategy_from_string("sideways"), ValidationError);
}

TEST(Gate, SimilarityExamples) {
  EXPECT_NEAR(gate_similarity(Vec{1, 0}, Vec{1, 0}, Vec{0, 1}, 1.0, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(gate_similarity(Vec{1, 0}, Vec{1, 0}, Vec{0, 1}, 0.5, 0.5), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(gate_similarity(Vec{1, 0}, Vec{1, 0}, Vec{-1, 0}, 0.5, 0.5), DomainError);
}

TEST(Pipeline, BaselineEquivalenceBitExact) {
  const Demo& d = demo();
  for (const NoiseSchedule* s : {&d.ddim, &d.ddpm})
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const SafetyConfig c = config(0.0, 0.95, seed);
      const auto fused = dual_latent_generate(d.x(), d.safe(), c, d.world, *s, d.registry);
      const auto base = baseline_generate(d.x(), c, d.world, *s, d.registry);
      ASSERT_EQ(fused.latent, base.latent) << "seed " << seed;
    }
}

TEST(Pipeline, IdenticalBranchesEqualBaseline) {
  const Demo& d = demo();
  for (const NoiseSchedule* s : {&d.ddim, &d.ddpm})
    for (double w : {0.0, 0.25, 0.5, 0.95, 1.0})
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SafetyConfig c = config(w, 0.5, seed);
        const auto fused = dual_latent_generate(d.x(), d.x(), c, d.world, *s, d.registry);
        ASSERT_EQ(fused.latent, baseline_generate(d.x(), c, d.world, *s, d.registry).latent);
      }
}

TEST(Pipeline, LatchMakesFusionAPrefix) {
  const Demo& d = demo();
  for (double tau : {0.55, 0.75, 0.95})
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = dual_latent_generate(d.x(), d.safe(), config(0.95, tau, seed), d.world, d.ddpm, d.registry);
      bool closed = false;
      for (const auto& step : r.trace.steps) {
        if (!step.fused) closed = true;
        ASSERT_FALSE(closed && step.fused);
      }
      if (r.trace.switch_step) EXPECT_FALSE(r.trace.steps[static_cast<std::size_t>(*r.trace.switch_step)].fused);
    }
}

TEST(Pipeline, GateThresholdExtremes) {
  const Demo& d = demo();
  const auto never = dual_latent_generate(d.x(), d.safe(), config(0.95, 1.01, 3), d.world, d.ddim, d.registry);
  EXPECT_EQ(gate_profile(never.trace), 0.0);
  EXPECT_EQ(never.trace.switch_step, 0);
  const auto always = dual_latent_generate(d.x(), d.safe(), config(0.95, -1.0, 3), d.world, d.ddim, d.registry);
  EXPECT_EQ(gate_profile(always.trace), 1.0);
  EXPECT_FALSE(always.trace.switch_step.has_value());
  EXPECT_THROW(gate_profile(GenerationTrace{}), DomainError);
}

TEST(Pipeline, FusedFractionMonotoneInTau) {
  const Demo& d = demo();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    double prev = 2.0;
    for (double tau : {0.55, 0.65, 0.75, 0.85, 0.95}) {
      const auto r = dual_latent_generate(d.x(), d.safe(), config(0.95, tau, seed), d.world, d.ddim, d.registry);
      const double f = gate_profile(r.trace);
      EXPECT_LE(f, prev) << "seed " << seed << " tau " << tau;
      prev = f;
      EXPECT_LT(r.trace.steps.back().gate_similarity, r.trace.steps.front().gate_similarity);
    }
  }
}

TEST(Pipeline, SafeWeightSteersAwayFromUnsafe) {
  const Demo& d = demo();
  const NoiseSchedule full = make_schedule(500, 1e-4, 0.02, Sampler::ddim);
  int unsafe_base = 0, unsafe_guided = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    unsafe_base += is_unsafe(d.world, baseline_generate(d.x(), config(0.0, 0.95, seed, 500), d.world, full, d.registry).latent);
    unsafe_guided +=
        is_unsafe(d.world, dual_latent_generate(d.x(), d.safe(), config(0.95, 0.95, seed, 500), d.world, full, d.registry).latent);
  }
  EXPECT_EQ(unsafe_base, 30);
  EXPECT_EQ(unsafe_guided, 0);
}

TEST(Pipeline, IndependentStrategyAndUnlatchedGateRun) {
  const Demo& d = demo();
  SafetyConfig c = config(0.95, 0.95, 1);
  c.strategy = FusionStrategy::independent;
  c.latch = false;
  const auto r = dual_latent_generate(d.x(), d.safe(), c, d.world, d.ddpm, d.registry);
  EXPECT_EQ(r.trace.steps.size(), 100u);
  EXPECT_TRUE(all_finite(r.latent));
}

TEST(Pipeline, DeterministicAndStepCountChecked) {
  const Demo& d = demo();
  const auto a = dual_latent_generate(d.x(), d.safe(), config(0.75, 0.9, 12), d.world, d.ddpm, d.registry);
  const auto b = dual_latent_generate(d.x(), d.safe(), config(0.75, 0.9, 12), d.world, d.ddpm, d.registry);
  EXPECT_EQ(a.latent, b.latent);
  EXPECT_EQ(a.trace.steps, b.trace.steps);
  EXPECT_THROW(dual_latent_generate(d.x(), d.safe(), config(0.75, 0.9, 12, 50), d.world, d.ddpm, d.registry),
               ValidationError);
}

TEST(Trace, JsonRoundTrip) {
  const Demo& d = demo();
  auto r = dual_latent_generate(d.x(), d.safe(), config(0.95, 0.95, 4), d.world, d.ddim, d.registry);
  r.trace.condition_label = "violence";
  const GenerationTrace back = trace_from_json(nlohmann::json::parse(trace_to_json(r.trace).dump()));
  EXPECT_EQ(back.steps, r.trace.steps);
  EXPECT_EQ(back.switch_step, r.trace.switch_step);
  EXPECT_EQ(back.final_latent, r.trace.final_latent);
  EXPECT_EQ(back.condition_label, "violence");
  EXPECT_THROW(trace_from_json(nlohmann::json::object()), LoadError);
}
