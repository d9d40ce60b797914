#include <gtest/gtest.h>

#include <algorithm>

#include "safegen/disruption.hpp"

using namespace safegen;

namespace {

const ConceptRegistry& registry() {
  static const ConceptRegistry r = make_default_registry();
  return r;
}

EditSpec spec(const std::string& target, double beta, double radius = 0.4, EditKernel k = EditKernel::gaussian) {
  return {target, beta, radius, k};
}

}  // namespace

TEST(Sadi, TableValues) {
  EXPECT_NEAR(100.0 * sadi_index(0.489, 0.0), 75.6, 0.1);
  EXPECT_NEAR(100.0 * sadi_index(0.326, 0.175), 75.0, 0.1);
  EXPECT_NEAR(100.0 * sadi_index(0.270, 0.138), 79.6, 0.1);
  EXPECT_NEAR(100.0 * sadi_index(0.128, 0.0), 93.6, 0.1);
}

TEST(Sadi, BoundsAndMonotonicity) {
  EXPECT_EQ(sadi_index(0.0, 0.0), 1.0);
  EXPECT_EQ(sadi_index(1.0, 1.0), 0.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform() * 0.9, p = rng.uniform() * 0.9, h = 0.01 + 0.09 * rng.uniform();
    const double a1 = 0.05 + 0.9 * rng.uniform();
    EXPECT_GT(sadi_index(s, p, a1, 1 - a1), sadi_index(s + h, p, a1, 1 - a1));
    EXPECT_GT(sadi_index(s, p, a1, 1 - a1), sadi_index(s, p + h, a1, 1 - a1));
  }
  EXPECT_THROW(sadi_index(1.2, 0.0), DomainError);
  EXPECT_THROW(sadi_index(0.2, -0.1), DomainError);
  EXPECT_THROW(sadi_index(0.2, 0.1, 0.7, 0.7), DomainError);
}

TEST(Edit, KernelShapes) {
  EXPECT_EQ(edit_kernel(EditKernel::gaussian, 0.0), 1.0);
  EXPECT_NEAR(edit_kernel(EditKernel::gaussian, 1.0), std::exp(-0.5), 1e-15);
  EXPECT_EQ(edit_kernel(EditKernel::hard, 1.0), 1.0);
  EXPECT_EQ(edit_kernel(EditKernel::hard, 1.0001), 0.0);
  EXPECT_EQ(edit_kernel_from_string("hard"), EditKernel::hard);
  EXPECT_THROW(edit_kernel_from_string("box"), ValidationError);
}

TEST(Edit, IdentityEditChangesNothing) {
  const ConceptRegistry& r = registry();
  const ConceptRegistry e = simulate_edit(r, spec("violence", 0.0));
  EXPECT_EQ(e, r);
  for (const auto& c : r.entries())
    EXPECT_EQ(delta_embedding(c.centroid, e.at(c.label).centroid, r.unconditioned(), e.unconditioned()), 0.0);
}

TEST(Edit, FullStrengthSendsTargetToUnguidedPoint) {
  const ConceptRegistry& r = registry();
  const ConceptRegistry e = simulate_edit(r, spec("sexual", 1.0));
  EXPECT_EQ(e.at("sexual").centroid, r.unconditioned());
  EXPECT_EQ(e.unconditioned(), r.unconditioned());
  EXPECT_NEAR(delta_embedding(r.at("sexual").centroid, e.at("sexual").centroid, r.unconditioned(), e.unconditioned()), 100.0,
              1e-9);
}

TEST(Edit, CloserConceptsMoveAtLeastAsFar) {
  const ConceptRegistry& r = registry();
  for (const auto& target : r.labels(ConceptClass::unsafe))
    for (double beta : {0.1, 0.5, 1.0}) {
      const ConceptRegistry e = simulate_edit(r, spec(target, beta));
      std::vector<std::pair<double, double>> rows;
      for (const auto& c : r.entries())
        rows.emplace_back(angular_distance(c.centroid, r.at(target).centroid),
                          delta_embedding(c.centroid, e.at(c.label).centroid, r.unconditioned(), e.unconditioned()));
      std::sort(rows.begin(), rows.end());
      for (std::size_t i = 1; i < rows.size(); ++i)
        EXPECT_GE(rows[i - 1].second, rows[i].second - 1e-9) << target << " beta " << beta;
    }
}

TEST(Edit, VanishingHardRadiusMovesOnlyTheTarget) {
  const ConceptRegistry& r = registry();
  const ConceptRegistry e = simulate_edit(r, spec("hate", 1.0, 1e-12, EditKernel::hard));
  for (const auto& c : r.entries()) {
    if (c.label == "hate") continue;
    EXPECT_EQ(e.at(c.label).centroid, c.centroid) << c.label;
  }
  EXPECT_NE(e.at("hate").centroid, r.at("hate").centroid);
}

TEST(Edit, Errors) {
  const ConceptRegistry& r = registry();
  EXPECT_THROW(simulate_edit(r, spec("violence", 1.5)), ValidationError);
  EXPECT_THROW(simulate_edit(r, spec("violence", 1.0, 0.0)), ValidationError);
  EXPECT_THROW(simulate_edit(r, spec("full clothing", 1.0)), DomainError);
  EXPECT_THROW(simulate_edit(r, spec("nothing", 1.0)), DomainError);
}

TEST(SetCosine, Reductions) {
  const std::vector<Vec> a = {{1, 0}, {0, 1}}, b = {{1, 1}};
  EXPECT_NEAR(set_cosine(a, b, SetReduction::mean), 1.0, 1e-15);
  EXPECT_NEAR(set_cosine(a, b, SetReduction::pairwise), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(delta_generated(a, b, a, b), 0.0);
  EXPECT_THROW(set_cosine(std::vector<Vec>{}, b), DomainError);
}

TEST(ProximalSweep, IdentityEditReportsZero) {
  const ConceptRegistry& r = registry();
  const auto w = make_concept_world(r);
  const auto s = make_schedule(30, 1e-4, 0.02, Sampler::ddim);
  const DisruptionReport rep = proximal_sweep(r, spec("violence", 0.0), w, s, 8, 1);
  EXPECT_EQ(rep.rows.size(), 18u);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.delta_embedding, 0.0);
    EXPECT_EQ(row.delta_generated, 0.0);
  }
  EXPECT_EQ(rep.mean_removed_generated, 0.0);
  EXPECT_EQ(rep.mean_proximal_generated, 0.0);
}

TEST(ProximalSweep, FullEditOrdersRemovedAboveProximal) {
  const ConceptRegistry& r = registry();
  const auto w = make_concept_world(r);
  const auto s = make_schedule(60, 1e-4, 0.02, Sampler::ddim);
  DisruptionOptions opt;
  opt.jobs = 4;
  const DisruptionReport rep = proximal_sweep(r, spec("violence", 1.0), w, s, 20, 3, opt);
  EXPECT_EQ(rep.rows.size(), 1u + 10u + 7u);
  EXPECT_GT(rep.mean_removed_embedding, rep.mean_proximal_embedding);
  EXPECT_GT(rep.mean_proximal_embedding, 0.0);
  EXPECT_GT(rep.mean_removed_generated, rep.mean_proximal_generated);
  EXPECT_GT(rep.mean_proximal_generated, 0.0);
  double prox = 0.0;
  for (const auto& row : rep.rows) {
    if (row.role == DisruptionRole::proximal) prox += row.delta_generated;
    if (row.role == DisruptionRole::control) {
      EXPECT_LT(std::abs(row.delta_generated), 2.0);
      EXPECT_FALSE(row.delta_compactness.has_value());
    } else {
      ASSERT_TRUE(row.delta_compactness.has_value());
    }
  }
  EXPECT_NEAR(rep.mean_proximal_generated, prox / 10.0, 1e-12);
  ASSERT_TRUE(rep.mean_delta_compactness.has_value());

  const DisruptionReport serial = proximal_sweep(r, spec("violence", 1.0), w, s, 20, 3);
  EXPECT_EQ(disruption_csv(serial), disruption_csv(rep));
}

TEST(ProximalSweep, Serialization) {
  const ConceptRegistry& r = registry();
  const auto w = make_concept_world(r);
  const auto s = make_schedule(10, 1e-4, 0.02, Sampler::ddim);
  DisruptionOptions opt;
  opt.controls = {"hate"};
  const DisruptionReport rep = proximal_sweep(r, spec("self-harm", 0.5), w, s, 4, 9, opt);
  const std::string csv = disruption_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "label,role,angle,delta_embedding,delta_generated,delta_compactness");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  const auto j = disruption_to_json(rep);
  EXPECT_EQ(j.at("target"), "self-harm");
  EXPECT_EQ(j.at("rows").size(), 12u);
  EXPECT_EQ(j.at("rows").back().at("role"), "control");
  EXPECT_TRUE(j.at("rows").back().at("delta_compactness").is_null());
}
