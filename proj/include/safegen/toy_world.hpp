#pragma once

// Isotropic Gaussian-mixture world. Its forward-noised marginals stay Gaussian
// mixtures, so the ideal noise prediction is available in closed form and the
// mixture posterior doubles as the ground-truth safety classifier.

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safegen/diffusion.hpp"
#include "safegen/embedding.hpp"
#include "safegen/errors.hpp"
#include "safegen/linalg.hpp"
#include "safegen/registry.hpp"

namespace safegen {

enum class Safety { unsafe, safe };

inline const char* to_string(Safety s) { return s == Safety::unsafe ? "unsafe" : "safe"; }

struct MixtureComponent {
  Vec mean;
  double variance = 1.0;
  double weight = 1.0;
  std::string concept_label;
  Safety safety = Safety::safe;

  friend bool operator==(const MixtureComponent&, const MixtureComponent&) = default;
};

class GaussianMixtureWorld {
 public:
  // Weights are normalized to sum to one.
  GaussianMixtureWorld(std::vector<MixtureComponent> components, double temperature)
      : components_(std::move(components)), temperature_(temperature) {
    if (components_.size() < 2) throw ValidationError("mixture world needs at least two components");
    if (!(temperature_ > 0.0) || !std::isfinite(temperature_))
      throw ValidationError("mixture world temperature must be positive");
    const std::size_t d = components_.front().mean.size();
    if (d == 0) throw ValidationError("mixture component mean is empty");
    double total = 0.0;
    for (const auto& c : components_) {
      if (c.mean.size() != d) throw ValidationError("mixture components have mixed dimensions");
      if (!all_finite(c.mean)) throw ValidationError("mixture component '" + c.concept_label + "' has a non-finite mean");
      if (!(c.variance > 0.0) || !std::isfinite(c.variance))
        throw ValidationError("mixture component '" + c.concept_label + "' needs variance > 0");
      if (!(c.weight > 0.0) || !std::isfinite(c.weight))
        throw ValidationError("mixture component '" + c.concept_label + "' needs weight > 0");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
      for (auto& c : components_) c.weight /= total;
    for (std::size_t i = 0; i < d; ++i) {
      bool used = false;
      for (const auto& c : components_) used = used || c.mean[i] != 0.0;
      (used ? support_ : off_support_).push_back(i);
    }
  }

  std::size_t latent_dim() const noexcept { return components_.front().mean.size(); }
  std::size_t size() const noexcept { return components_.size(); }
  double temperature() const noexcept { return temperature_; }
  const std::vector<MixtureComponent>& components() const noexcept { return components_; }

  // Coordinates where some mean is nonzero, and the rest. Off the support
  // every component looks the same, which the score evaluation exploits.
  const std::vector<std::size_t>& support() const noexcept { return support_; }
  const std::vector<std::size_t>& off_support() const noexcept { return off_support_; }

  Vec base_weights() const {
    Vec w;
    w.reserve(components_.size());
    for (const auto& c : components_) w.push_back(c.weight);
    return w;
  }

  // Every component label must exist in the registry, and the pipeline needs
  // both an unsafe and a safe component.
  void require_bound_to(const ConceptRegistry& registry) const {
    bool any_unsafe = false, any_safe = false;
    for (const auto& c : components_) {
      if (!registry.find(c.concept_label))
        throw ValidationError("world component label '" + c.concept_label + "' is not in the registry");
      (c.safety == Safety::unsafe ? any_unsafe : any_safe) = true;
    }
    if (!any_unsafe || !any_safe) throw ValidationError("world needs at least one unsafe and one safe component");
  }

  friend bool operator==(const GaussianMixtureWorld& a, const GaussianMixtureWorld& b) {
    return a.components_ == b.components_ && a.temperature_ == b.temperature_;
  }

 private:
  std::vector<MixtureComponent> components_;
  double temperature_;
  std::vector<std::size_t> support_, off_support_;
};

struct MarginalParams {
  Vec mean;
  double variance;
};

// Component k at noise level t: N(sqrt(ab_t) mu_k, ab_t sigma_k^2 + 1 - ab_t).
inline std::vector<MarginalParams> marginal_params(const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                                                   int t) {
  const double ab = schedule.alpha_bar_at(t);
  const double s = std::sqrt(ab);
  std::vector<MarginalParams> out;
  out.reserve(world.size());
  for (const auto& c : world.components()) out.push_back({scaled(c.mean, s), ab * c.variance + (1.0 - ab)});
  return out;
}

namespace detail {

inline void check_weights(const GaussianMixtureWorld& world, const Vec* weights) {
  if (weights && weights->size() != world.size()) throw DomainError("condition weights do not match the component count");
}

inline double weight_of(const GaussianMixtureWorld& world, const Vec* weights, std::size_t k) {
  return weights ? (*weights)[k] : world.components()[k].weight;
}

// ||z - s mu_k||^2 for every component, with the off-support part shared.
inline void squared_distances(const GaussianMixtureWorld& world, double s, std::span<const double> z, Vec& sq) {
  double off = 0.0;
  for (std::size_t i : world.off_support()) off += z[i] * z[i];
  sq.assign(world.size(), off);
  for (std::size_t k = 0; k < world.size(); ++k) {
    const Vec& mu = world.components()[k].mean;
    double acc = 0.0;
    for (std::size_t i : world.support()) {
      const double diff = z[i] - s * mu[i];
      acc += diff * diff;
    }
    sq[k] += acc;
  }
}

// Per-component log(w_k N(z; m_k, v_k)) at noise level t; -inf where w_k = 0.
inline void component_log_terms(const GaussianMixtureWorld& world, double ab, const Vec& sq, const Vec* weights,
                                Vec& log_terms, Vec& variances) {
  const double d = static_cast<double>(world.latent_dim());
  log_terms.resize(world.size());
  variances.resize(world.size());
  for (std::size_t k = 0; k < world.size(); ++k) {
    const double v = ab * world.components()[k].variance + (1.0 - ab);
    variances[k] = v;
    const double w = weight_of(world, weights, k);
    log_terms[k] = w > 0.0 ? std::log(w) - 0.5 * d * std::log(2.0 * std::numbers::pi * v) - 0.5 * sq[k] / v : -INFINITY;
  }
}

inline void responsibilities(Vec& terms) {
  const double lse = log_sum_exp(terms);
  for (double& x : terms) x = std::exp(x - lse);
}

// out = -sum_k coef_k (z - s mu_k).
inline Vec combine_scores(const GaussianMixtureWorld& world, double s, std::span<const double> z, const Vec& coef) {
  Vec out(z.size());
  double total = 0.0;
  for (double c : coef) total += c;
  for (std::size_t i : world.off_support()) out[i] = -total * z[i];
  for (std::size_t i : world.support()) {
    double acc = 0.0;
    for (std::size_t k = 0; k < world.size(); ++k)
      if (coef[k] != 0.0) acc += coef[k] * (z[i] - s * world.components()[k].mean[i]);
    out[i] = -acc;
  }
  return out;
}

}  // namespace detail

// log p_t(z) under the (optionally re-weighted) mixture.
inline double log_density(const GaussianMixtureWorld& world, const NoiseSchedule& schedule, std::span<const double> z,
                          int t, const Vec* weights = nullptr) {
  if (z.size() != world.latent_dim()) throw DomainError("log_density: latent dimension mismatch");
  detail::check_weights(world, weights);
  const double ab = schedule.alpha_bar_at(t);
  Vec sq, terms, vars;
  detail::squared_distances(world, std::sqrt(ab), z, sq);
  detail::component_log_terms(world, ab, sq, weights, terms, vars);
  return log_sum_exp(terms);
}

// grad log p_t(z): responsibility-weighted sum of component scores.
inline Vec mixture_score(const GaussianMixtureWorld& world, const NoiseSchedule& schedule, std::span<const double> z,
                         int t, const Vec* weights = nullptr) {
  if (z.size() != world.latent_dim()) throw DomainError("mixture_score: latent dimension mismatch");
  detail::check_weights(world, weights);
  const double ab = schedule.alpha_bar_at(t);
  const double s = std::sqrt(ab);
  Vec sq, terms, vars;
  detail::squared_distances(world, s, z, sq);
  detail::component_log_terms(world, ab, sq, weights, terms, vars);
  detail::responsibilities(terms);
  for (std::size_t k = 0; k < terms.size(); ++k) terms[k] /= vars[k];
  return detail::combine_scores(world, s, z, terms);
}

// Ideal noise prediction eps* = -sqrt(1 - ab_t) * grad log p_t(z).
inline Vec exact_noise_prediction(const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                                  std::span<const double> z, int t, const Vec* weights = nullptr) {
  Vec g = mixture_score(world, schedule, z, t, weights);
  const double f = -std::sqrt(1.0 - schedule.alpha_bar_at(t));
  for (double& v : g) v *= f;
  return g;
}

// eps_u + gamma (eps_c - eps_u) for the exact predictor. Both predictions are
// linear in the per-component scores, so guidance is applied to the
// responsibilities and the latent is traversed once.
inline Vec guided_noise_prediction(const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                                   std::span<const double> z, int t, const Vec& weights, double gamma) {
  if (z.size() != world.latent_dim()) throw DomainError("guided_noise_prediction: latent dimension mismatch");
  detail::check_weights(world, &weights);
  const double ab = schedule.alpha_bar_at(t);
  const double s = std::sqrt(ab);
  Vec sq, ru, rc, vars;
  detail::squared_distances(world, s, z, sq);
  detail::component_log_terms(world, ab, sq, nullptr, ru, vars);
  detail::component_log_terms(world, ab, sq, &weights, rc, vars);
  detail::responsibilities(ru);
  detail::responsibilities(rc);
  const double f = -std::sqrt(1.0 - ab);
  Vec coef(world.size());
  for (std::size_t k = 0; k < coef.size(); ++k) coef[k] = f * (ru[k] + gamma * (rc[k] - ru[k])) / vars[k];
  return detail::combine_scores(world, s, z, coef);
}

// Adapter satisfying NoisePredictor; the condition is a weight vector.
struct WorldPredictor {
  const GaussianMixtureWorld* world;
  const NoiseSchedule* schedule;

  Vec operator()(std::span<const double> z, int t, const Condition* weights) const {
    return exact_noise_prediction(*world, *schedule, z, t, weights);
  }

  Vec guided(std::span<const double> z, int t, const Condition& weights, double gamma) const {
    return guided_noise_prediction(*world, *schedule, z, t, weights, gamma);
  }
};

// Component weights pi_k * exp(cos(e, centroid_k) / temperature), normalized.
// The unguided point is routed as "no condition" by callers, not through here.
inline Vec condition_from_embedding(const GaussianMixtureWorld& world, const ConceptRegistry& registry,
                                    const Embedding& e) {
  if (e.dim() != registry.dimension()) throw DomainError("condition_from_embedding: embedding dimension mismatch");
  if (!(e.norm() > 0.0)) throw DomainError("condition_from_embedding: zero-norm embedding");
  Vec logits(world.size());
  for (std::size_t k = 0; k < world.size(); ++k) {
    const auto& c = world.components()[k];
    logits[k] = std::log(c.weight) + cosine_similarity(e, registry.at(c.concept_label).centroid) / world.temperature();
  }
  const double lse = log_sum_exp(logits);
  Vec w(world.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(logits[k] - lse);
  return w;
}

// Posterior mass of unsafe components under the clean (t = 0) mixture.
inline double unsafe_probability(const GaussianMixtureWorld& world, std::span<const double> z) {
  if (z.size() != world.latent_dim()) throw DomainError("unsafe_probability: latent dimension mismatch");
  Vec terms(world.size());
  const double d = static_cast<double>(world.latent_dim());
  for (std::size_t k = 0; k < world.size(); ++k) {
    const auto& c = world.components()[k];
    terms[k] = std::log(c.weight) - 0.5 * d * std::log(2.0 * std::numbers::pi * c.variance) -
               0.5 * squared_distance(z, c.mean) / c.variance;
  }
  const double lse = log_sum_exp(terms);
  double p = 0.0;
  for (std::size_t k = 0; k < world.size(); ++k)
    if (world.components()[k].safety == Safety::unsafe) p += std::exp(terms[k] - lse);
  return std::clamp(p, 0.0, 1.0);
}

inline constexpr double kUnsafeThreshold = 0.5;

inline bool is_unsafe(const GaussianMixtureWorld& world, std::span<const double> z,
                      double threshold = kUnsafeThreshold) {
  return unsafe_probability(world, z) > threshold;
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

inline nlohmann::json world_to_json(const GaussianMixtureWorld& w) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : w.components())
    comps.push_back({{"mean", c.mean},
                     {"variance", c.variance},
                     {"weight", c.weight},
                     {"concept_label", c.concept_label},
                     {"safety", to_string(c.safety)}});
  return {{"latent_dim", w.latent_dim()}, {"temperature", w.temperature()}, {"components", std::move(comps)}};
}

inline GaussianMixtureWorld world_from_json(const nlohmann::json& j) {
  using detail::require_field;
  if (!j.is_object()) throw LoadError("world document must be a JSON object");
  const auto& jt = require_field(j, "temperature", "world");
  if (!jt.is_number()) throw LoadError("world: temperature must be a number", "temperature");
  const auto& jc = require_field(j, "components", "world");
  if (!jc.is_array()) throw LoadError("world: components must be an array", "components");
  std::vector<MixtureComponent> comps;
  for (const auto& c : jc) {
    MixtureComponent m;
    const auto& jl = require_field(c, "concept_label", "world component");
    if (!jl.is_string()) throw LoadError("world component: concept_label must be a string", "concept_label");
    m.concept_label = jl.get<std::string>();
    const std::string ctx = "component '" + m.concept_label + "'";
    m.mean = detail::read_vector(require_field(c, "mean", ctx), m.concept_label);
    const auto& jv = require_field(c, "variance", ctx);
    const auto& jw = require_field(c, "weight", ctx);
    const auto& js = require_field(c, "safety", ctx);
    if (!jv.is_number() || !jw.is_number() || !js.is_string())
      throw LoadError(ctx + ": variance/weight must be numbers and safety a string", m.concept_label);
    m.variance = jv.get<double>();
    m.weight = jw.get<double>();
    const auto safety = js.get<std::string>();
    if (safety != "unsafe" && safety != "safe") throw LoadError(ctx + ": safety must be unsafe or safe", m.concept_label);
    m.safety = safety == "unsafe" ? Safety::unsafe : Safety::safe;
    comps.push_back(std::move(m));
  }
  try {
    GaussianMixtureWorld w(std::move(comps), jt.get<double>());
    if (j.contains("latent_dim") && j.at("latent_dim").is_number_integer() &&
        j.at("latent_dim").get<std::size_t>() != w.latent_dim())
      throw LoadError("world: latent_dim disagrees with component means", "latent_dim");
    return w;
  } catch (const LoadError&) {
    throw;
  } catch (const ValidationError& e) {
    throw LoadError(std::string("world: ") + e.what());
  }
}

inline GaussianMixtureWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open world file '" + path + "'", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("world '" + path + "' is not valid JSON: " + e.what(), path);
  }
  return world_from_json(j);
}

inline void save_world(const GaussianMixtureWorld& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write world file '" + path + "'");
  out << world_to_json(w).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Shipped worlds
// ---------------------------------------------------------------------------

struct DemoWorldOptions {
  std::size_t latent_dim = 512;
  double radius = 17.16;
  double variance = 0.25;
  double temperature = 0.1;
};

// Two unsafe classes and their safe counterparts, means on a circle spanned by
// the first two latent axes: violence 0, safe counterpart 90, sexual 180,
// full clothing 270 degrees. Equal weights.
inline GaussianMixtureWorld make_demo_world(const DemoWorldOptions& opt = {}) {
  if (opt.latent_dim < 2) throw DomainError("demo world needs latent_dim >= 2");
  auto on_circle = [&](double degrees) {
    Vec m(opt.latent_dim, 0.0);
    const double a = degrees * std::numbers::pi / 180.0;
    m[0] = opt.radius * std::cos(a);
    m[1] = opt.radius * std::sin(a);
    return m;
  };
  return GaussianMixtureWorld(
      {
          {on_circle(0), opt.variance, 1.0, "violence", Safety::unsafe},
          {on_circle(90), opt.variance, 1.0, "showing a peaceful interaction", Safety::safe},
          {on_circle(180), opt.variance, 1.0, "sexual", Safety::unsafe},
          {on_circle(270), opt.variance, 1.0, "full clothing", Safety::safe},
      },
      opt.temperature);
}

struct ConceptWorldOptions {
  double radius = 4.0;
  double variance = 0.25;
  double temperature = 0.05;
  double generic_weight = 0.86;
};

// One component per unsafe/safe registry entry on its own latent axis, plus a
// heavy "ordinary scene" component that dominates unguided generation.
inline GaussianMixtureWorld make_concept_world(const ConceptRegistry& registry, const ConceptWorldOptions& opt = {}) {
  std::vector<const ConceptEntry*> labeled;
  for (const auto& e : registry.entries())
    if (e.cls != ConceptClass::neutral) labeled.push_back(&e);
  if (!registry.find(kGenericSceneLabel))
    throw ValidationError(std::string("concept world needs a '") + kGenericSceneLabel + "' registry entry");
  if (!(opt.generic_weight > 0.0 && opt.generic_weight < 1.0))
    throw DomainError("generic_weight must be in (0, 1)");
  const std::size_t dim = labeled.size() + 1;
  const double other = (1.0 - opt.generic_weight) / static_cast<double>(labeled.size());
  std::vector<MixtureComponent> comps;
  for (std::size_t k = 0; k < labeled.size(); ++k) {
    Vec m(dim, 0.0);
    m[k] = opt.radius;
    comps.push_back({std::move(m), opt.variance, other, labeled[k]->label,
                     labeled[k]->cls == ConceptClass::unsafe ? Safety::unsafe : Safety::safe});
  }
  Vec g(dim, 0.0);
  g[dim - 1] = opt.radius;
  comps.push_back({std::move(g), opt.variance, opt.generic_weight, kGenericSceneLabel, Safety::safe});
  return GaussianMixtureWorld(std::move(comps), opt.temperature);
}

}  // namespace safegen
