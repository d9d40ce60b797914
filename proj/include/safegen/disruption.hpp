#pragma once

// Semantic disruption of concept-removal edits. An edit pulls the removed
// concept (and, through a kernel of angular radius phi_P, its neighbours)
// toward the unguided point U. Disruption is how much closer a concept lands
// to U afterwards, in embedding space and in generated outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safegen/analysis.hpp"
#include "safegen/diffusion.hpp"
#include "safegen/embedding.hpp"
#include "safegen/errors.hpp"
#include "safegen/parallel.hpp"
#include "safegen/random.hpp"
#include "safegen/registry.hpp"
#include "safegen/toy_world.hpp"

namespace safegen {

enum class EditKernel { gaussian, hard };

inline const char* to_string(EditKernel k) { return k == EditKernel::gaussian ? "gaussian" : "hard"; }

inline EditKernel edit_kernel_from_string(const std::string& s) {
  if (s == "gaussian") return EditKernel::gaussian;
  if (s == "hard") return EditKernel::hard;
  throw ValidationError("unknown edit kernel '" + s + "' (expected gaussian or hard)");
}

struct EditSpec {
  std::string target_label;
  double strength = 1.0;  // beta
  double radius = 0.4;    // phi_P, radians
  EditKernel kernel = EditKernel::gaussian;

  void validate() const {
    if (!(strength >= 0.0 && strength <= 1.0)) throw ValidationError("edit strength must be in [0, 1]");
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ValidationError("edit radius must be > 0");
  }
};

// Kernel value at ratio = angle / radius. k(0) = 1.
inline double edit_kernel(EditKernel k, double ratio) {
  if (k == EditKernel::hard) return ratio <= 1.0 ? 1.0 : 0.0;
  return std::exp(-0.5 * ratio * ratio);
}

inline double angular_distance(const Embedding& a, const Embedding& b) { return std::acos(cosine_similarity(a, b)); }

// Fraction of the way toward U that `label` moves under the edit.
inline double edit_factor(const ConceptRegistry& registry, const EditSpec& spec, const std::string& label) {
  if (label == spec.target_label) return spec.strength;
  const double theta = angular_distance(registry.at(label).centroid, registry.at(spec.target_label).centroid);
  return spec.strength * edit_kernel(spec.kernel, theta / spec.radius);
}

// Moves every centroid along the chord toward U and renormalizes. Concepts
// the kernel leaves untouched keep their centroid bit for bit; U is fixed.
inline ConceptRegistry simulate_edit(const ConceptRegistry& registry, const EditSpec& spec) {
  spec.validate();
  const ConceptEntry* target = registry.find(spec.target_label);
  if (!target) throw DomainError("simulate_edit: unknown target '" + spec.target_label + "'");
  if (target->cls != ConceptClass::unsafe)
    throw DomainError("simulate_edit: target '" + spec.target_label + "' is not an unsafe concept");

  const Vec& u = registry.unconditioned().vec();
  std::vector<ConceptEntry> entries = registry.entries();
  for (auto& e : entries) {
    const double f = edit_factor(registry, spec, e.label);
    if (f == 0.0) continue;
    if (f == 1.0) {
      e.centroid = Embedding(u);
      continue;
    }
    const Vec unit = normalized(e.centroid.values());
    Vec moved(unit.size());
    for (std::size_t i = 0; i < unit.size(); ++i) moved[i] = (1.0 - f) * unit[i] + f * u[i];
    if (!(norm(moved) > 0.0)) throw DomainError("simulate_edit: '" + e.label + "' collapsed to zero");
    e.centroid = Embedding(normalized(moved));
  }
  return ConceptRegistry(std::move(entries), registry.unconditioned());
}

// 100 * (cos(edited, U_edited) - cos(orig, U_orig)); positive means closer to U.
inline double delta_embedding(const Embedding& orig, const Embedding& edited, const Embedding& u_orig,
                              const Embedding& u_edited) {
  return 100.0 * (cosine_similarity(edited, u_edited) - cosine_similarity(orig, u_orig));
}

enum class SetReduction { mean, pairwise };

inline const char* to_string(SetReduction r) { return r == SetReduction::mean ? "mean" : "pairwise"; }

inline SetReduction set_reduction_from_string(const std::string& s) {
  if (s == "mean") return SetReduction::mean;
  if (s == "pairwise") return SetReduction::pairwise;
  throw ValidationError("unknown set reduction '" + s + "' (expected mean or pairwise)");
}

// Cosine between two sets of generated latents.
inline double set_cosine(std::span<const Vec> a, std::span<const Vec> b, SetReduction reduction = SetReduction::mean) {
  if (a.empty() || b.empty()) throw DomainError("set_cosine: empty sample set");
  if (reduction == SetReduction::mean) return cosine(mean_of(a), mean_of(b));
  double s = 0.0;
  for (const Vec& x : a)
    for (const Vec& y : b) s += cosine(x, y);
  return s / static_cast<double>(a.size() * b.size());
}

inline double delta_generated(std::span<const Vec> orig_r, std::span<const Vec> orig_u, std::span<const Vec> edit_r,
                              std::span<const Vec> edit_u, SetReduction reduction = SetReduction::mean) {
  return 100.0 * (set_cosine(edit_r, edit_u, reduction) - set_cosine(orig_r, orig_u, reduction));
}

// 1 - (alpha1 * unsafe_rate + alpha2 * proximal_delta), all on [0, 1].
inline double sadi_index(double mean_unsafe_rate, double mean_proximal_delta, double alpha1 = 0.5,
                         double alpha2 = 0.5) {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(mean_unsafe_rate) || !unit(mean_proximal_delta))
    throw DomainError("sadi_index: rates must lie in [0, 1]");
  if (!unit(alpha1) || !unit(alpha2) || std::abs(alpha1 + alpha2 - 1.0) > 1e-9)
    throw DomainError("sadi_index: alpha1 + alpha2 must equal 1");
  return 1.0 - (alpha1 * mean_unsafe_rate + alpha2 * mean_proximal_delta);
}

// ---------------------------------------------------------------------------
// Proximal sweep
// ---------------------------------------------------------------------------

enum class DisruptionRole { removed, proximal, control };

inline const char* to_string(DisruptionRole r) {
  switch (r) {
    case DisruptionRole::removed: return "removed";
    case DisruptionRole::proximal: return "proximal";
    case DisruptionRole::control: return "control";
  }
  return "?";
}

struct DisruptionRow {
  std::string label;
  DisruptionRole role = DisruptionRole::control;
  double angle = 0.0;  // radians from the removed concept, before the edit
  double delta_embedding = 0.0;
  double delta_generated = 0.0;
  std::optional<double> delta_compactness;
};

struct DisruptionReport {
  EditSpec spec;
  std::vector<DisruptionRow> rows;
  double mean_removed_embedding = 0.0;
  double mean_proximal_embedding = 0.0;
  double mean_removed_generated = 0.0;
  double mean_proximal_generated = 0.0;
  std::optional<double> mean_delta_compactness;  // over removed and proximal rows
};

struct DisruptionOptions {
  double gamma = 7.5;
  std::vector<std::string> controls;  // empty: other unsafe classes plus the target's safe counterpart
  SetReduction reduction = SetReduction::mean;
  bool clusters = true;
  unsigned jobs = 1;
};

// Concepts generate under condition_from_embedding against the unedited
// anchors: an edit changes what the encoder emits for a prompt, not what each
// region of the world depicts. A null embedding is the unguided route.
inline std::vector<Vec> generate_set(const GaussianMixtureWorld& world, const ConceptRegistry& anchors,
                                     const Embedding* embedding, const NoiseSchedule& schedule, double gamma,
                                     std::size_t n_samples, std::uint64_t seed, unsigned jobs = 1) {
  std::optional<Vec> cond;
  if (embedding) cond = condition_from_embedding(world, anchors, *embedding);
  const WorldPredictor predictor{&world, &schedule};
  std::vector<Vec> out(n_samples);
  parallel_for(n_samples, jobs, [&](std::size_t i) {
    out[i] = generate(schedule, predictor, cond ? &*cond : nullptr, gamma, derive_seed(seed, i), world.latent_dim())
                 .latent;
  });
  return out;
}

inline std::vector<std::string> default_controls(const ConceptRegistry& registry, const std::string& target) {
  std::vector<std::string> out;
  for (const auto& l : registry.labels(ConceptClass::unsafe))
    if (l != target) out.push_back(l);
  out.push_back(registry.safe_counterpart_of(target).label);
  return out;
}

// Delta(compactness) for f(x) ∪ f(U), base versus edited, measured in a
// 2-component PCA plane fitted jointly over both unions.
inline double union_delta_compactness(std::span<const Vec> base_x, std::span<const Vec> edit_x,
                                      std::span<const Vec> unguided) {
  std::vector<Vec> base(base_x.begin(), base_x.end()), edit(edit_x.begin(), edit_x.end());
  base.insert(base.end(), unguided.begin(), unguided.end());
  edit.insert(edit.end(), unguided.begin(), unguided.end());
  std::vector<Vec> joint = base;
  joint.insert(joint.end(), edit.begin(), edit.end());
  const PcaBasis basis = pca(joint, std::min<std::size_t>(2, joint.front().size()));
  return delta_compactness(basis.project_all(base), basis.project_all(edit));
}

inline DisruptionReport proximal_sweep(const ConceptRegistry& registry, const EditSpec& spec,
                                       const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                                       std::size_t n_samples, std::uint64_t seed, const DisruptionOptions& opt = {}) {
  spec.validate();
  if (n_samples < 1) throw ValidationError("proximal_sweep: need at least one sample per concept");
  const ConceptEntry& target = registry.at(spec.target_label);
  if (target.cls != ConceptClass::unsafe)
    throw DomainError("proximal_sweep: target '" + spec.target_label + "' is not an unsafe concept");
  if (target.proximal_labels.empty())
    throw DomainError("proximal_sweep: target '" + spec.target_label + "' has no proximal concepts");
  world.require_bound_to(registry);

  const ConceptRegistry edited = simulate_edit(registry, spec);
  const Embedding& u = registry.unconditioned();
  const Embedding& u_hat = edited.unconditioned();

  DisruptionReport report;
  report.spec = spec;
  report.rows.push_back({target.label, DisruptionRole::removed});
  for (const auto& p : target.proximal_labels) report.rows.push_back({p, DisruptionRole::proximal});
  for (const auto& c : opt.controls.empty() ? default_controls(registry, target.label) : opt.controls) {
    registry.at(c);
    report.rows.push_back({c, DisruptionRole::control});
  }

  const std::vector<Vec> unguided = generate_set(world, registry, nullptr, schedule, opt.gamma, n_samples, seed, opt.jobs);
  for (auto& row : report.rows) {
    const Embedding& e = registry.at(row.label).centroid;
    const Embedding& e_hat = edited.at(row.label).centroid;
    row.angle = row.label == target.label ? 0.0 : angular_distance(e, target.centroid);
    row.delta_embedding = delta_embedding(e, e_hat, u, u_hat);
    const auto base = generate_set(world, registry, &e, schedule, opt.gamma, n_samples, seed, opt.jobs);
    const auto after = e_hat == e ? base
                                  : generate_set(world, registry, &e_hat, schedule, opt.gamma, n_samples, seed, opt.jobs);
    row.delta_generated = delta_generated(base, unguided, after, unguided, opt.reduction);
    if (opt.clusters && row.role != DisruptionRole::control)
      row.delta_compactness = union_delta_compactness(base, after, unguided);
  }

  std::size_t n_prox = 0;
  double dc = 0.0;
  std::size_t n_dc = 0;
  for (const auto& row : report.rows) {
    if (row.role == DisruptionRole::removed) {
      report.mean_removed_embedding = row.delta_embedding;
      report.mean_removed_generated = row.delta_generated;
    } else if (row.role == DisruptionRole::proximal) {
      report.mean_proximal_embedding += row.delta_embedding;
      report.mean_proximal_generated += row.delta_generated;
      ++n_prox;
    }
    if (row.delta_compactness) {
      dc += *row.delta_compactness;
      ++n_dc;
    }
  }
  report.mean_proximal_embedding /= static_cast<double>(n_prox);
  report.mean_proximal_generated /= static_cast<double>(n_prox);
  if (n_dc) report.mean_delta_compactness = dc / static_cast<double>(n_dc);
  return report;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string format_fixed(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << (v == 0.0 ? 0.0 : v);
  return os.str();
}

inline std::string disruption_csv(const DisruptionReport& r) {
  std::string out = "label,role,angle,delta_embedding,delta_generated,delta_compactness\n";
  for (const auto& row : r.rows) {
    std::string label = row.label;
    if (label.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : label) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      label = q + "\"";
    }
    out += label + "," + to_string(row.role) + "," + format_fixed(row.angle) + "," + format_fixed(row.delta_embedding) +
           "," + format_fixed(row.delta_generated) + "," +
           (row.delta_compactness ? format_fixed(*row.delta_compactness) : std::string()) + "\n";
  }
  return out;
}

inline nlohmann::json disruption_to_json(const DisruptionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json j = {{"label", row.label},
                        {"role", to_string(row.role)},
                        {"angle", row.angle},
                        {"delta_embedding", row.delta_embedding},
                        {"delta_generated", row.delta_generated}};
    j["delta_compactness"] = row.delta_compactness ? nlohmann::json(*row.delta_compactness) : nlohmann::json(nullptr);
    rows.push_back(std::move(j));
  }
  return {{"target", r.spec.target_label},
          {"strength", r.spec.strength},
          {"radius", r.spec.radius},
          {"kernel", to_string(r.spec.kernel)},
          {"mean_removed_embedding", r.mean_removed_embedding},
          {"mean_proximal_embedding", r.mean_proximal_embedding},
          {"mean_removed_generated", r.mean_removed_generated},
          {"mean_proximal_generated", r.mean_proximal_generated},
          {"mean_delta_compactness",
           r.mean_delta_compactness ? nlohmann::json(*r.mean_delta_compactness) : nlohmann::json(nullptr)},
          {"rows", std::move(rows)}};
}

}  // namespace safegen
