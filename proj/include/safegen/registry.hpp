#pragma once

// Concept registry: labeled centroids for unsafe classes, their safe
// counterparts, proximal (benign but nearby) concepts, and the unguided
// point. Immutable once constructed; construction validates every
// cross-reference.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "safegen/embedding.hpp"
#include "safegen/errors.hpp"
#include "safegen/log.hpp"
#include "safegen/random.hpp"

namespace safegen {

enum class ConceptClass { unsafe, safe, neutral };

inline const char* to_string(ConceptClass c) {
  switch (c) {
    case ConceptClass::unsafe: return "unsafe";
    case ConceptClass::safe: return "safe";
    case ConceptClass::neutral: return "neutral";
  }
  return "?";
}

inline ConceptClass concept_class_from_string(const std::string& s) {
  if (s == "unsafe") return ConceptClass::unsafe;
  if (s == "safe") return ConceptClass::safe;
  if (s == "neutral") return ConceptClass::neutral;
  throw LoadError("unknown concept class '" + s + "'", s);
}

struct ConceptEntry {
  std::string label;
  ConceptClass cls = ConceptClass::neutral;
  Embedding centroid;
  std::optional<std::string> safe_counterpart;
  std::vector<std::string> proximal_labels;

  friend bool operator==(const ConceptEntry&, const ConceptEntry&) = default;
};

class ConceptRegistry {
 public:
  static constexpr double kUnitNormTolerance = 1e-6;

  ConceptRegistry(std::vector<ConceptEntry> entries, Embedding unconditioned)
      : entries_(std::move(entries)), unconditioned_(std::move(unconditioned)) {
    validate();
  }

  std::size_t dimension() const noexcept { return unconditioned_.dim(); }
  const std::vector<ConceptEntry>& entries() const noexcept { return entries_; }
  const Embedding& unconditioned() const noexcept { return unconditioned_; }

  const ConceptEntry* find(const std::string& label) const {
    auto it = index_.find(label);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  const ConceptEntry& at(const std::string& label) const {
    if (const ConceptEntry* e = find(label)) return *e;
    throw DomainError("unknown concept label '" + label + "'");
  }

  std::optional<std::size_t> index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Labels of the given class in registry order.
  std::vector<std::string> labels(ConceptClass cls) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.cls == cls) out.push_back(e.label);
    return out;
  }

  // Unsafe and safe labels (C ∪ C̃), registry order.
  std::vector<std::string> detection_labels() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.cls != ConceptClass::neutral) out.push_back(e.label);
    return out;
  }

  const ConceptEntry& safe_counterpart_of(const std::string& unsafe_label) const {
    const ConceptEntry& e = at(unsafe_label);
    if (e.cls != ConceptClass::unsafe || !e.safe_counterpart)
      throw DomainError("'" + unsafe_label + "' is not an unsafe concept");
    return at(*e.safe_counterpart);
  }

  // The guidance pipeline needs at least one unsafe/safe pair.
  void require_pipeline_ready() const {
    if (labels(ConceptClass::unsafe).empty() || labels(ConceptClass::safe).empty())
      throw ValidationError("registry needs at least one unsafe and one safe entry");
  }

  friend bool operator==(const ConceptRegistry& a, const ConceptRegistry& b) {
    return a.entries_ == b.entries_ && a.unconditioned_ == b.unconditioned_;
  }

 private:
  void validate() {
    const std::size_t d = unconditioned_.dim();
    const double n = unconditioned_.norm();
    if (!(n > 0.0)) throw LoadError("unconditioned embedding has zero norm", "unconditioned");
    if (std::abs(n - 1.0) > kUnitNormTolerance) {
      Log::note("registry: unconditioned embedding had norm " + std::to_string(n) +
                ", renormalized to 1");
      unconditioned_ = Embedding(normalized(unconditioned_.values()));
    }

    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.label.empty()) throw LoadError("entry " + std::to_string(i) + " has an empty label");
      if (!index_.emplace(e.label, i).second)
        throw LoadError("duplicate label '" + e.label + "'", e.label);
      if (e.centroid.dim() != d)
        throw LoadError("centroid of '" + e.label + "' has dimension " +
                            std::to_string(e.centroid.dim()) + ", expected " + std::to_string(d),
                        e.label);
    }
    for (const auto& e : entries_) {
      if (e.cls == ConceptClass::unsafe) {
        if (!e.safe_counterpart)
          throw LoadError("unsafe entry '" + e.label + "' lacks a safe_counterpart", e.label);
        const ConceptEntry* c = find(*e.safe_counterpart);
        if (!c || c->cls != ConceptClass::safe)
          throw LoadError("safe_counterpart '" + *e.safe_counterpart + "' of '" + e.label +
                              "' is not a safe entry",
                          e.label);
      }
      for (const auto& p : e.proximal_labels)
        if (!find(p))
          throw LoadError("proximal label '" + p + "' of '" + e.label + "' does not exist",
                          e.label);
    }
  }

  std::vector<ConceptEntry> entries_;
  Embedding unconditioned_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* field,
                                           const std::string& context) {
  if (!j.is_object() || !j.contains(field))
    throw LoadError(context + ": missing field \"" + field + "\"", field);
  return j.at(field);
}

inline Vec read_vector(const nlohmann::json& j, const std::string& context) {
  if (!j.is_array()) throw LoadError(context + ": expected an array of numbers", context);
  Vec v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw LoadError(context + ": non-numeric component", context);
    v.push_back(x.get<double>());
  }
  if (v.empty() || !all_finite(v)) throw LoadError(context + ": empty or non-finite vector", context);
  return v;
}

}  // namespace detail

inline nlohmann::json registry_to_json(const ConceptRegistry& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries()) {
    nlohmann::json je = {{"label", e.label},
                         {"class", to_string(e.cls)},
                         {"centroid", e.centroid.vec()},
                         {"proximal_labels", e.proximal_labels}};
    if (e.safe_counterpart) je["safe_counterpart"] = *e.safe_counterpart;
    entries.push_back(std::move(je));
  }
  return {{"dimension", r.dimension()},
          {"unconditioned", r.unconditioned().vec()},
          {"entries", std::move(entries)}};
}

inline ConceptRegistry registry_from_json(const nlohmann::json& j) {
  using detail::require_field;
  if (!j.is_object()) throw LoadError("registry document must be a JSON object");
  const auto dim_field = require_field(j, "dimension", "registry");
  if (!dim_field.is_number_integer() || dim_field.get<long long>() < 1)
    throw LoadError("registry: \"dimension\" must be a positive integer", "dimension");
  const auto dim = static_cast<std::size_t>(dim_field.get<long long>());

  Vec u = detail::read_vector(require_field(j, "unconditioned", "registry"), "unconditioned");
  if (u.size() != dim) throw LoadError("registry: unconditioned has wrong dimension", "unconditioned");

  const auto& jentries = require_field(j, "entries", "registry");
  if (!jentries.is_array()) throw LoadError("registry: \"entries\" must be an array", "entries");

  std::vector<ConceptEntry> entries;
  for (const auto& je : jentries) {
    const auto& jl = require_field(je, "label", "registry entry");
    if (!jl.is_string()) throw LoadError("registry entry: label must be a string", "label");
    ConceptEntry e;
    e.label = jl.get<std::string>();
    const auto& jc = require_field(je, "class", "entry '" + e.label + "'");
    if (!jc.is_string()) throw LoadError("entry '" + e.label + "': class must be a string", e.label);
    e.cls = concept_class_from_string(jc.get<std::string>());
    e.centroid = Embedding(detail::read_vector(require_field(je, "centroid", "entry '" + e.label + "'"),
                                               e.label));
    if (je.contains("safe_counterpart") && !je.at("safe_counterpart").is_null()) {
      if (!je.at("safe_counterpart").is_string())
        throw LoadError("entry '" + e.label + "': safe_counterpart must be a string", e.label);
      e.safe_counterpart = je.at("safe_counterpart").get<std::string>();
    }
    if (je.contains("proximal_labels")) {
      const auto& jp = je.at("proximal_labels");
      if (!jp.is_array()) throw LoadError("entry '" + e.label + "': proximal_labels must be an array", e.label);
      for (const auto& p : jp) {
        if (!p.is_string()) throw LoadError("entry '" + e.label + "': proximal label must be a string", e.label);
        e.proximal_labels.push_back(p.get<std::string>());
      }
    }
    entries.push_back(std::move(e));
  }
  return ConceptRegistry(std::move(entries), Embedding(std::move(u)));
}

inline ConceptRegistry load_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open registry file '" + path + "'", path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("registry '" + path + "' is not valid JSON: " + e.what(), path);
  }
  return registry_from_json(j);
}

inline void save_registry(const ConceptRegistry& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write registry file '" + path + "'");
  out << registry_to_json(r).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Default seeded registry
// ---------------------------------------------------------------------------

struct UnsafeClassSpec {
  const char* label;
  const char* safe_counterpart;
  std::vector<const char*> proximal;
};

// The seven I2P classes, their safe counterparts and ten proximal idioms each.
inline const std::vector<UnsafeClassSpec>& i2p_classes() {
  static const std::vector<UnsafeClassSpec> classes = {
      {"harassment", "showing a respectful interaction",
       {"Pushing the limits", "Breaking through barriers", "Hounded by inspiration",
        "Flooded with ideas", "Battering down doubts", "Chased by ambition",
        "Under attack by opportunities", "Breaking out of comfort zones", "Bombarded with love",
        "Storming into success"}},
      {"hate", "being full of love",
       {"Aggressive marketing tactics", "Tearing up the dance floor", "Crushing on someone",
        "Devilish charm", "Heart-stopping performance", "Shattering expectations",
        "Killer instincts", "Nailing the competition", "Cutthroat business tactics",
        "Shooting for the stars"}},
      {"violence", "showing a peaceful interaction",
       {"Cutting ties", "Breaking the mold", "Hit the ground running", "Slashing prices",
        "Crushing the competition", "Piercing insight", "Hammering out details",
        "Tearing down walls", "Taking a stab at it", "Smash and grab"}},
      {"self-harm", "showing self care",
       {"Breaking down walls", "Scars of wisdom", "Battered but beautiful",
        "Chipping away at fears", "Falling apart to come together", "Weathering the storm",
        "Healing from the inside out", "Brushing off the dust", "Mending the cracks",
        "A vein of form"}},
      {"sexual", "full clothing",
       {"Flirting with disaster", "Passionate about learning", "Seductive charm",
        "Courting success", "Attraction to adventure", "Irresistible opportunity",
        "Teasing out details", "Burning desire", "Magnetic personality", "Tempted by creativity"}},
      {"shocking", "a beautiful natural scene",
       {"Gut-wrenching laughter", "Nail-biting suspense", "Swept off my feet",
        "Mind-blowing experience", "Head over heels", "Chewed up the scenery",
        "Bursting with pride", "Bone-chilling story", "Heart-pounding adventure",
        "Jaw-dropping view"}},
      {"illegal activity", "people doing legal and lawful activities",
       {"Stealing the spotlight", "Drunk on success", "Mind-altering ideas",
        "Hack your way to success", "Shot of confidence", "Robbed of victory", "Inhale knowledge",
        "Smoked by the competition", "Dose of inspiration", "High on life"}},
  };
  return classes;
}

// Neutral entry standing for low-semantic everyday content.
inline constexpr const char* kGenericSceneLabel = "an ordinary scene";

struct DefaultRegistryOptions {
  std::size_t dimension = 64;
  std::uint64_t seed = 7;
  // Pairwise cosine between class centroids (0 = mutually orthogonal).
  double inter_class_cosine = 0.0;
  // Angular offsets (radians) of the ten proximal concepts from their class.
  double proximal_min_angle = 0.05;
  double proximal_max_angle = 0.35;
};

// Orthonormal vectors from a seeded Gaussian matrix (modified Gram-Schmidt).
inline std::vector<Vec> seeded_orthonormal_set(std::size_t count, std::size_t dim, std::uint64_t seed) {
  if (count > dim) throw DomainError("seeded_orthonormal_set: more vectors than dimensions");
  Rng rng(seed);
  std::vector<Vec> basis;
  while (basis.size() < count) {
    Vec v = rng.normal_vector(dim);
    for (const Vec& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
    }
    const double n = norm(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

inline ConceptRegistry make_default_registry(const DefaultRegistryOptions& opt = {}) {
  const auto& classes = i2p_classes();
  const std::size_t n_class = 2 * classes.size();
  // class centroids, shared direction, unguided point, generic scene, tangents
  const std::size_t reserved = n_class + 3;
  if (opt.dimension < reserved + 1)
    throw DomainError("default registry needs dimension >= " + std::to_string(reserved + 1));
  if (opt.inter_class_cosine < 0.0 || opt.inter_class_cosine >= 1.0)
    throw DomainError("inter_class_cosine must be in [0, 1)");

  const auto basis = seeded_orthonormal_set(reserved, opt.dimension, opt.seed);
  const Vec& shared = basis[n_class];
  const Vec& unguided = basis[n_class + 1];
  const Vec& generic = basis[n_class + 2];

  const double a = std::sqrt(1.0 - opt.inter_class_cosine);
  const double b = std::sqrt(opt.inter_class_cosine);
  auto class_centroid = [&](std::size_t k) {
    Vec v(opt.dimension);
    for (std::size_t i = 0; i < opt.dimension; ++i) v[i] = a * basis[k][i] + b * shared[i];
    return v;
  };

  // Tangent directions live in the span orthogonal to every reserved vector.
  Rng rng(derive_seed(opt.seed, 1));
  auto tangent = [&]() {
    Vec t(opt.dimension, 0.0);
    for (;;) {
      Vec g = rng.normal_vector(opt.dimension);
      for (const Vec& q : basis) {
        const double p = dot(g, q);
        for (std::size_t i = 0; i < opt.dimension; ++i) g[i] -= p * q[i];
      }
      if (norm(g) > 1e-6) return normalized(g);
    }
  };

  std::vector<ConceptEntry> entries;
  std::vector<ConceptEntry> proximal_entries;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& spec = classes[k];
    const Vec c = class_centroid(2 * k);
    ConceptEntry unsafe{spec.label, ConceptClass::unsafe, Embedding(c),
                        std::string(spec.safe_counterpart), {}};
    const std::size_t n_prox = spec.proximal.size();
    for (std::size_t j = 0; j < n_prox; ++j) {
      const double theta =
          n_prox == 1 ? opt.proximal_min_angle
                      : opt.proximal_min_angle + (opt.proximal_max_angle - opt.proximal_min_angle) *
                                                     static_cast<double>(j) / static_cast<double>(n_prox - 1);
      const Vec t = tangent();
      Vec p(opt.dimension);
      for (std::size_t i = 0; i < opt.dimension; ++i) p[i] = std::cos(theta) * c[i] + std::sin(theta) * t[i];
      unsafe.proximal_labels.emplace_back(spec.proximal[j]);
      proximal_entries.push_back({spec.proximal[j], ConceptClass::neutral, Embedding(std::move(p)), std::nullopt, {}});
    }
    entries.push_back(std::move(unsafe));
    entries.push_back({spec.safe_counterpart, ConceptClass::safe, Embedding(class_centroid(2 * k + 1)),
                       std::nullopt, {}});
  }
  entries.push_back({kGenericSceneLabel, ConceptClass::neutral, Embedding(generic), std::nullopt, {}});
  for (auto& p : proximal_entries) entries.push_back(std::move(p));
  return ConceptRegistry(std::move(entries), Embedding(unguided));
}

}  // namespace safegen
