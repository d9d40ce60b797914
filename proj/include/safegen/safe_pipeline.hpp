#pragma once

// Dual-latent reconstruction. Two denoising branches start from the same
// initial latent N0: one conditioned on the (unsafe) prompt embedding x, one on
// its safe counterpart x~. While the fused latent
//
//     F = w_x * N' + w_x~ * N~'
//
// keeps cosine similarity >= tau_gc with N0, both branches continue from F.
// Once the similarity drops below tau_gc the gate latches shut and only the
// x branch is advanced for the remaining steps.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safegen/diffusion.hpp"
#include "safegen/embedding.hpp"
#include "safegen/errors.hpp"
#include "safegen/registry.hpp"
#include "safegen/toy_world.hpp"

namespace safegen {

enum class FusionStrategy {
  synchronized,  // both branches continue from the fused latent while the gate is open
  independent,   // branches evolve separately; fusion only shapes the emitted latent
};

inline const char* to_string(FusionStrategy f) {
  return f == FusionStrategy::synchronized ? "synchronized" : "independent";
}

inline FusionStrategy fusion_strategy_from_string(const std::string& s) {
  if (s == "synchronized") return FusionStrategy::synchronized;
  if (s == "independent") return FusionStrategy::independent;
  throw ValidationError("unknown fusion strategy '" + s + "'");
}

struct SafetyConfig {
  double w_context = 0.05;  // w_x, global context preserving weight
  double w_safe = 0.95;     // w_x~, safe image generation weight
  double tau_gc = 0.95;     // global context preservation threshold
  double gamma = 7.5;
  int steps = 500;
  std::uint64_t seed = 0;
  double alpha1 = 0.5;  // SaDi weights
  double alpha2 = 0.5;
  FusionStrategy strategy = FusionStrategy::synchronized;
  bool latch = true;

  static constexpr double kSumTolerance = 1e-9;

  void validate() const {
    if (!(w_context >= 0.0) || !(w_safe >= 0.0)) throw ValidationError("fusion weights must be >= 0");
    if (std::abs(w_context + w_safe - 1.0) > kSumTolerance)
      throw ValidationError("fusion weights must sum to 1 (got " + std::to_string(w_context + w_safe) + ")");
    if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0) || std::abs(alpha1 + alpha2 - 1.0) > kSumTolerance)
      throw ValidationError("SaDi weights alpha1, alpha2 must be >= 0 and sum to 1");
    if (!std::isfinite(tau_gc) || tau_gc < -1.0) throw ValidationError("tau_gc must be finite and >= -1");
    if (!std::isfinite(gamma)) throw ValidationError("gamma must be finite");
    if (steps < 1) throw ValidationError("steps must be >= 1");
  }
};

struct StepRecord {
  int t = 0;
  double gate_similarity = 0.0;
  bool fused = false;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct GenerationTrace {
  std::vector<StepRecord> steps;
  std::optional<int> switch_step;  // first step whose gate test failed
  Vec final_latent;
  std::string condition_label;
  std::string safe_label;
  double tau_gc = 0.0;
  double w_context = 0.0;
  double w_safe = 0.0;
};

struct SafeGenerationResult {
  Vec latent;
  GenerationTrace trace;
};

// cos(N0, w_x N + w_x~ N~).
inline double gate_similarity(std::span<const double> n0, std::span<const double> n, std::span<const double> n_tilde,
                              double w_context, double w_safe) {
  require_same_size(n0, n, "gate_similarity");
  require_same_size(n0, n_tilde, "gate_similarity");
  Vec fused(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) fused[i] = w_context * n[i] + w_safe * n_tilde[i];
  if (!(norm(fused) > 0.0)) throw DomainError("gate_similarity: fused latent is zero");
  return cosine(n0, fused);
}

namespace detail {

// Weighted fusion. Equal components pass through untouched, so identical
// branches fuse to themselves bit-exactly for every weight pair.
inline void fuse_into(Vec& out, const Vec& a, const Vec& b, double wa, double wb) {
  out.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] == b[i] ? a[i] : wa * a[i] + wb * b[i];
}

}  // namespace detail

// Runs the dual-latent sampler with the world's exact noise predictor.
// Randomness is drawn exactly as `generate` draws it, so the pair (1, 0)
// reproduces the single-branch sampler on x bit for bit.
inline SafeGenerationResult dual_latent_generate(const Embedding& x_embed, const Embedding& x_safe_embed,
                                                 const SafetyConfig& config, const GaussianMixtureWorld& world,
                                                 const NoiseSchedule& schedule, const ConceptRegistry& registry) {
  config.validate();
  if (schedule.steps != config.steps)
    throw ValidationError("schedule has " + std::to_string(schedule.steps) + " steps, config asks for " +
                          std::to_string(config.steps));
  const Vec cond_x = condition_from_embedding(world, registry, x_embed);
  const Vec cond_s = condition_from_embedding(world, registry, x_safe_embed);
  const WorldPredictor predictor{&world, &schedule};
  const std::size_t dim = world.latent_dim();
  const bool synchronized = config.strategy == FusionStrategy::synchronized;

  NoiseStream noise(config.seed, dim);
  const Vec n0 = noise.initial();
  LatentState n{n0, 0}, n_tilde{n0, 0};
  bool gate_open = true;
  bool safe_branch_live = true;
  Vec xi(dim), fused;

  SafeGenerationResult out;
  auto& trace = out.trace;
  trace.tau_gc = config.tau_gc;
  trace.w_context = config.w_context;
  trace.w_safe = config.w_safe;
  trace.steps.reserve(static_cast<std::size_t>(schedule.steps));
  Vec emitted = n0;

  for (int s = 0; s < schedule.steps; ++s) {
    if (schedule.sampler == Sampler::ddpm) noise.next(xi);
    const int level = schedule.steps - s;

    LatentState a = denoise_update(schedule, n, guided_noise(predictor, n.z, level, cond_x, config.gamma), xi);

    if (!safe_branch_live) {
      n = std::move(a);
      emitted = n.z;
      trace.steps.push_back({s, cosine(n0, emitted), false});
      continue;
    }

    LatentState b = denoise_update(schedule, n_tilde, guided_noise(predictor, n_tilde.z, level, cond_s, config.gamma), xi);

    detail::fuse_into(fused, a.z, b.z, config.w_context, config.w_safe);
    if (!(norm(fused) > 0.0)) throw DomainError("dual_latent_generate: fused latent is zero");
    const double g = cosine(n0, fused);
    const bool pass = (gate_open || !config.latch) && g >= config.tau_gc;

    if (!pass && gate_open) {
      gate_open = false;
      trace.switch_step = s;
    }
    if (pass) gate_open = true;

    if (pass && synchronized) {
      n = LatentState{fused, a.t};
      n_tilde = LatentState{fused, b.t};
    } else {
      n = std::move(a);
      n_tilde = std::move(b);
    }
    emitted = pass ? fused : n.z;
    if (!pass && config.latch) safe_branch_live = false;
    trace.steps.push_back({s, g, pass});
  }
  out.latent = emitted;
  trace.final_latent = emitted;
  return out;
}

// Single-branch baseline under condition x (the same sampler with no fusion).
inline GenerationResult baseline_generate(const Embedding& x_embed, const SafetyConfig& config,
                                          const GaussianMixtureWorld& world, const NoiseSchedule& schedule,
                                          const ConceptRegistry& registry) {
  const Vec cond = condition_from_embedding(world, registry, x_embed);
  return generate(schedule, WorldPredictor{&world, &schedule}, &cond, config.gamma, config.seed, world.latent_dim());
}

// Fraction of steps spent fusing.
inline double gate_profile(const GenerationTrace& trace) {
  if (trace.steps.empty()) throw DomainError("gate_profile: empty trace");
  std::size_t fused = 0;
  for (const auto& r : trace.steps) fused += r.fused ? 1 : 0;
  return static_cast<double>(fused) / static_cast<double>(trace.steps.size());
}

inline nlohmann::json trace_to_json(const GenerationTrace& t, bool include_latent = true) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& r : t.steps) steps.push_back({{"t", r.t}, {"gate_similarity", r.gate_similarity}, {"fused", r.fused}});
  nlohmann::json j = {{"condition_label", t.condition_label},
                      {"safe_label", t.safe_label},
                      {"tau_gc", t.tau_gc},
                      {"w_context", t.w_context},
                      {"w_safe", t.w_safe},
                      {"switch_step", t.switch_step ? nlohmann::json(*t.switch_step) : nlohmann::json(nullptr)},
                      {"steps", std::move(steps)}};
  if (include_latent) j["final_latent"] = t.final_latent;
  return j;
}

inline GenerationTrace trace_from_json(const nlohmann::json& j) {
  using detail::require_field;
  GenerationTrace t;
  const auto& steps = require_field(j, "steps", "trace");
  if (!steps.is_array() || steps.empty()) throw LoadError("trace: \"steps\" must be a nonempty array", "steps");
  for (const auto& r : steps) {
    const auto& jt = require_field(r, "t", "trace step");
    const auto& jg = require_field(r, "gate_similarity", "trace step");
    const auto& jf = require_field(r, "fused", "trace step");
    if (!jt.is_number_integer() || !jg.is_number() || !jf.is_boolean())
      throw LoadError("trace: malformed step record", "steps");
    t.steps.push_back({jt.get<int>(), jg.get<double>(), jf.get<bool>()});
  }
  if (j.contains("switch_step") && j.at("switch_step").is_number_integer()) t.switch_step = j.at("switch_step").get<int>();
  if (j.contains("tau_gc") && j.at("tau_gc").is_number()) t.tau_gc = j.at("tau_gc").get<double>();
  if (j.contains("w_context") && j.at("w_context").is_number()) t.w_context = j.at("w_context").get<double>();
  if (j.contains("w_safe") && j.at("w_safe").is_number()) t.w_safe = j.at("w_safe").get<double>();
  if (j.contains("condition_label") && j.at("condition_label").is_string())
    t.condition_label = j.at("condition_label").get<std::string>();
  if (j.contains("safe_label") && j.at("safe_label").is_string()) t.safe_label = j.at("safe_label").get<std::string>();
  if (j.contains("final_latent")) t.final_latent = detail::read_vector(j.at("final_latent"), "final_latent");
  return t;
}

}  // namespace safegen
