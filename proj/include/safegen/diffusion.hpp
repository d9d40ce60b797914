#pragma once

// Conditional denoising sampler with classifier-free guidance, generic over
// the noise predictor.
//
// Time convention: forward noise levels run t = 0..T with alpha_bar(0) = 1.
// A LatentState counts completed reverse steps, so state.t = s denoises from
// noise level T - s to T - s - 1. The final reverse step (s = T - 1) injects
// no noise.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "safegen/errors.hpp"
#include "safegen/linalg.hpp"
#include "safegen/random.hpp"

namespace safegen {

// ddpm: ancestral posterior-mean update plus sqrt(beta_t) * noise.
// ddim: deterministic (eta = 0) update; the noise draw is accepted and ignored.
enum class Sampler { ddpm, ddim };

inline const char* to_string(Sampler s) { return s == Sampler::ddpm ? "ddpm" : "ddim"; }

inline Sampler sampler_from_string(const std::string& s) {
  if (s == "ddpm") return Sampler::ddpm;
  if (s == "ddim") return Sampler::ddim;
  throw ValidationError("unknown sampler '" + s + "' (expected ddpm or ddim)");
}

struct NoiseSchedule {
  int steps = 0;
  Vec beta;       // beta[t-1] for noise level t = 1..steps
  Vec alpha_bar;  // cumulative products, same indexing
  Sampler sampler = Sampler::ddpm;

  double alpha_bar_at(int t) const {
    if (t < 0 || t > steps) throw DomainError("noise level " + std::to_string(t) + " out of range");
    return t == 0 ? 1.0 : alpha_bar[static_cast<std::size_t>(t - 1)];
  }

  double beta_at(int t) const {
    if (t < 1 || t > steps) throw DomainError("noise level " + std::to_string(t) + " out of range");
    return beta[static_cast<std::size_t>(t - 1)];
  }
};

inline NoiseSchedule make_schedule(int steps, double beta_start, double beta_end, Sampler sampler = Sampler::ddpm) {
  if (steps < 1) throw DomainError("make_schedule: steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw DomainError("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.sampler = sampler;
  s.beta.resize(static_cast<std::size_t>(steps));
  s.alpha_bar.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - b;
    s.beta[static_cast<std::size_t>(i)] = b;
    s.alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

struct LatentState {
  Vec z;
  int t = 0;  // reverse steps completed
};

// Opaque conditioning payload handed to the predictor (for the mixture world,
// a probability vector over its components). nullptr means unconditional.
using Condition = Vec;

template <class P>
concept NoisePredictor = requires(const P& p, std::span<const double> z, int t, const Condition* c) {
  { p(z, t, c) } -> std::convertible_to<Vec>;
};

// Classifier-free guidance: eps_u + gamma * (eps_c - eps_u).
inline Vec combine_guidance(std::span<const double> uncond, std::span<const double> cond, double gamma) {
  require_same_size(uncond, cond, "guided_noise");
  Vec out(uncond.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + gamma * (cond[i] - uncond[i]);
  return out;
}

// A predictor may evaluate the guided combination itself in one pass.
template <class P>
concept FusedGuidancePredictor =
    requires(const P& p, std::span<const double> z, int t, const Condition& c, double gamma) {
      { p.guided(z, t, c, gamma) } -> std::convertible_to<Vec>;
    };

template <NoisePredictor P>
Vec guided_noise(const P& predictor, std::span<const double> z, int t, const Condition& condition, double gamma) {
  if (!std::isfinite(gamma)) throw DomainError("guided_noise: gamma must be finite");
  if constexpr (FusedGuidancePredictor<P>) {
    Vec out = predictor.guided(z, t, condition, gamma);
    if (out.size() != z.size()) throw DomainError("guided_noise: predictor output dimension does not match latent");
    return out;
  } else {
    const Vec u = predictor(z, t, nullptr);
    const Vec c = predictor(z, t, &condition);
    if (u.size() != z.size() || c.size() != z.size())
      throw DomainError("guided_noise: predictor output dimension does not match latent");
    return combine_guidance(u, c, gamma);
  }
}

// One reverse update from a noise prediction already evaluated at state.
inline LatentState denoise_update(const NoiseSchedule& schedule, const LatentState& state,
                                  std::span<const double> eps, std::span<const double> noise_draw) {
  if (state.t < 0 || state.t >= schedule.steps)
    throw DomainError("sample_step: step " + std::to_string(state.t) + " out of range");
  require_same_size(state.z, eps, "sample_step");
  const int level = schedule.steps - state.t;
  const double ab = schedule.alpha_bar_at(level);
  const double ab_prev = schedule.alpha_bar_at(level - 1);
  const bool last = level == 1;

  LatentState next{Vec(state.z.size()), state.t + 1};
  if (schedule.sampler == Sampler::ddpm) {
    require_same_size(state.z, noise_draw, "sample_step");
    const double beta = schedule.beta_at(level);
    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double sigma = last ? 0.0 : std::sqrt(beta);
    for (std::size_t i = 0; i < next.z.size(); ++i)
      next.z[i] = inv_sqrt_alpha * (state.z[i] - coef * eps[i]) + sigma * noise_draw[i];
  } else {
    const double sa = std::sqrt(ab), s1 = std::sqrt(1.0 - ab);
    const double sa_prev = std::sqrt(ab_prev), s1_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < next.z.size(); ++i) {
      const double x0 = (state.z[i] - s1 * eps[i]) / sa;
      next.z[i] = sa_prev * x0 + s1_prev * eps[i];
    }
  }
  return next;
}

template <NoisePredictor P>
LatentState sample_step(const NoiseSchedule& schedule, const P& predictor, const LatentState& state,
                        const Condition* condition, double gamma, std::span<const double> noise_draw) {
  if (state.t < 0 || state.t >= schedule.steps)
    throw DomainError("sample_step: step " + std::to_string(state.t) + " out of range");
  const int level = schedule.steps - state.t;
  const Vec eps = condition ? guided_noise(predictor, state.z, level, *condition, gamma)
                            : predictor(state.z, level, nullptr);
  if (eps.size() != state.z.size()) throw DomainError("sample_step: predictor output dimension mismatch");
  return denoise_update(schedule, state, eps, noise_draw);
}

// Initial latent followed by one standard-normal draw per reverse step, all
// from one seeded stream. Every sampler in this library consumes randomness
// in this order so branches started from the same seed stay aligned. The
// deterministic sampler uses only the initial latent and skips the per-step
// draws.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::size_t dim) : rng_(seed), dim_(dim) {}

  Vec initial() { return rng_.normal_vector(dim_); }
  void next(std::span<double> out) { rng_.fill_normal(out); }

 private:
  Rng rng_;
  std::size_t dim_;
};

struct GenerationResult {
  Vec initial_noise;
  Vec latent;
  std::vector<Vec> states;  // z after every step, only when requested
};

// Latents are images in the toy world; decoding is the identity.
struct IdentityDecoder {
  Vec operator()(Vec z) const { return z; }
};

template <NoisePredictor P>
GenerationResult generate(const NoiseSchedule& schedule, const P& predictor, const Condition* condition,
                          double gamma, std::uint64_t seed, std::size_t latent_dim, bool keep_states = false) {
  if (latent_dim == 0) throw DomainError("generate: latent dimension must be >= 1");
  NoiseStream noise(seed, latent_dim);
  GenerationResult out;
  out.initial_noise = noise.initial();
  LatentState state{out.initial_noise, 0};
  Vec xi(latent_dim);
  if (keep_states) out.states.reserve(static_cast<std::size_t>(schedule.steps));
  for (int s = 0; s < schedule.steps; ++s) {
    if (schedule.sampler == Sampler::ddpm) noise.next(xi);
    state = sample_step(schedule, predictor, state, condition, gamma, xi);
    if (keep_states) out.states.push_back(state.z);
  }
  out.latent = std::move(state.z);
  return out;
}

}  // namespace safegen
