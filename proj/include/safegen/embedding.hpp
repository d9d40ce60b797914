#pragma once

#include <cmath>
#include <span>
#include <utility>

#include "safegen/errors.hpp"
#include "safegen/linalg.hpp"

namespace safegen {

// A pooled d-dimensional text-encoder projection. Components are always finite.
class Embedding {
 public:
  Embedding() = default;

  explicit Embedding(Vec values) : values_(std::move(values)) {
    if (values_.empty()) throw DomainError("Embedding: dimension must be >= 1");
    if (!all_finite(values_)) throw DomainError("Embedding: non-finite component");
  }

  std::size_t dim() const noexcept { return values_.size(); }
  double norm() const { return safegen::norm(values_); }
  const Vec& vec() const noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  Vec values_;
};

inline double cosine_similarity(const Embedding& a, const Embedding& b) {
  return cosine(a.values(), b.values());
}

inline Embedding compute_centroid(std::span<const Embedding> samples) {
  if (samples.empty()) throw DomainError("compute_centroid: empty sample list");
  const std::size_t d = samples.front().dim();
  Vec sum(d, 0.0);
  for (const Embedding& e : samples) {
    if (e.dim() != d) throw DomainError("compute_centroid: mixed dimensions");
    for (std::size_t i = 0; i < d; ++i) sum[i] += e[i];
  }
  for (double& v : sum) v /= static_cast<double>(samples.size());
  return Embedding(std::move(sum));
}

}  // namespace safegen
