#pragma once

// Small dense-vector helpers shared by every module. Vectors here are short
// (a few hundred entries at most) so plain loops over std::vector are enough.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "safegen/errors.hpp"

namespace safegen {

using Vec = std::vector<double>;

inline void require_same_size(std::span<const double> a, std::span<const double> b,
                              const char* what) {
  if (a.size() != b.size()) {
    throw DomainError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// Cosine of the angle between a and b, clamped to [-1, 1].
inline double cosine(std::span<const double> a, std::span<const double> b) {
  require_same_size(a, b, "cosine");
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DomainError("cosine: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Vec scaled(std::span<const double> a, double s) {
  Vec out(a.begin(), a.end());
  for (double& v : out) v *= s;
  return out;
}

inline Vec normalized(std::span<const double> a) {
  const double n = norm(a);
  if (!(n > 0.0)) throw DomainError("normalized: zero-norm vector");
  return scaled(a, 1.0 / n);
}

// Componentwise mean of equally sized vectors.
inline Vec mean_of(std::span<const Vec> rows) {
  if (rows.empty()) throw DomainError("mean_of: empty set");
  Vec m(rows.front().size(), 0.0);
  for (const Vec& r : rows) {
    require_same_size(m, r, "mean_of");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += r[i];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& v : m) v *= inv;
  return m;
}

// log(sum(exp(x))) without overflow.
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -INFINITY;
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace safegen
