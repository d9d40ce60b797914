#pragma once

// Second-order statistics over sets of generated latents: PCA, k-means,
// cluster compactness and a Frechet distance between Gaussian fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "safegen/errors.hpp"
#include "safegen/linalg.hpp"
#include "safegen/log.hpp"
#include "safegen/random.hpp"

namespace safegen {

namespace detail {

inline std::size_t uniform_dim(std::span<const Vec> data, const char* what) {
  if (data.empty()) throw DomainError(std::string(what) + ": empty data set");
  const std::size_t d = data.front().size();
  if (d == 0) throw DomainError(std::string(what) + ": zero-dimensional points");
  for (const Vec& x : data)
    if (x.size() != d) throw DomainError(std::string(what) + ": mixed dimensions");
  return d;
}

inline Eigen::MatrixXd to_matrix(std::span<const Vec> data) {
  const std::size_t d = data.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i][j];
  return m;
}

// Unbiased sample covariance (divides by N - 1; by 1 when N = 1).
inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  return (centered.transpose() * centered) / denom;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaBasis {
  std::vector<Vec> components;  // orthonormal, one per retained axis
  Vec explained_variance;       // descending
  Vec mean;

  Vec project(std::span<const double> x) const {
    require_same_size(x, mean, "PcaBasis::project");
    Vec out(components.size());
    for (std::size_t k = 0; k < components.size(); ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mean[i]) * components[k][i];
      out[k] = s;
    }
    return out;
  }

  std::vector<Vec> project_all(std::span<const Vec> xs) const {
    std::vector<Vec> out;
    out.reserve(xs.size());
    for (const Vec& x : xs) out.push_back(project(x));
    return out;
  }
};

// Top-k eigenvectors of the sample covariance. Each component is signed so
// that its largest-magnitude entry is positive.
inline PcaBasis pca(std::span<const Vec> data, std::size_t k) {
  const std::size_t d = detail::uniform_dim(data, "pca");
  if (data.size() < 2) throw DomainError("pca: need at least two points");
  if (k < 1 || k > d) throw DomainError("pca: k must be in [1, dimension]");
  const Eigen::MatrixXd x = detail::to_matrix(data);
  const Eigen::VectorXd mean = x.colwise().mean();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(detail::covariance(x, mean));
  if (eig.info() != Eigen::Success) throw DomainError("pca: eigendecomposition failed");

  PcaBasis out;
  out.mean.assign(mean.data(), mean.data() + mean.size());
  const auto n = static_cast<Eigen::Index>(d);
  for (std::size_t j = 0; j < k; ++j) {
    const Eigen::Index col = n - 1 - static_cast<Eigen::Index>(j);  // eigenvalues ascend
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.emplace_back(v.data(), v.data() + v.size());
    out.explained_variance.push_back(std::max(eig.eigenvalues()(col), 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct ClusterResult {
  std::vector<std::size_t> assignments;
  std::vector<Vec> centroids;
  double inertia = 0.0;
  int iterations = 0;
  Vec inertia_history;  // after every assignment pass
};

namespace detail {

inline std::size_t nearest_centroid(const Vec& x, const std::vector<Vec>& centroids, double* dist2 = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

inline std::vector<Vec> kmeanspp_init(std::span<const Vec> data, std::size_t k, Rng& rng) {
  std::vector<Vec> centers;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  centers.push_back(data[pick(rng.engine())]);
  std::vector<double> d2(data.size());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      nearest_centroid(data[i], centers, &d2[i]);
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (chosen = 0; chosen + 1 < data.size(); ++chosen) {
        r -= d2[chosen];
        if (r < 0.0) break;
      }
    } else {
      chosen = pick(rng.engine());
    }
    centers.push_back(data[chosen]);
  }
  return centers;
}

}  // namespace detail

// k-means++ seeding, then Lloyd iterations until the assignment stops
// changing or max_iters passes. A cluster that empties is reseeded at the
// point farthest from its current centroid.
inline ClusterResult kmeans(std::span<const Vec> data, std::size_t k, std::uint64_t seed, int max_iters = 100) {
  const std::size_t d = detail::uniform_dim(data, "kmeans");
  if (k < 1) throw DomainError("kmeans: k must be >= 1");
  if (data.size() < k) throw DomainError("kmeans: fewer points than clusters");

  Rng rng(seed);
  ClusterResult r;
  r.centroids = detail::kmeanspp_init(data, k, rng);
  r.assignments.assign(data.size(), k);  // sentinel: nothing assigned yet
  std::vector<double> d2(data.size());

  for (int iter = 0; iter < std::max(max_iters, 1); ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t c = detail::nearest_centroid(data[i], r.centroids, &d2[i]);
      if (c != r.assignments[i]) changed = true;
      r.assignments[i] = c;
      inertia += d2[i];
    }
    r.inertia_history.push_back(inertia);
    r.inertia = inertia;
    r.iterations = iter + 1;
    if (!changed && iter > 0) break;

    std::vector<Vec> sums(k, Vec(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      ++counts[r.assignments[i]];
      for (std::size_t j = 0; j < d; ++j) sums[r.assignments[i]][j] += data[i][j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::distance(d2.begin(), std::max_element(d2.begin(), d2.end())));
        r.centroids[c] = data[far];
        d2[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) r.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
  }
  // Final inertia against the final centroids.
  double inertia = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    r.assignments[i] = detail::nearest_centroid(data[i], r.centroids, &d2[i]);
    inertia += d2[i];
  }
  if (inertia < r.inertia || r.inertia_history.empty()) r.inertia_history.push_back(inertia);
  r.inertia = inertia;
  return r;
}

// ---------------------------------------------------------------------------
// Compactness
// ---------------------------------------------------------------------------

// Mean Euclidean distance of the points to `centroid`.
inline double compactness(std::span<const Vec> points, std::span<const double> centroid) {
  if (points.empty()) throw DomainError("compactness: empty point set");
  double s = 0.0;
  for (const Vec& x : points) s += distance(x, centroid);
  return s / static_cast<double>(points.size());
}

inline double compactness(std::span<const Vec> points) { return compactness(points, mean_of(points)); }

// Positive when the edited set is tighter around its mean than the base set.
inline double delta_compactness(std::span<const Vec> base_points, std::span<const Vec> edited_points) {
  if (base_points.empty() || edited_points.empty()) throw DomainError("delta_compactness: empty point set");
  return compactness(base_points) - compactness(edited_points);
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits
// ---------------------------------------------------------------------------

inline constexpr double kFrechetRidge = 1e-6;

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of the
// matrix root is taken from the symmetric form S_a^{1/2} S_b S_a^{1/2}.
inline double frechet_distance(std::span<const Vec> set_a, std::span<const Vec> set_b) {
  const std::size_t d = detail::uniform_dim(set_a, "frechet_distance");
  if (detail::uniform_dim(set_b, "frechet_distance") != d) throw DomainError("frechet_distance: dimension mismatch");

  const Eigen::MatrixXd xa = detail::to_matrix(set_a), xb = detail::to_matrix(set_b);
  const Eigen::VectorXd ma = xa.colwise().mean(), mb = xb.colwise().mean();
  Eigen::MatrixXd ca = detail::covariance(xa, ma), cb = detail::covariance(xb, mb);
  const auto eye = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  if (set_a.size() < d + 1) {
    Log::note("frechet_distance: first set is rank deficient, adding ridge 1e-6");
    ca += kFrechetRidge * eye;
  }
  if (set_b.size() < d + 1) {
    Log::note("frechet_distance: second set is rank deficient, adding ridge 1e-6");
    cb += kFrechetRidge * eye;
  }

  auto psd_sqrt = [](const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return Eigen::MatrixXd(eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose());
  };
  const Eigen::MatrixXd ra = psd_sqrt(ca);
  const Eigen::MatrixXd inner = ra * cb * ra;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double fd = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_root;
  return std::isfinite(fd) ? std::max(fd, 0.0) : 0.0;
}

}  // namespace safegen
