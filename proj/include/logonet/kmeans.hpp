#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "logonet/rng.hpp"

namespace logonet {

using FeatureVector = std::vector<double>;
using FeatureDataset = std::vector<FeatureVector>;

struct KMeansTrainParams {
  std::int64_t iterations = 350;
  double subset_fraction = 0.1;

  void validate() const {
    if (iterations < 1) throw ArgumentError("KMeansTrainParams: iterations must be positive");
    if (subset_fraction <= 0.0 || subset_fraction > 1.0) {
      throw ArgumentError("KMeansTrainParams: subset_fraction must lie in (0, 1]");
    }
  }
};

inline double squared_distance(const FeatureVector& a, const FeatureVector& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

// Trained k-means model: centroid table plus nearest-centroid assignment
// (squared Euclidean, ties to the smallest index).
class KMeans {
 public:
  KMeans() = default;
  explicit KMeans(std::vector<FeatureVector> centroids) : centroids_(std::move(centroids)) {}

  std::int64_t k() const { return static_cast<std::int64_t>(centroids_.size()); }
  std::int64_t dim() const {
    return centroids_.empty() ? 0 : static_cast<std::int64_t>(centroids_.front().size());
  }
  const std::vector<FeatureVector>& centroids() const { return centroids_; }
  std::vector<FeatureVector>& centroids() { return centroids_; }

  std::int64_t assign(const FeatureVector& v) const {
    if (centroids_.empty()) throw ArgumentError("KMeans::assign: untrained model");
    if (v.size() != centroids_.front().size()) {
      throw ArgumentError("KMeans::assign: dimension mismatch");
    }
    std::int64_t best = 0;
    double best_d = squared_distance(v, centroids_[0]);
    for (std::size_t c = 1; c < centroids_.size(); ++c) {
      const double d = squared_distance(v, centroids_[c]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::int64_t>(c);
      }
    }
    return best;
  }

  // Sum of squared distances of every vector to its assigned centroid.
  double objective(const FeatureDataset& data) const {
    double acc = 0.0;
    for (const auto& v : data) acc += squared_distance(v, centroids_[assign(v)]);
    return acc;
  }

 private:
  std::vector<FeatureVector> centroids_;
};

namespace detail_kmeans {

// k-means++ seeding: first centroid uniform, each next sampled with
// probability proportional to the squared distance to the nearest chosen one.
inline std::vector<FeatureVector> kmeanspp_init(const FeatureDataset& data, std::int64_t k,
                                                Rng& rng) {
  const std::size_t n = data.size();
  std::vector<FeatureVector> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  centroids.push_back(data[rng.below(n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(data[i], centroids[0]);
  while (static_cast<std::int64_t>(centroids.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick;
    if (total <= 0.0) {
      pick = rng.below(n);
    } else {
      const double r = rng.uniform(0.0, total);
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(data[pick]);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(data[i], centroids.back()));
    }
  }
  return centroids;
}

// First m entries of a seeded permutation of [0, n): partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m,
                                                           Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  return idx;
}

}  // namespace detail_kmeans

// Mini-batch k-means: k-means++ seeding, then per iteration a fresh sample of
// ceil(fraction*n) vectors without replacement, each pulling its nearest
// centroid with the per-centroid running-mean rate 1/count. Counts persist
// across iterations, so with fraction=1 and k=1 the centroid is the exact
// running mean of everything seen: the dataset mean.
inline KMeans train_clusterer(const FeatureDataset& data, std::int64_t k,
                              const KMeansTrainParams& params, Rng& rng) {
  params.validate();
  if (data.empty()) throw ArgumentError("train_clusterer: empty dataset");
  if (k < 1) throw ArgumentError("train_clusterer: k must be positive");
  if (k > static_cast<std::int64_t>(data.size())) {
    throw ArgumentError("train_clusterer: k exceeds the number of vectors");
  }
  for (const auto& v : data) {
    if (v.size() != data.front().size()) {
      throw ArgumentError("train_clusterer: ragged dataset");
    }
  }

  std::vector<FeatureVector> centroids = detail_kmeans::kmeanspp_init(data, k, rng);
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(k), 0);
  KMeans model(centroids);
  const std::size_t n = data.size();
  const std::size_t m = static_cast<std::size_t>(
      std::ceil(params.subset_fraction * static_cast<double>(n)));
  for (std::int64_t it = 0; it < params.iterations; ++it) {
    const std::vector<std::size_t> batch =
        detail_kmeans::sample_without_replacement(n, std::max<std::size_t>(m, 1), rng);
    for (const std::size_t i : batch) {
      const std::int64_t c = model.assign(data[i]);
      std::uint64_t& cnt = counts[static_cast<std::size_t>(c)];
      ++cnt;
      const double eta = 1.0 / static_cast<double>(cnt);
      FeatureVector& mu = model.centroids()[static_cast<std::size_t>(c)];
      for (std::size_t d = 0; d < mu.size(); ++d) {
        mu[d] += eta * (data[i][d] - mu[d]);
      }
    }
  }
  return model;
}

// One full-batch Lloyd refinement: assign everything, recompute centroids as
// exact cluster means (empty clusters keep their centroid). The objective is
// non-increasing across successive calls on a fixed dataset.
inline void lloyd_epoch(KMeans& model, const FeatureDataset& data) {
  const std::int64_t k = model.k();
  if (k < 1) throw ArgumentError("lloyd_epoch: untrained model");
  const std::size_t dim = model.centroids().front().size();
  std::vector<FeatureVector> sums(static_cast<std::size_t>(k), FeatureVector(dim, 0.0));
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(k), 0);
  for (const auto& v : data) {
    const std::int64_t c = model.assign(v);
    ++counts[static_cast<std::size_t>(c)];
    FeatureVector& s = sums[static_cast<std::size_t>(c)];
    for (std::size_t d = 0; d < dim; ++d) s[d] += v[d];
  }
  for (std::int64_t c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    FeatureVector& mu = model.centroids()[static_cast<std::size_t>(c)];
    for (std::size_t d = 0; d < dim; ++d) mu[d] = sums[static_cast<std::size_t>(c)][d] * inv;
  }
}

}  // namespace logonet
