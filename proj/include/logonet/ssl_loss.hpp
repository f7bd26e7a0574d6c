#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "logonet/kmeans.hpp"
#include "logonet/masking.hpp"
#include "logonet/rng.hpp"
#include "logonet/tensor.hpp"

namespace logonet {

// Max-subtracted softmax of logits/tau. Plain data transform.
inline std::vector<double> temperature_softmax(const std::vector<double>& logits, double tau) {
  if (tau <= 0.0) throw ArgumentError("temperature_softmax: temperature must be positive");
  if (logits.empty()) throw ArgumentError("temperature_softmax: empty logits");
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / tau;
  const double mx = *std::max_element(scaled.begin(), scaled.end());
  double denom = 0.0;
  for (double& v : scaled) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : scaled) v /= denom;
  return scaled;
}

// Sum of negative log-likelihoods: one probability row per prediction site,
// one pseudo-label per row. This is the reference form of the pre-training
// objective; the autograd path below must reproduce it exactly.
inline double pretrain_loss(const std::vector<std::vector<double>>& probs,
                            const std::vector<std::int64_t>& labels) {
  if (probs.size() != labels.size()) {
    throw ArgumentError("pretrain_loss: probs/labels length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const std::int64_t lab = labels[i];
    if (lab < 0 || lab >= static_cast<std::int64_t>(probs[i].size())) {
      throw ArgumentError("pretrain_loss: label out of range");
    }
    total -= std::log(probs[i][static_cast<std::size_t>(lab)]);
  }
  return total;
}

// One supervised site for the pre-training objective: batch entry, slice,
// clusterer index, that clusterer's cluster count (first valid score slots),
// and the pseudo-label.
struct PretrainTarget {
  std::int64_t batch = 0;
  std::int64_t slice = 0;
  std::int64_t clusterer = 0;
  std::int64_t k = 0;
  std::int64_t label = 0;
};

// Temperature-scaled cross entropy summed over targets, computed from head
// scores (b, slices, clusterers, class_size, 1). For each target only the
// first k score slots participate in the softmax; gradient per slot is
// (p - onehot)/tau. A k=1 target contributes exactly zero.
template <typename T>
Tensor<T> pretrain_nll(const Tensor<T>& scores, const std::vector<PretrainTarget>& targets,
                       double tau) {
  if (tau <= 0.0) throw ArgumentError("pretrain_nll: temperature must be positive");
  const Shape5 sh = scores.shape();
  if (sh[4] != 1) {
    throw ShapeError("pretrain_nll: expected trailing extent 1, got " + shape_str(sh));
  }
  const std::int64_t class_size = sh[3];
  const T* ps = scores.data();
  const auto site = [&](const PretrainTarget& t, std::int64_t slot) {
    return ((t.batch * sh[1] + t.slice) * sh[2] + t.clusterer) * sh[3] + slot;
  };

  std::vector<std::vector<double>> probs(targets.size());
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const PretrainTarget& t = targets[i];
    if (t.batch < 0 || t.batch >= sh[0] || t.slice < 0 || t.slice >= sh[1] || t.clusterer < 0 ||
        t.clusterer >= sh[2]) {
      throw ArgumentError("pretrain_nll: target indices out of range for " + shape_str(sh));
    }
    if (t.k < 1 || t.k > class_size) {
      throw ArgumentError("pretrain_nll: cluster count " + std::to_string(t.k) +
                          " outside [1, " + std::to_string(class_size) + "]");
    }
    if (t.label < 0 || t.label >= t.k) {
      throw ArgumentError("pretrain_nll: label " + std::to_string(t.label) +
                          " outside [0, " + std::to_string(t.k) + ")");
    }
    std::vector<double> f(static_cast<std::size_t>(t.k));
    for (std::int64_t s = 0; s < t.k; ++s) {
      f[static_cast<std::size_t>(s)] = static_cast<double>(ps[site(t, s)]) / tau;
    }
    const double mx = *std::max_element(f.begin(), f.end());
    double denom = 0.0;
    for (double& v : f) {
      v = std::exp(v - mx);
      denom += v;
    }
    for (double& v : f) v /= denom;
    total -= std::log(f[static_cast<std::size_t>(t.label)]);
    probs[i] = std::move(f);
  }

  Tensor<T> out = detail::make_op<T>({1, 1, 1, 1, 1}, "pretrain_nll", {scores.impl()});
  out.data()[0] = static_cast<T>(total);
  if (out.impl()->requires_grad) {
    auto xn = scores.impl();
    out.impl()->backward_fn = [xn, sh, targets, probs, tau](detail::Node<T>& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      const T g = self.grad[0];
      T* d = xn->grad.data();
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const PretrainTarget& t = targets[i];
        const std::int64_t base = ((t.batch * sh[1] + t.slice) * sh[2] + t.clusterer) * sh[3];
        for (std::int64_t s = 0; s < t.k; ++s) {
          const double p = probs[i][static_cast<std::size_t>(s)];
          const double ind = (s == t.label) ? 1.0 : 0.0;
          d[base + s] += static_cast<T>(static_cast<double>(g) * (p - ind) / tau);
        }
      }
    };
  }
  return out;
}

// Bank of independently trained clusterers over the same feature space.
struct ClustererEnsemble {
  std::vector<KMeans> members;

  std::int64_t size() const { return static_cast<std::int64_t>(members.size()); }
  std::int64_t k_of(std::int64_t i) const { return members[static_cast<std::size_t>(i)].k(); }
  std::int64_t max_k() const {
    std::int64_t m = 0;
    for (const auto& c : members) m = std::max(m, c.k());
    return m;
  }
};

// Train n clusterers on the same dataset, each with its own cluster count
// drawn uniformly from [k_min, k_max] and its own child rng stream keyed by
// the member index. The parent rng is not advanced, so ensembles are a pure
// function of (seed, index).
inline ClustererEnsemble train_ensemble(const FeatureDataset& data, std::int64_t n_clusterers,
                                        std::int64_t k_min, std::int64_t k_max,
                                        const KMeansTrainParams& params, const Rng& rng) {
  if (n_clusterers < 1) throw ArgumentError("train_ensemble: need at least one clusterer");
  if (k_min < 1 || k_max < k_min) {
    throw ArgumentError("train_ensemble: need 1 <= k_min <= k_max");
  }
  ClustererEnsemble ens;
  ens.members.reserve(static_cast<std::size_t>(n_clusterers));
  for (std::int64_t i = 0; i < n_clusterers; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i) + 1);
    const std::int64_t k = sub.uniform_int(k_min, k_max);
    ens.members.push_back(train_clusterer(data, k, params, sub));
  }
  return ens;
}

// Per-volume, per-slice, per-clusterer pseudo-labels plus each clusterer's
// cluster count. Labels are always computed from unmasked features.
struct PseudoLabelSet {
  std::vector<std::int64_t> cluster_sizes;
  std::vector<std::vector<std::vector<std::uint32_t>>> labels;  // [volume][slice][clusterer]

  std::int64_t n_clusterers() const { return static_cast<std::int64_t>(cluster_sizes.size()); }
  std::int64_t n_volumes() const { return static_cast<std::int64_t>(labels.size()); }
};

inline PseudoLabelSet assign_pseudo_labels(const ClustererEnsemble& ensemble,
                                           const std::vector<FeatureDataset>& volumes) {
  if (ensemble.members.empty()) throw ArgumentError("assign_pseudo_labels: empty ensemble");
  PseudoLabelSet out;
  for (const auto& c : ensemble.members) out.cluster_sizes.push_back(c.k());
  out.labels.reserve(volumes.size());
  for (const auto& vol : volumes) {
    std::vector<std::vector<std::uint32_t>> per_slice;
    per_slice.reserve(vol.size());
    for (const auto& feat : vol) {
      std::vector<std::uint32_t> per_clusterer;
      per_clusterer.reserve(ensemble.members.size());
      for (const auto& c : ensemble.members) {
        per_clusterer.push_back(static_cast<std::uint32_t>(c.assign(feat)));
      }
      per_slice.push_back(std::move(per_clusterer));
    }
    out.labels.push_back(std::move(per_slice));
  }
  return out;
}

// Expand one volume's masked slices into the full target list: every
// (masked slice, clusterer) pair becomes one supervised site.
inline std::vector<PretrainTarget> build_pretrain_targets(const PseudoLabelSet& pl,
                                                          std::int64_t volume, std::int64_t batch,
                                                          const std::vector<std::int64_t>& masked) {
  if (volume < 0 || volume >= pl.n_volumes()) {
    throw ArgumentError("build_pretrain_targets: volume index out of range");
  }
  const auto& vol = pl.labels[static_cast<std::size_t>(volume)];
  std::vector<PretrainTarget> out;
  out.reserve(masked.size() * pl.cluster_sizes.size());
  for (const std::int64_t s : masked) {
    if (s < 0 || s >= static_cast<std::int64_t>(vol.size())) {
      throw ArgumentError("build_pretrain_targets: slice index out of range");
    }
    const auto& row = vol[static_cast<std::size_t>(s)];
    for (std::size_t i = 0; i < row.size(); ++i) {
      PretrainTarget t;
      t.batch = batch;
      t.slice = s;
      t.clusterer = static_cast<std::int64_t>(i);
      t.k = pl.cluster_sizes[i];
      t.label = static_cast<std::int64_t>(row[i]);
      out.push_back(t);
    }
  }
  return out;
}

}  // namespace logonet
