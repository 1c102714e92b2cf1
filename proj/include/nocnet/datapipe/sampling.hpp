#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "nocnet/datapipe/image.hpp"
#include "nocnet/error.hpp"
#include "nocnet/netzoo.hpp"
#include "nocnet/random.hpp"

namespace nocnet {

using FeatureVec = std::vector<double>;
using Featurizer = std::function<FeatureVec(const Frame&)>;

inline double sq_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw SizeMismatch("feature vectors differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) { return std::sqrt(sq_distance(a, b)); }

inline std::vector<FeatureVec> featurize(const VideoClip& clip, const Featurizer& featurizer) {
  clip.validate();
  std::vector<FeatureVec> out;
  out.reserve(clip.frames.size());
  for (const auto& f : clip.frames) out.push_back(featurizer(f));
  return out;
}

/// Global-average-pooled backbone activations.
inline Featurizer pooled_featurizer(const Model& backbone) {
  return [backbone](const Frame& f) {
    const Frame* p = &f;
    const auto out = forward(backbone, frames_to_tensor(std::span<const Frame* const>(&p, 1)));
    const auto& s = out.shape();
    const std::size_t c = s[1], hw = out.size() / c;
    FeatureVec v(c, 0.0);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < hw; ++j) v[i] += out[i * hw + j] / static_cast<double>(hw);
    return v;
  };
}

// ---------------------------------------------------------------------------
// Key frames
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> keyframe_select(std::span<const FeatureVec> features, double tau) {
  if (!(tau > 0.0)) throw InvalidValue("tau must be positive");
  if (features.empty()) throw InvalidValue("no frames to select from");
  std::vector<std::size_t> keys{0};
  for (std::size_t i = 1; i < features.size(); ++i)
    if (distance(features[i], features[keys.back()]) > tau) keys.push_back(i);
  return keys;
}

inline std::vector<std::size_t> keyframe_select(const VideoClip& clip, const Featurizer& featurizer, double tau) {
  const auto feats = featurize(clip, featurizer);
  return keyframe_select(feats, tau);
}

/// Half the mean distance between consecutive frames. Falls back to a tiny positive
/// value for static clips so that every frame after the first is a duplicate.
inline double default_keyframe_tau(std::span<const FeatureVec> features) {
  if (features.size() < 2) return 1e-12;
  double s = 0.0;
  for (std::size_t i = 1; i < features.size(); ++i) s += distance(features[i], features[i - 1]);
  const double tau = 0.5 * s / static_cast<double>(features.size() - 1);
  return tau > 1e-12 ? tau : 1e-12;
}

/// Share of vectors that lie within tau of at least one other vector.
inline double near_duplicate_fraction(std::span<const FeatureVec> features, double tau) {
  if (features.size() < 2) return 0.0;
  std::size_t dup = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = 0; j < features.size(); ++j) {
      if (i != j && distance(features[i], features[j]) <= tau) {
        ++dup;
        break;
      }
    }
  }
  return static_cast<double>(dup) / static_cast<double>(features.size());
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<FeatureVec> centers;
  std::vector<std::size_t> assignments;
  std::vector<double> inertia_trace;

  double inertia() const { return inertia_trace.empty() ? 0.0 : inertia_trace.back(); }
};

inline std::size_t count_distinct(std::span<const FeatureVec> points) {
  std::vector<FeatureVec> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end());
  return static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
}

inline double kmeans_inertia(std::span<const FeatureVec> points, std::span<const FeatureVec> centers,
                             std::span<const std::size_t> assignments) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += sq_distance(points[i], centers[assignments[i]]);
  return s;
}

namespace detail {

inline std::vector<FeatureVec> cluster_means(std::span<const FeatureVec> points, std::span<const std::size_t> assign,
                                             std::size_t k, std::vector<std::size_t>& counts) {
  const std::size_t d = points.front().size();
  std::vector<FeatureVec> centers(k, FeatureVec(d, 0.0));
  counts.assign(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    ++counts[assign[i]];
    for (std::size_t j = 0; j < d; ++j) centers[assign[i]][j] += points[i][j];
  }
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] > 0)
      for (auto& v : centers[c]) v /= static_cast<double>(counts[c]);
  return centers;
}

inline std::size_t nearest(const FeatureVec& p, std::span<const FeatureVec> centers, std::size_t keep) {
  std::size_t best = keep;
  double bd = keep < centers.size() ? sq_distance(p, centers[keep]) : std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = sq_distance(p, centers[c]);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

}  // namespace detail

inline KMeansResult kmeans(std::span<const FeatureVec> points, std::size_t k, std::size_t max_iters, std::uint64_t seed) {
  if (points.empty()) throw InvalidValue("kmeans needs points");
  if (k == 0) throw InvalidValue("k must be positive");
  if (max_iters == 0) throw InvalidValue("max_iters must be positive");
  if (k > points.size()) throw InvalidValue("k exceeds the number of points");
  for (const auto& p : points)
    if (p.size() != points.front().size()) throw SizeMismatch("points differ in dimension");
  if (k > count_distinct(points)) throw InvalidValue("k exceeds the number of distinct points");

  const std::size_t n = points.size();
  auto rng = make_rng(seed, {0x6b6d});

  // k-means++ seeding
  std::vector<FeatureVec> centers;
  centers.push_back(points[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_distance(points[i], centers[0]);
  while (centers.size() < k) {
    const std::size_t pick = std::discrete_distribution<std::size_t>(d2.begin(), d2.end())(rng);
    centers.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_distance(points[i], centers.back()));
  }

  KMeansResult res;
  res.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.assignments[i] = detail::nearest(points[i], centers, k);

  std::vector<std::size_t> counts;
  auto& a = res.assignments;
  for (std::size_t it = 0; it < max_iters; ++it) {
    centers = detail::cluster_means(points, a, k, counts);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      // repair: the point farthest from its own center (in a cluster that can spare it)
      std::size_t far = n;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[a[i]] < 2) continue;
        const double d = sq_distance(points[i], centers[a[i]]);
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      a[far] = c;
      centers = detail::cluster_means(points, a, k, counts);
    }
    res.inertia_trace.push_back(kmeans_inertia(points, centers, a));
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t b = detail::nearest(points[i], centers, a[i]);
      if (b != a[i]) {
        a[i] = b;
        changed = true;
      }
    }
    if (!changed) break;
  }
  centers = detail::cluster_means(points, a, k, counts);

  // Lloyd can stop where moving one point still helps (the mean shifts with the move);
  // single-point transfers finish the job.
  for (std::size_t pass = 0; pass < max_iters; ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t from = a[i];
      if (counts[from] < 2) continue;
      const double nf = static_cast<double>(counts[from]);
      const double remove_gain = nf / (nf - 1.0) * sq_distance(points[i], centers[from]);
      std::size_t best = from;
      double best_delta = -1e-12 * std::max(1.0, remove_gain);
      for (std::size_t c = 0; c < k; ++c) {
        if (c == from) continue;
        const double nt = static_cast<double>(counts[c]);
        const double delta = nt / (nt + 1.0) * sq_distance(points[i], centers[c]) - remove_gain;
        if (delta < best_delta) {
          best_delta = delta;
          best = c;
        }
      }
      if (best == from) continue;
      const double nt = static_cast<double>(counts[best]);
      for (std::size_t j = 0; j < points[i].size(); ++j) {
        centers[from][j] = (centers[from][j] * nf - points[i][j]) / (nf - 1.0);
        centers[best][j] = (centers[best][j] * nt + points[i][j]) / (nt + 1.0);
      }
      --counts[from];
      ++counts[best];
      a[i] = best;
      moved = true;
    }
    if (!moved) break;
    centers = detail::cluster_means(points, a, k, counts);
    res.inertia_trace.push_back(kmeans_inertia(points, centers, a));
  }
  res.centers = std::move(centers);
  return res;
}

// ---------------------------------------------------------------------------
// De-homogenizing sampler
// ---------------------------------------------------------------------------

inline std::vector<SampleRecord> sample_dataset(std::span<const VideoClip> clips, const Featurizer& featurizer,
                                                std::size_t per_cluster, std::uint64_t seed, double tau = 0.0) {
  if (clips.empty()) throw InvalidValue("sample_dataset needs clips");
  if (per_cluster == 0) throw InvalidValue("per_cluster must be positive");
  std::vector<SampleRecord> out;
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const auto& clip = clips[ci];
    const auto feats = featurize(clip, featurizer);
    const double t = tau > 0.0 ? tau : default_keyframe_tau(feats);
    const auto keys = keyframe_select(feats, t);
    const std::size_t k = std::min(keys.size(), count_distinct(feats));
    const auto km = kmeans(feats, k, 100, mix_seed(seed, {ci, 1}));
    auto rng = make_rng(seed, {ci, 2});
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < feats.size(); ++i)
        if (km.assignments[i] == c) members.push_back(i);
      const auto rep = *std::min_element(members.begin(), members.end(), [&](std::size_t x, std::size_t y) {
        return sq_distance(feats[x], km.centers[c]) < sq_distance(feats[y], km.centers[c]);
      });
      std::vector<std::size_t> rest;
      for (auto m : members)
        if (m != rep) rest.push_back(m);
      std::shuffle(rest.begin(), rest.end(), rng);
      rest.resize(std::min(rest.size(), per_cluster - 1));
      std::vector<std::size_t> take{rep};
      take.insert(take.end(), rest.begin(), rest.end());
      for (auto i : take) out.push_back({clip.frames[i], clip.label, Source::normal, std::nullopt});
    }
  }
  return out;
}

}  // namespace nocnet
