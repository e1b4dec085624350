#pragma once

// Synthetic feature sets for tests and demos: Gaussian clusters in feature
// space with feature-space view augmentation standing in for image
// augmentations.

#include <cstdint>
#include <random>
#include <span>

#include "clipq/dataset.hpp"

namespace clipq::synthetic {

struct Augmentation {
  double noise_sigma = 0.05;
  double dropout = 0.1;
};

/// Gaussian noise plus random coordinate dropout, applied to a copy.
void augment(std::span<const float> center, std::span<float> out,
             const Augmentation& aug, std::mt19937_64& rng);

struct ClusterSpec {
  std::uint32_t clusters = 10;
  std::uint32_t dim = 64;
  std::uint32_t train_per_cluster = 200;
  std::uint32_t query_per_cluster = 20;
  /// Spread of items around their cluster mean; cluster means are unit
  /// Gaussian vectors.
  double cluster_sigma = 0.6;
  /// Fraction of extra training items that are re-augmented copies of
  /// existing items of the same cluster.
  double duplicate_fraction = 0.0;
  Augmentation augmentation;
  std::uint64_t seed = 0;
};

struct ClusterData {
  FeatureSet train;     // V = 2 augmented views
  FeatureSet database;  // V = 1 clean view of every training item
  FeatureSet query;     // V = 1, disjoint from the training items
};

ClusterData make_clusters(const ClusterSpec& spec);

}  // namespace clipq::synthetic
