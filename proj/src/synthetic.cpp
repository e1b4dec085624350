#include "clipq/synthetic.hpp"

#include <cmath>
#include <vector>

#include "clipq/error.hpp"

namespace clipq::synthetic {

void augment(std::span<const float> center, std::span<float> out,
             const Augmentation& aug, std::mt19937_64& rng) {
  if (center.size() != out.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "augment operands");
  }
  std::normal_distribution<double> noise(0.0, aug.noise_sigma);
  std::bernoulli_distribution drop(aug.dropout);
  for (std::size_t j = 0; j < center.size(); ++j) {
    const double n = noise(rng);
    out[j] = drop(rng) ? 0.0f : static_cast<float>(center[j] + n);
  }
}

ClusterData make_clusters(const ClusterSpec& spec) {
  if (spec.clusters == 0 || spec.dim == 0 || spec.train_per_cluster == 0) {
    throw Error(ErrorCode::kInvalidArgument, "empty cluster spec");
  }
  if (!(spec.duplicate_fraction >= 0.0 && spec.duplicate_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "duplicate fraction");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> spread(0.0, spec.cluster_sigma);
  const std::size_t D = spec.dim;

  std::vector<double> means(spec.clusters * D);
  for (double& m : means) m = unit(rng);

  ClusterData out;
  for (FeatureSet* fs : {&out.train, &out.database, &out.query}) {
    fs->dim = spec.dim;
    fs->vocab_size = spec.clusters;
  }
  out.train.views = 2;
  out.database.views = 1;
  out.query.views = 1;

  auto draw_center = [&](std::uint32_t c) {
    std::vector<float> v(D);
    for (std::size_t j = 0; j < D; ++j) {
      v[j] = static_cast<float>(means[c * D + j] + spread(rng));
    }
    return v;
  };
  const auto duplicates = static_cast<std::uint32_t>(
      std::lround(spec.duplicate_fraction * spec.train_per_cluster));

  std::uint64_t next_id = 0;
  std::vector<float> views(2 * D);
  for (std::uint32_t c = 0; c < spec.clusters; ++c) {
    const auto label = LabelSet::single(spec.clusters, c);
    std::vector<std::vector<float>> centers;
    for (std::uint32_t i = 0; i < spec.train_per_cluster; ++i) {
      centers.push_back(draw_center(c));
    }
    // Planted near-duplicates: copies of existing items in this cluster
    // that end up as negatives of their originals.
    std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
    for (std::uint32_t i = 0; i < duplicates; ++i) {
      centers.push_back(centers[pick(rng)]);
    }
    for (const auto& center : centers) {
      augment(center, std::span<float>(views).first(D), spec.augmentation, rng);
      augment(center, std::span<float>(views).subspan(D), spec.augmentation,
              rng);
      out.train.push_back(next_id, label, views);
      out.database.push_back(next_id, label, center);
      ++next_id;
    }
  }
  std::uint64_t query_id = 1'000'000;
  for (std::uint32_t c = 0; c < spec.clusters; ++c) {
    const auto label = LabelSet::single(spec.clusters, c);
    for (std::uint32_t i = 0; i < spec.query_per_cluster; ++i) {
      out.query.push_back(query_id++, label, draw_center(c));
    }
  }
  return out;
}

}  // namespace clipq::synthetic
