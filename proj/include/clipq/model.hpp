#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "clipq/quantizer.hpp"

namespace clipq {

struct Hyperparams {
  double alpha = 10.0;  // softmax sharpness of codeword assignment
  double tau = 0.2;     // contrastive temperature
  std::uint32_t eta = 10;
  double beta = 1e-4;   // projection-head weight decay
  double gamma = 1e-3;  // codeword-diversity weight
  std::uint32_t num_books = 4;
  std::uint32_t num_codewords = 256;
  std::uint32_t proj_dim = 0;  // 0: same as the input feature width
  bool head_bias = false;
  std::uint32_t batch_size = 128;
  std::uint32_t max_epochs = 50;
  double lr_codebook = 1e-3;
  double lr_head = 1e-4;
  std::uint32_t patience = 5;
  double min_improvement = 1e-4;
  std::uint64_t seed = 0;

  /// Negatives per query for the configured batch size, 2(N_B - 1).
  std::size_t negatives_per_query() const noexcept {
    return 2 * (static_cast<std::size_t>(batch_size) - 1);
  }

  /// Throws kInvalidArgument naming the first violated constraint.
  void validate() const;

  /// Code length B = M * log2(K) in bits.
  std::uint32_t code_bits() const;

  /// M such that M * log2(K) == bits; throws when bits is not a multiple.
  static std::uint32_t books_for_bits(std::uint32_t bits, std::uint32_t K);

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

/// Linear map R^{D_in} -> R^D followed by L2 normalization.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(std::size_t in_dim, std::size_t out_dim, bool with_bias);
  ProjectionHead(std::size_t in_dim, std::size_t out_dim,
                 std::vector<double> weights, std::vector<double> bias);

  static ProjectionHead identity(std::size_t dim);

  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return out_dim_; }
  bool has_bias() const noexcept { return !bias_.empty(); }

  /// Row-major out_dim x in_dim.
  const std::vector<double>& weights() const noexcept { return weights_; }
  std::vector<double>& weights() noexcept { return weights_; }
  const std::vector<double>& bias() const noexcept { return bias_; }
  std::vector<double>& bias() noexcept { return bias_; }

  /// W x + b, before normalization.
  std::vector<double> apply(std::span<const double> x) const;
  /// normalize(W x + b); throws kZeroNorm when the image vanishes.
  std::vector<double> project(std::span<const double> x) const;
  std::vector<double> project(std::span<const float> x) const;

  void validate() const;

  friend bool operator==(const ProjectionHead&, const ProjectionHead&) =
      default;

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Everything a snapshot carries.
struct Model {
  Hyperparams hyper;
  ProjectionHead head;
  Codebooks codebooks;

  friend bool operator==(const Model&, const Model&) = default;
};

/// Seeded initialization: head weights ~ N(0, 2/(D_in + D)); codewords drawn
/// from a unit Gaussian and normalized to unit length.
Model init_parameters(std::size_t in_dim, const Hyperparams& hyper);

}  // namespace clipq
