#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clipq/quantizer.hpp"

namespace clipq {

/// 2N_B reconstructions, rows ordered [view A of items 0..N_B-1, view B of
/// items 0..N_B-1]. Row q is paired with row (q + N_B) mod 2N_B.
class BatchViews {
 public:
  BatchViews(std::size_t rows, std::size_t dim, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t items() const noexcept { return rows_ / 2; }
  std::size_t dim() const noexcept { return dim_; }
  /// N_S = 2(N_B - 1): negatives seen by each query.
  std::size_t negatives_per_query() const noexcept { return rows_ - 2; }

  std::size_t partner(std::size_t q) const noexcept {
    return (q + items()) % rows_;
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * dim_, dim_};
  }
  const std::vector<double>& data() const noexcept { return data_; }

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::vector<double> data_;
};

struct LossBreakdown {
  double contrastive = 0.0;
  double weight_decay = 0.0;
  double codeword_reg = 0.0;
  double total = 0.0;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Full 2N_B x 2N_B cosine-similarity matrix of the batch rows.
std::vector<double> similarity_matrix(const BatchViews& batch);

/// Per-query drop flags for clipping: flags[k] is true when row k is one of
/// the `eta` most similar negatives of query q. Negatives are ordered by a
/// stable ascending sort over (score, row index).
std::vector<bool> clipped_negatives(std::span<const double> sim_row,
                                    std::size_t q, std::size_t positive,
                                    std::size_t eta);

/// Contrastive loss with every other row as a negative, summed over all
/// 2N_B queries.
double vanilla_loss(const BatchViews& batch, double tau);

/// Same as vanilla_loss but each query ignores its `eta` most similar
/// negatives. eta = 0 reproduces vanilla_loss exactly.
double clipped_loss(const BatchViews& batch, double tau, std::size_t eta);

/// Loss and its gradient with respect to every reconstruction row. The
/// clipping selection is frozen at the current point.
struct ContrastiveGradient {
  double loss = 0.0;
  std::vector<double> d_rows;  // rows x dim
};
ContrastiveGradient clipped_loss_gradient(const BatchViews& batch, double tau,
                                          std::size_t eta);

/// Mean over codebooks of the mean pairwise cosine similarity of its
/// codewords.
double codeword_regularizer(const Codebooks& C);
/// d(codeword_regularizer)/dC, laid out like C.weights().
std::vector<double> codeword_regularizer_gradient(const Codebooks& C);

/// contrastive + beta * ||head||_F^2 + gamma * Omega_C. Codebooks are not
/// decayed.
LossBreakdown total_objective(const BatchViews& batch, const Codebooks& C,
                              std::span<const double> head_weights, double tau,
                              std::size_t eta, double beta, double gamma);

/// Fixed-order pairwise summation; the result depends only on the values and
/// their order, never on thread count.
double pairwise_sum(std::span<const double> values);

}  // namespace clipq
