#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "clipq/dataset.hpp"
#include "clipq/model.hpp"
#include "clipq/objective.hpp"
#include "clipq/quantizer.hpp"

namespace clipq {

/// Raw input features for one step: 2N_B rows of D_in values, ordered the
/// same way as BatchViews.
struct RawBatch {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * dim, dim};
  }
};

/// Projected feature and its soft assignment for one input.
std::pair<std::vector<double>, SoftAssignment> forward(
    std::span<const double> raw, const ProjectionHead& head,
    const Codebooks& C, double alpha);

/// Forward pass over a batch; returns the objective without gradients.
LossBreakdown evaluate_objective(const RawBatch& batch,
                                 const ProjectionHead& head,
                                 const Codebooks& C, const Hyperparams& hyper);

struct Gradients {
  LossBreakdown loss;
  std::vector<double> d_weights;    // like ProjectionHead::weights()
  std::vector<double> d_bias;       // empty when the head has no bias
  std::vector<double> d_codebooks;  // like Codebooks::weights()
};

/// Analytic gradient of the total objective with respect to the head and
/// codebooks. Throws kNonFiniteGradient if anything blows up.
Gradients compute_gradients(const RawBatch& batch, const ProjectionHead& head,
                            const Codebooks& C, const Hyperparams& hyper);

/// Adam moments for one flat parameter block.
class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainReport {
  std::vector<LossBreakdown> history;  // per-epoch mean over batches
  int best_epoch = -1;
  bool stopped_early = false;
  double seconds = 0.0;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

/// Mini-batch Adam over the two-view training set. Epoch e pairs views
/// (2e mod V, 2e+1 mod V); incomplete trailing batches are dropped. The
/// returned model is the snapshot with the lowest epoch loss.
TrainResult fit(const FeatureSet& train, const Hyperparams& hyper,
                std::ostream* progress = nullptr);

}  // namespace clipq
