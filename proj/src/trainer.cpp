#include "clipq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "clipq/error.hpp"

namespace clipq {

namespace {

void check_batch(const RawBatch& batch, const ProjectionHead& head) {
  if (batch.rows < 4 || batch.rows % 2 != 0) {
    throw Error(ErrorCode::kBatchTooSmall,
                "need an even number of rows >= 4, got " +
                    std::to_string(batch.rows));
  }
  if (batch.dim != head.in_dim() || batch.data.size() != batch.rows * batch.dim) {
    throw Error(ErrorCode::kDimensionMismatch, "raw batch shape");
  }
}

void require_finite_gradient(std::span<const double> g, const char* block) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw Error(ErrorCode::kNonFiniteGradient,
                  std::string(block) + "[" + std::to_string(i) +
                      "] = " + std::to_string(g[i]));
    }
  }
}

LossBreakdown combine(double contrastive, double weight_decay,
                      double codeword_reg, const Hyperparams& hyper) {
  LossBreakdown out{contrastive, weight_decay, codeword_reg, 0.0};
  out.total = contrastive + hyper.beta * weight_decay +
              hyper.gamma * codeword_reg;
  return out;
}

}  // namespace

std::pair<std::vector<double>, SoftAssignment> forward(
    std::span<const double> raw, const ProjectionHead& head,
    const Codebooks& C, double alpha) {
  auto z = head.project(raw);
  auto soft = soft_quantize(z, C, alpha);
  return {std::move(z), std::move(soft)};
}

LossBreakdown evaluate_objective(const RawBatch& batch,
                                 const ProjectionHead& head,
                                 const Codebooks& C,
                                 const Hyperparams& hyper) {
  check_batch(batch, head);
  const std::size_t D = C.dim();
  std::vector<double> recon(batch.rows * D);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto soft = forward(batch.row(r), head, C, hyper.alpha).second;
    std::copy(soft.reconstruction.begin(), soft.reconstruction.end(),
              recon.begin() + static_cast<std::ptrdiff_t>(r * D));
  }
  const BatchViews views(batch.rows, D, std::move(recon));
  return total_objective(views, C, head.weights(), hyper.tau, hyper.eta,
                         hyper.beta, hyper.gamma);
}

Gradients compute_gradients(const RawBatch& batch, const ProjectionHead& head,
                            const Codebooks& C, const Hyperparams& hyper) {
  check_batch(batch, head);
  if (head.out_dim() != C.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "head output vs codebooks");
  }
  const std::size_t n = batch.rows, Din = head.in_dim(), D = C.dim();
  const std::size_t M = C.num_books(), K = C.num_codewords(),
                    d = C.sub_dim();
  const double alpha = hyper.alpha;

  // Forward: projected unit features, pre-normalization norms, soft
  // assignments and reconstructions for every row.
  std::vector<double> z(n * D), unorm(n), probs(n * M * K), recon(n * D);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(n); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const auto u = head.apply(batch.row(r));
    double sq = 0.0;
    for (double x : u) sq += x * x;
    unorm[r] = std::sqrt(sq);
    if (!(unorm[r] > 0.0)) continue;  // reported below, outside the loop
    for (std::size_t j = 0; j < D; ++j) z[r * D + j] = u[j] / unorm[r];
    const auto soft =
        soft_quantize(std::span<const double>(z.data() + r * D, D), C, alpha);
    std::copy(soft.probs.begin(), soft.probs.end(),
              probs.begin() + static_cast<std::ptrdiff_t>(r * M * K));
    std::copy(soft.reconstruction.begin(), soft.reconstruction.end(),
              recon.begin() + static_cast<std::ptrdiff_t>(r * D));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (!(unorm[r] > 0.0)) {
      throw Error(ErrorCode::kZeroNorm,
                  "projected row " + std::to_string(r) + " vanished");
    }
  }

  const BatchViews views(n, D, std::move(recon));
  const auto contrastive = clipped_loss_gradient(views, hyper.tau, hyper.eta);

  // Back through the alpha-softmax, logit_i = alpha * z^m . c_i, with
  // e[r][m][i] = dL/dlogit_i.
  std::vector<double> e(n * M * K), grad_u(n * D);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(n); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    std::vector<double> gz(D, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
      const double* g = contrastive.d_rows.data() + r * D + m * d;
      const double* p = probs.data() + (r * M + m) * K;
      double* er = e.data() + (r * M + m) * K;
      double mean = 0.0;
      for (std::size_t i = 0; i < K; ++i) {
        const auto c = C.codeword(m, i);
        double a = 0.0;
        for (std::size_t j = 0; j < d; ++j) a += g[j] * c[j];
        er[i] = a;
        mean += p[i] * a;
      }
      for (std::size_t i = 0; i < K; ++i) {
        er[i] = p[i] * (er[i] - mean);
        const auto c = C.codeword(m, i);
        for (std::size_t j = 0; j < d; ++j) gz[m * d + j] += alpha * er[i] * c[j];
      }
    }
    // Through z = u / ||u||.
    const double* zr = z.data() + r * D;
    double radial = 0.0;
    for (std::size_t j = 0; j < D; ++j) radial += gz[j] * zr[j];
    for (std::size_t j = 0; j < D; ++j) {
      grad_u[r * D + j] = (gz[j] - radial * zr[j]) / unorm[r];
    }
  }

  Gradients out;
  const auto& W = head.weights();
  out.d_weights.assign(D * Din, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(D); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* gw = out.d_weights.data() + i * Din;
    for (std::size_t r = 0; r < n; ++r) {
      const double gu = grad_u[r * D + i];
      const auto x = batch.row(r);
      for (std::size_t j = 0; j < Din; ++j) gw[j] += gu * x[j];
    }
    for (std::size_t j = 0; j < Din; ++j) {
      gw[j] += 2.0 * hyper.beta * W[i * Din + j];
    }
  }
  if (head.has_bias()) {
    out.d_bias.assign(D, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < D; ++i) out.d_bias[i] += grad_u[r * D + i];
    }
  }

  if (hyper.gamma > 0.0) {
    out.d_codebooks = codeword_regularizer_gradient(C);
    for (double& g : out.d_codebooks) g *= hyper.gamma;
  } else {
    out.d_codebooks.assign(M * K * d, 0.0);
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(M * K); ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    const std::size_t m = c / K, i = c % K;
    std::vector<double> acc(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double p = probs[(r * M + m) * K + i];
      const double a = alpha * e[(r * M + m) * K + i];
      const double* g = contrastive.d_rows.data() + r * D + m * d;
      const double* zr = z.data() + r * D + m * d;
      for (std::size_t j = 0; j < d; ++j) acc[j] += p * g[j] + a * zr[j];
    }
    double* dst = out.d_codebooks.data() + c * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += acc[j];
  }

  double decay = 0.0;
  for (double w : W) decay += w * w;
  out.loss = combine(contrastive.loss, decay, codeword_regularizer(C), hyper);

  require_finite_gradient(out.d_weights, "dL/dW");
  require_finite_gradient(out.d_bias, "dL/db");
  require_finite_gradient(out.d_codebooks, "dL/dC");
  return out;
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2,
           double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0),
      v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "optimizer state size");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

TrainResult fit(const FeatureSet& train, const Hyperparams& hyper,
                std::ostream* progress) {
  hyper.validate();
  if (train.empty()) throw Error(ErrorCode::kEmptyInput, "no training items");
  train.validate();
  if (train.views < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "training needs >= 2 views per item, file has " +
                    std::to_string(train.views));
  }
  if (hyper.batch_size > train.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "batch size " + std::to_string(hyper.batch_size) +
                    " exceeds " + std::to_string(train.size()) + " items");
  }

  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  result.model = init_parameters(train.dim, hyper);
  if (hyper.max_epochs == 0) return result;

  Model model = result.model;
  Adam head_opt(model.head.weights().size(), hyper.lr_head);
  Adam bias_opt(model.head.bias().size(), hyper.lr_head);
  Adam book_opt(model.codebooks.weights().size(), hyper.lr_codebook);

  // Separate stream from initialization so changing the batch order never
  // perturbs the initial parameters.
  std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t nb = hyper.batch_size, Din = train.dim;
  const std::size_t batches = train.size() / nb;
  const double queries = 2.0 * static_cast<double>(nb);

  double best = std::numeric_limits<double>::infinity();
  double reference = best;
  std::uint32_t stale = 0;
  RawBatch batch{2 * nb, Din, std::vector<double>(2 * nb * Din)};

  for (std::uint32_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const auto view_a = static_cast<std::uint32_t>((2 * epoch) % train.views);
    const auto view_b =
        static_cast<std::uint32_t>((2 * epoch + 1) % train.views);

    LossBreakdown sum;
    for (std::size_t b = 0; b < batches; ++b) {
      for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t item = order[b * nb + i];
        const auto va = train.view(item, view_a);
        const auto vb = train.view(item, view_b);
        std::copy(va.begin(), va.end(), batch.data.begin() +
                                            static_cast<std::ptrdiff_t>(i * Din));
        std::copy(vb.begin(), vb.end(),
                  batch.data.begin() +
                      static_cast<std::ptrdiff_t>((nb + i) * Din));
      }
      const auto grads =
          compute_gradients(batch, model.head, model.codebooks, hyper);
      sum.contrastive += grads.loss.contrastive;
      sum.weight_decay += grads.loss.weight_decay;
      sum.codeword_reg += grads.loss.codeword_reg;
      sum.total += grads.loss.total;

      head_opt.step(model.head.weights(), grads.d_weights);
      if (model.head.has_bias()) bias_opt.step(model.head.bias(), grads.d_bias);
      book_opt.step(model.codebooks.weights(), grads.d_codebooks);
    }
    const double inv = 1.0 / static_cast<double>(batches);
    const LossBreakdown mean{sum.contrastive * inv, sum.weight_decay * inv,
                             sum.codeword_reg * inv, sum.total * inv};
    result.report.history.push_back(mean);

    if (mean.total < best) {
      best = mean.total;
      result.report.best_epoch = static_cast<int>(epoch);
      result.model = model;
    }
    if (mean.total < reference - hyper.min_improvement) {
      reference = mean.total;
      stale = 0;
    } else {
      ++stale;
    }

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (progress != nullptr) {
      char line[256];
      std::snprintf(line, sizeof line,
                    "epoch %u/%u contrastive/query=%.6f weight_decay=%.6f "
                    "codeword_reg=%.6f total=%.6f elapsed=%.2fs\n",
                    epoch + 1, hyper.max_epochs, mean.contrastive / queries,
                    mean.weight_decay, mean.codeword_reg, mean.total, elapsed);
      *progress << line << std::flush;
    }
    if (stale >= hyper.patience) {
      result.report.stopped_early = true;
      break;
    }
  }
  result.report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

}  // namespace clipq
