#include "clipq/model.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "clipq/error.hpp"

namespace clipq {

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, what);
}

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

}  // namespace

void Hyperparams::validate() const {
  if (!positive(alpha)) invalid("alpha must be > 0");
  if (!positive(tau)) invalid("tau must be > 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) invalid("beta must be >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) invalid("gamma must be >= 0");
  if (num_codewords < 2 || num_codewords > 65536 ||
      !std::has_single_bit(num_codewords)) {
    invalid("K must be a power of two in [2, 65536], got " +
            std::to_string(num_codewords));
  }
  if (num_books == 0) invalid("need at least one codebook");
  if (proj_dim != 0 && proj_dim % num_books != 0) {
    throw Error(ErrorCode::kDimensionMismatch,
                "projection width " + std::to_string(proj_dim) +
                    " not divisible by M=" + std::to_string(num_books));
  }
  if (batch_size < 2) invalid("batch size must be >= 2");
  if (eta >= negatives_per_query()) {
    invalid("eta=" + std::to_string(eta) + " must be <= 2(N_B-1)-1 = " +
            std::to_string(negatives_per_query() - 1));
  }
  if (!positive(lr_codebook) || !positive(lr_head)) {
    invalid("learning rates must be > 0");
  }
  if (!(min_improvement >= 0.0)) invalid("min_improvement must be >= 0");
}

std::uint32_t Hyperparams::code_bits() const {
  return num_books *
         static_cast<std::uint32_t>(std::countr_zero(num_codewords));
}

std::uint32_t Hyperparams::books_for_bits(std::uint32_t bits,
                                          std::uint32_t K) {
  if (K < 2 || !std::has_single_bit(K)) {
    invalid("K must be a power of two, got " + std::to_string(K));
  }
  const auto per_index = static_cast<std::uint32_t>(std::countr_zero(K));
  if (bits == 0 || bits % per_index != 0) {
    invalid(std::to_string(bits) + " bits is not a multiple of log2(K)=" +
            std::to_string(per_index));
  }
  return bits / per_index;
}

ProjectionHead::ProjectionHead(std::size_t in_dim, std::size_t out_dim,
                               bool with_bias)
    : ProjectionHead(in_dim, out_dim,
                     std::vector<double>(in_dim * out_dim, 0.0),
                     with_bias ? std::vector<double>(out_dim, 0.0)
                               : std::vector<double>{}) {}

ProjectionHead::ProjectionHead(std::size_t in_dim, std::size_t out_dim,
                               std::vector<double> weights,
                               std::vector<double> bias)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      weights_(std::move(weights)),
      bias_(std::move(bias)) {
  validate();
}

ProjectionHead ProjectionHead::identity(std::size_t dim) {
  ProjectionHead head(dim, dim, false);
  for (std::size_t i = 0; i < dim; ++i) head.weights_[i * dim + i] = 1.0;
  return head;
}

void ProjectionHead::validate() const {
  if (in_dim_ == 0 || out_dim_ == 0 ||
      weights_.size() != in_dim_ * out_dim_ ||
      (!bias_.empty() && bias_.size() != out_dim_)) {
    throw Error(ErrorCode::kDimensionMismatch, "projection head shape");
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw Error(ErrorCode::kNonFinite, "head weight");
  }
  for (double b : bias_) {
    if (!std::isfinite(b)) throw Error(ErrorCode::kNonFinite, "head bias");
  }
}

std::vector<double> ProjectionHead::apply(std::span<const double> x) const {
  if (x.size() != in_dim_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "input of length " + std::to_string(x.size()) +
                    " for head expecting " + std::to_string(in_dim_));
  }
  std::vector<double> u(out_dim_);
  for (std::size_t i = 0; i < out_dim_; ++i) {
    const double* w = weights_.data() + i * in_dim_;
    double s = bias_.empty() ? 0.0 : bias_[i];
    for (std::size_t j = 0; j < in_dim_; ++j) s += w[j] * x[j];
    u[i] = s;
  }
  return u;
}

std::vector<double> ProjectionHead::project(std::span<const double> x) const {
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "input value");
  }
  return l2_normalized(apply(x));
}

std::vector<double> ProjectionHead::project(std::span<const float> x) const {
  std::vector<double> wide(x.begin(), x.end());
  return project(wide);
}

Model init_parameters(std::size_t in_dim, const Hyperparams& hyper) {
  hyper.validate();
  const std::size_t D = hyper.proj_dim == 0 ? in_dim : hyper.proj_dim;
  const std::size_t M = hyper.num_books, K = hyper.num_codewords;
  if (in_dim == 0 || D % M != 0) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature width " + std::to_string(D) +
                    " not divisible by M=" + std::to_string(M));
  }
  std::mt19937_64 rng(hyper.seed);

  std::normal_distribution<double> head_dist(
      0.0, std::sqrt(2.0 / static_cast<double>(in_dim + D)));
  std::vector<double> weights(D * in_dim);
  for (double& w : weights) w = head_dist(rng);

  const std::size_t d = D / M;
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> codewords(M * K * d);
  for (std::size_t c = 0; c < M * K; ++c) {
    double* cw = codewords.data() + c * d;
    double sq = 0.0;
    do {
      sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        cw[j] = unit(rng);
        sq += cw[j] * cw[j];
      }
    } while (sq == 0.0);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) cw[j] *= inv;
  }

  Model model;
  model.hyper = hyper;
  model.head = ProjectionHead(in_dim, D, std::move(weights),
                              hyper.head_bias ? std::vector<double>(D, 0.0)
                                              : std::vector<double>{});
  model.codebooks = Codebooks(M, K, d, std::move(codewords));
  return model;
}

}  // namespace clipq
