#include "clipq/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "clipq/error.hpp"

namespace clipq {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, what);
  }
}

void require_dim(std::span<const double> z, const Codebooks& C) {
  if (z.size() != C.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "vector of length " + std::to_string(z.size()) +
                    " against codebooks of width " + std::to_string(C.dim()));
  }
}

}  // namespace

Codebooks::Codebooks(std::size_t M, std::size_t K, std::size_t d)
    : Codebooks(M, K, d, std::vector<double>(M * K * d, 0.0)) {}

Codebooks::Codebooks(std::size_t M, std::size_t K, std::size_t d,
                     std::vector<double> weights)
    : M_(M), K_(K), d_(d), weights_(std::move(weights)) {
  if (M == 0 || d == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "codebooks need M, d > 0");
  }
  if (K < 2 || !std::has_single_bit(K)) {
    throw Error(ErrorCode::kInvalidArgument,
                "K must be a power of two >= 2, got " + std::to_string(K));
  }
  validate();
}

unsigned Codebooks::bits_per_index() const noexcept {
  return static_cast<unsigned>(std::countr_zero(K_));
}

void Codebooks::validate() const {
  if (weights_.size() != M_ * K_ * d_) {
    throw Error(ErrorCode::kDimensionMismatch, "codebook weight count");
  }
  require_finite(weights_, "codebook weight");
}

std::vector<std::vector<double>> segment(std::span<const double> z,
                                         std::size_t M) {
  if (M == 0 || z.size() % M != 0) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cannot split length " + std::to_string(z.size()) + " into " +
                    std::to_string(M) + " segments");
  }
  require_finite(z, "feature value");
  const std::size_t d = z.size() / M;
  std::vector<std::vector<double>> out;
  out.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    out.emplace_back(z.begin() + m * d, z.begin() + (m + 1) * d);
  }
  return out;
}

std::vector<double> l2_normalized(std::span<const double> z) {
  require_finite(z, "feature value");
  double sq = 0.0;
  for (double x : z) sq += x * x;
  if (!(sq > 0.0)) throw Error(ErrorCode::kZeroNorm, "cannot normalize");
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<double> out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] * inv;
  return out;
}

void segment_scores(std::span<const double> z, const Codebooks& C,
                    std::size_t m, std::span<double> scores) {
  const std::size_t d = C.sub_dim();
  const double* seg = z.data() + m * d;
  for (std::size_t i = 0; i < C.num_codewords(); ++i) {
    const auto c = C.codeword(m, i);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += seg[j] * c[j];
    scores[i] = s;
  }
}

SoftAssignment soft_quantize(std::span<const double> z, const Codebooks& C,
                             double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha must be positive");
  }
  require_dim(z, C);
  require_finite(z, "feature value");

  const std::size_t M = C.num_books(), K = C.num_codewords(),
                    d = C.sub_dim();
  SoftAssignment out;
  out.num_books = M;
  out.num_codewords = K;
  out.probs.resize(M * K);
  out.reconstruction.assign(M * d, 0.0);

  for (std::size_t m = 0; m < M; ++m) {
    std::span<double> p(out.probs.data() + m * K, K);
    segment_scores(z, C, m, p);
    double peak = p[0];
    for (double s : p) peak = std::max(peak, s);
    double total = 0.0;
    for (double& s : p) {
      s = std::exp(alpha * (s - peak));
      total += s;
    }
    for (double& s : p) s /= total;

    double* rec = out.reconstruction.data() + m * d;
    for (std::size_t i = 0; i < K; ++i) {
      const auto c = C.codeword(m, i);
      for (std::size_t j = 0; j < d; ++j) rec[j] += p[i] * c[j];
    }
  }
  return out;
}

HardCode hard_quantize(std::span<const double> z, const Codebooks& C) {
  require_dim(z, C);
  require_finite(z, "feature value");
  const std::size_t M = C.num_books(), K = C.num_codewords();
  HardCode code;
  code.indices.resize(M);
  std::vector<double> scores(K);
  for (std::size_t m = 0; m < M; ++m) {
    segment_scores(z, C, m, scores);
    // max_element returns the first maximum: lowest index wins ties.
    code.indices[m] = static_cast<std::uint32_t>(
        std::max_element(scores.begin(), scores.end()) - scores.begin());
  }
  return code;
}

}  // namespace clipq
