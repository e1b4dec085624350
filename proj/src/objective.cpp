#include "clipq/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "clipq/error.hpp"
#include "clipq/kernels.hpp"

namespace clipq {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::kInvalidArgument, "tau must be positive");
  }
}

void check_eta(const BatchViews& batch, std::size_t eta) {
  if (eta >= batch.negatives_per_query()) {
    throw Error(ErrorCode::kClippingExhaustsNegatives,
                "eta=" + std::to_string(eta) + " leaves no negative out of " +
                    std::to_string(batch.negatives_per_query()));
  }
}

struct UnitRows {
  std::vector<double> units;
  std::vector<double> norms;
};

UnitRows unit_rows(const BatchViews& batch) {
  const std::size_t n = batch.rows(), D = batch.dim();
  UnitRows out{std::vector<double>(n * D), std::vector<double>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = batch.row(r);
    double sq = 0.0;
    for (double x : row) sq += x * x;
    if (!(sq > 0.0)) {
      throw Error(ErrorCode::kZeroNorm, "batch row " + std::to_string(r));
    }
    const double norm = std::sqrt(sq);
    out.norms[r] = norm;
    for (std::size_t j = 0; j < D; ++j) out.units[r * D + j] = row[j] / norm;
  }
  return out;
}

// -log(e^{S+/tau} / (e^{S+/tau} + sum_{kept k} e^{S_k/tau})), evaluated
// with the largest included score factored out. Kept negatives are summed
// in row order whether or not anything was dropped.
double query_term(std::span<const double> sim_row, std::size_t q,
                  std::size_t positive, const std::vector<bool>& dropped,
                  double tau) {
  const std::size_t n = sim_row.size();
  double peak = sim_row[positive];
  for (std::size_t k = 0; k < n; ++k) {
    if (k == q || k == positive || dropped[k]) continue;
    peak = std::max(peak, sim_row[k]);
  }
  double denom = std::exp((sim_row[positive] - peak) / tau);
  for (std::size_t k = 0; k < n; ++k) {
    if (k == q || k == positive || dropped[k]) continue;
    denom += std::exp((sim_row[k] - peak) / tau);
  }
  return std::log(denom) - (sim_row[positive] - peak) / tau;
}

double summed_loss(const BatchViews& batch, double tau, std::size_t eta,
                   bool clip) {
  const std::size_t n = batch.rows();
  const auto sims = similarity_matrix(batch);
  std::vector<double> terms(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(n); ++qi) {
    const auto q = static_cast<std::size_t>(qi);
    std::span<const double> row(sims.data() + q * n, n);
    const std::size_t pos = batch.partner(q);
    const auto dropped = clip ? clipped_negatives(row, q, pos, eta)
                              : std::vector<bool>(n, false);
    terms[q] = query_term(row, q, pos, dropped, tau);
  }
  return pairwise_sum(terms);
}

}  // namespace

BatchViews::BatchViews(std::size_t rows, std::size_t dim,
                       std::vector<double> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
  if (rows < 4 || rows % 2 != 0) {
    throw Error(ErrorCode::kBatchTooSmall,
                "need an even number of rows >= 4, got " +
                    std::to_string(rows));
  }
  if (dim == 0 || data_.size() != rows * dim) {
    throw Error(ErrorCode::kDimensionMismatch, "batch data size");
  }
  for (double x : data_) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, "batch value");
  }
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double cosine_similarity(std::span<const double> a,
                         std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine operands");
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) {
    throw Error(ErrorCode::kZeroNorm, "cosine of a zero vector");
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<double> similarity_matrix(const BatchViews& batch) {
  const auto unit = unit_rows(batch);
  std::vector<double> out(batch.rows() * batch.rows());
  kernels::parallel::gram(unit.units, batch.rows(), batch.dim(), out);
  return out;
}

std::vector<bool> clipped_negatives(std::span<const double> sim_row,
                                    std::size_t q, std::size_t positive,
                                    std::size_t eta) {
  const std::size_t n = sim_row.size();
  std::vector<bool> dropped(n, false);
  if (eta == 0) return dropped;
  std::vector<std::size_t> negatives;
  negatives.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (k != q && k != positive) negatives.push_back(k);
  }
  if (eta >= negatives.size()) {
    throw Error(ErrorCode::kClippingExhaustsNegatives,
                "eta=" + std::to_string(eta) + " with " +
                    std::to_string(negatives.size()) + " negatives");
  }
  // Input is in row order, so a stable sort orders ties by row index.
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) {
                     return sim_row[a] < sim_row[b];
                   });
  for (std::size_t i = negatives.size() - eta; i < negatives.size(); ++i) {
    dropped[negatives[i]] = true;
  }
  return dropped;
}

double vanilla_loss(const BatchViews& batch, double tau) {
  check_tau(tau);
  return summed_loss(batch, tau, 0, false);
}

double clipped_loss(const BatchViews& batch, double tau, std::size_t eta) {
  check_tau(tau);
  check_eta(batch, eta);
  return summed_loss(batch, tau, eta, true);
}

ContrastiveGradient clipped_loss_gradient(const BatchViews& batch, double tau,
                                          std::size_t eta) {
  check_tau(tau);
  check_eta(batch, eta);
  const std::size_t n = batch.rows(), D = batch.dim();
  const auto unit = unit_rows(batch);
  std::vector<double> sims(n * n);
  kernels::parallel::gram(unit.units, n, D, sims);

  // coeff[q*n + k] = d term_q / d S(q, k)
  std::vector<double> coeff(n * n, 0.0);
  std::vector<double> terms(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(n); ++qi) {
    const auto q = static_cast<std::size_t>(qi);
    std::span<const double> row(sims.data() + q * n, n);
    const std::size_t pos = batch.partner(q);
    const auto dropped = clipped_negatives(row, q, pos, eta);
    terms[q] = query_term(row, q, pos, dropped, tau);

    double peak = row[pos];
    for (std::size_t k = 0; k < n; ++k) {
      if (k != q && !dropped[k]) peak = std::max(peak, row[k]);
    }
    double denom = 0.0;
    double* c = coeff.data() + q * n;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == q || dropped[k]) continue;
      c[k] = std::exp((row[k] - peak) / tau);
      denom += c[k];
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (k == q || dropped[k]) continue;
      c[k] = (c[k] / denom - (k == pos ? 1.0 : 0.0)) / tau;
    }
  }

  ContrastiveGradient out;
  out.loss = pairwise_sum(terms);
  out.d_rows.assign(n * D, 0.0);
  // S is symmetric, so row r collects both its query and key roles.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ri = 0; ri < static_cast<std::ptrdiff_t>(n); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    const double* ur = unit.units.data() + r * D;
    double* g = out.d_rows.data() + r * D;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == r) continue;
      const double h = coeff[r * n + k] + coeff[k * n + r];
      if (h == 0.0) continue;
      const double s = sims[r * n + k];
      const double* uk = unit.units.data() + k * D;
      for (std::size_t j = 0; j < D; ++j) g[j] += h * (uk[j] - s * ur[j]);
    }
    const double inv = 1.0 / unit.norms[r];
    for (std::size_t j = 0; j < D; ++j) g[j] *= inv;
  }
  return out;
}

double codeword_regularizer(const Codebooks& C) {
  const std::size_t M = C.num_books(), K = C.num_codewords(),
                    d = C.sub_dim();
  if (K < 2) {
    throw Error(ErrorCode::kInvalidArgument, "need K >= 2 codewords");
  }
  // sum_{i != j} cos(c_i, c_j) = ||sum_i v_i||^2 - sum_i ||v_i||^2, with
  // v_i the unit codewords.
  std::vector<double> per_book(M);
  std::vector<double> acc(d);
  for (std::size_t m = 0; m < M; ++m) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double self = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      const auto c = C.codeword(m, i);
      double sq = 0.0;
      for (double x : c) sq += x * x;
      if (!(sq > 0.0)) throw Error(ErrorCode::kZeroNorm, "zero codeword");
      const double inv = 1.0 / std::sqrt(sq);
      double vv = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double v = c[j] * inv;
        acc[j] += v;
        vv += v * v;
      }
      self += vv;
    }
    double total = 0.0;
    for (double a : acc) total += a * a;
    per_book[m] = (total - self) / static_cast<double>(K * (K - 1));
  }
  return std::accumulate(per_book.begin(), per_book.end(), 0.0) /
         static_cast<double>(M);
}

std::vector<double> codeword_regularizer_gradient(const Codebooks& C) {
  const std::size_t M = C.num_books(), K = C.num_codewords(),
                    d = C.sub_dim();
  if (K < 2) {
    throw Error(ErrorCode::kInvalidArgument, "need K >= 2 codewords");
  }
  std::vector<double> grad(C.weights().size(), 0.0);
  const double scale = 2.0 / (static_cast<double>(M) * K * (K - 1));
  std::vector<double> acc(d), inv_norm(K);
  for (std::size_t m = 0; m < M; ++m) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t i = 0; i < K; ++i) {
      const auto c = C.codeword(m, i);
      double sq = 0.0;
      for (double x : c) sq += x * x;
      if (!(sq > 0.0)) throw Error(ErrorCode::kZeroNorm, "zero codeword");
      inv_norm[i] = 1.0 / std::sqrt(sq);
      for (std::size_t j = 0; j < d; ++j) acc[j] += c[j] * inv_norm[i];
    }
    // d/dv_i = scale * (sum_j v_j - v_i); the -v_i part is orthogonal to
    // the sphere tangent and drops out below.
    for (std::size_t i = 0; i < K; ++i) {
      const auto c = C.codeword(m, i);
      double gv = 0.0;
      for (std::size_t j = 0; j < d; ++j) gv += acc[j] * c[j] * inv_norm[i];
      double* g = grad.data() + (m * K + i) * d;
      for (std::size_t j = 0; j < d; ++j) {
        g[j] = scale * (acc[j] - gv * c[j] * inv_norm[i]) * inv_norm[i];
      }
    }
  }
  return grad;
}

LossBreakdown total_objective(const BatchViews& batch, const Codebooks& C,
                              std::span<const double> head_weights, double tau,
                              std::size_t eta, double beta, double gamma) {
  LossBreakdown out;
  out.contrastive = clipped_loss(batch, tau, eta);
  for (double w : head_weights) out.weight_decay += w * w;
  out.codeword_reg = codeword_regularizer(C);
  out.total = out.contrastive + beta * out.weight_decay +
              gamma * out.codeword_reg;
  return out;
}

}  // namespace clipq
