#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace clipq {

/// M codebooks of K codewords, each codeword d = D/M wide. Row-major
/// [m][i][j] in one flat buffer.
class Codebooks {
 public:
  Codebooks() = default;
  /// Zero-initialized. Fails unless K is a power of two >= 2 and M, d > 0.
  Codebooks(std::size_t M, std::size_t K, std::size_t d);
  Codebooks(std::size_t M, std::size_t K, std::size_t d,
            std::vector<double> weights);

  std::size_t num_books() const noexcept { return M_; }
  std::size_t num_codewords() const noexcept { return K_; }
  std::size_t sub_dim() const noexcept { return d_; }
  std::size_t dim() const noexcept { return M_ * d_; }
  /// log2(K); bits spent per segment index.
  unsigned bits_per_index() const noexcept;

  std::span<const double> codeword(std::size_t m, std::size_t i) const {
    return {weights_.data() + (m * K_ + i) * d_, d_};
  }
  std::span<double> codeword(std::size_t m, std::size_t i) {
    return {weights_.data() + (m * K_ + i) * d_, d_};
  }
  std::span<const double> book(std::size_t m) const {
    return {weights_.data() + m * K_ * d_, K_ * d_};
  }

  const std::vector<double>& weights() const noexcept { return weights_; }
  std::vector<double>& weights() noexcept { return weights_; }

  /// Throws unless the weights are all finite and sized M*K*d.
  void validate() const;

  friend bool operator==(const Codebooks&, const Codebooks&) = default;

 private:
  std::size_t M_ = 0;
  std::size_t K_ = 0;
  std::size_t d_ = 0;
  std::vector<double> weights_;
};

struct SoftAssignment {
  std::size_t num_books = 0;
  std::size_t num_codewords = 0;
  std::vector<double> probs;           // M x K, row-stochastic
  std::vector<double> reconstruction;  // D

  std::span<const double> row(std::size_t m) const {
    return {probs.data() + m * num_codewords, num_codewords};
  }
};

struct HardCode {
  std::vector<std::uint32_t> indices;
  friend bool operator==(const HardCode&, const HardCode&) = default;
};

/// Contiguous, order-preserving split into M equal segments.
std::vector<std::vector<double>> segment(std::span<const double> z,
                                         std::size_t M);

/// Returns z / ||z||; throws kZeroNorm on a zero vector.
std::vector<double> l2_normalized(std::span<const double> z);

/// alpha-softmax assignment of every segment over its codebook, plus the
/// concatenated convex-combination reconstruction.
SoftAssignment soft_quantize(std::span<const double> z, const Codebooks& C,
                             double alpha);

/// Index of the best-scoring codeword per segment; ties go to the lowest
/// index.
HardCode hard_quantize(std::span<const double> z, const Codebooks& C);

/// Shared helper: z^m . c^m_i for every i, written to `scores` (size K).
void segment_scores(std::span<const double> z, const Codebooks& C,
                    std::size_t m, std::span<double> scores);

}  // namespace clipq
