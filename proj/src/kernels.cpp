#include "clipq/kernels.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "clipq/error.hpp"

namespace clipq::kernels {

namespace {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += a[j] * b[j];
  return s;
}

template <class Code>
void encode_row(const double* z, const Codebooks& C, Code* out) {
  const std::size_t M = C.num_books(), K = C.num_codewords(),
                    d = C.sub_dim();
  for (std::size_t m = 0; m < M; ++m) {
    const double* seg = z + m * d;
    const double* book = C.book(m).data();
    double best = dot(seg, book, d);
    std::size_t best_i = 0;
    for (std::size_t i = 1; i < K; ++i) {
      const double s = dot(seg, book + i * d, d);
      if (s > best) {  // strict: lowest index keeps ties
        best = s;
        best_i = i;
      }
    }
    out[m] = static_cast<Code>(best_i);
  }
}

void check_scan(std::size_t lut_size, std::size_t M, std::size_t K,
                std::size_t codes, std::size_t scores) {
  if (lut_size != M * K || codes != scores * M) {
    throw Error(ErrorCode::kDimensionMismatch, "adc scan operands");
  }
}

void check_encode(std::size_t rows, std::size_t n, const Codebooks& C,
                  std::size_t codes) {
  if (rows != n * C.dim() || codes != n * C.num_books()) {
    throw Error(ErrorCode::kDimensionMismatch, "encode operands");
  }
}

}  // namespace

namespace serial {

template <class Code>
void adc_scan(std::span<const float> lut, std::size_t M, std::size_t K,
              std::span<const Code> codes, std::span<float> scores) {
  check_scan(lut.size(), M, K, codes.size(), scores.size());
  for (std::size_t n = 0; n < scores.size(); ++n) {
    float s = 0.0f;
    for (std::size_t m = 0; m < M; ++m) s += lut[m * K + codes[n * M + m]];
    scores[n] = s;
  }
}

void gram(std::span<const double> rows, std::size_t n, std::size_t dim,
          std::span<double> out) {
  if (rows.size() != n * dim || out.size() != n * n) {
    throw Error(ErrorCode::kDimensionMismatch, "gram operands");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = dot(rows.data() + i * dim, rows.data() + j * dim, dim);
    }
  }
}

template <class Code>
void hard_encode(std::span<const double> rows, std::size_t n,
                 const Codebooks& C, std::span<Code> codes) {
  check_encode(rows.size(), n, C, codes.size());
  for (std::size_t r = 0; r < n; ++r) {
    encode_row(rows.data() + r * C.dim(), C,
               codes.data() + r * C.num_books());
  }
}

template void adc_scan<std::uint8_t>(std::span<const float>, std::size_t,
                                     std::size_t,
                                     std::span<const std::uint8_t>,
                                     std::span<float>);
template void adc_scan<std::uint16_t>(std::span<const float>, std::size_t,
                                      std::size_t,
                                      std::span<const std::uint16_t>,
                                      std::span<float>);
template void hard_encode<std::uint8_t>(std::span<const double>, std::size_t,
                                        const Codebooks&,
                                        std::span<std::uint8_t>);
template void hard_encode<std::uint16_t>(std::span<const double>,
                                         std::size_t, const Codebooks&,
                                         std::span<std::uint16_t>);

}  // namespace serial

namespace parallel {

template <class Code>
void adc_scan(std::span<const float> lut, std::size_t M, std::size_t K,
              std::span<const Code> codes, std::span<float> scores) {
  check_scan(lut.size(), M, K, codes.size(), scores.size());
  const std::size_t N = scores.size();
  const auto blocks =
      static_cast<std::ptrdiff_t>((N + kScanBlock - 1) / kScanBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kScanBlock;
    const std::size_t len = std::min(kScanBlock, N - begin);
    std::array<float, kScanBlock> acc{};
    const Code* block = codes.data() + begin * M;
    // One LUT row at a time across the whole tile.
    for (std::size_t m = 0; m < M; ++m) {
      const float* row = lut.data() + m * K;
      for (std::size_t i = 0; i < len; ++i) acc[i] += row[block[i * M + m]];
    }
    std::copy_n(acc.begin(), len, scores.begin() + begin);
  }
}

void gram(std::span<const double> rows, std::size_t n, std::size_t dim,
          std::span<double> out) {
  if (rows.size() != n * dim || out.size() != n * n) {
    throw Error(ErrorCode::kDimensionMismatch, "gram operands");
  }
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = i; j < n; ++j) {
      const double s = dot(rows.data() + i * dim, rows.data() + j * dim, dim);
      out[i * n + j] = s;
      out[j * n + i] = s;
    }
  }
}

template <class Code>
void hard_encode(std::span<const double> rows, std::size_t n,
                 const Codebooks& C, std::span<Code> codes) {
  check_encode(rows.size(), n, C, codes.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(n); ++r) {
    const auto row = static_cast<std::size_t>(r);
    encode_row(rows.data() + row * C.dim(), C,
               codes.data() + row * C.num_books());
  }
}

template void adc_scan<std::uint8_t>(std::span<const float>, std::size_t,
                                     std::size_t,
                                     std::span<const std::uint8_t>,
                                     std::span<float>);
template void adc_scan<std::uint16_t>(std::span<const float>, std::size_t,
                                      std::size_t,
                                      std::span<const std::uint16_t>,
                                      std::span<float>);
template void hard_encode<std::uint8_t>(std::span<const double>, std::size_t,
                                        const Codebooks&,
                                        std::span<std::uint8_t>);
template void hard_encode<std::uint16_t>(std::span<const double>,
                                         std::size_t, const Codebooks&,
                                         std::span<std::uint16_t>);

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void configure_threads_from_env() {
  const char* env = std::getenv("CLIPQ_THREADS");
  if (env == nullptr || *env == '\0') return;
  int n = 0;
  try {
    n = std::stoi(env);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("CLIPQ_THREADS=") + env);
  }
  if (n < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("CLIPQ_THREADS=") + env);
  }
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
}

}  // namespace clipq::kernels
