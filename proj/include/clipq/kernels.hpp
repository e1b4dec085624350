#pragma once

// Data-parallel inner loops. Each kernel has a serial reference in
// `serial::` and an OpenMP version in `parallel::`; both produce identical
// results for any thread count.

#include <cstddef>
#include <cstdint>
#include <span>

#include "clipq/quantizer.hpp"

namespace clipq::kernels {

/// Items scored per tile by the blocked scan.
inline constexpr std::size_t kScanBlock = 256;

namespace serial {

/// scores[n] = sum_m lut[m*K + codes[n*M + m]], accumulated in m order.
template <class Code>
void adc_scan(std::span<const float> lut, std::size_t M, std::size_t K,
              std::span<const Code> codes, std::span<float> scores);

/// out[i*n + j] = rows_i . rows_j for n rows of width dim.
void gram(std::span<const double> rows, std::size_t n, std::size_t dim,
          std::span<double> out);

/// Hard-quantize n row vectors of width C.dim() into n*M codes.
template <class Code>
void hard_encode(std::span<const double> rows, std::size_t n,
                 const Codebooks& C, std::span<Code> codes);

}  // namespace serial

namespace parallel {

template <class Code>
void adc_scan(std::span<const float> lut, std::size_t M, std::size_t K,
              std::span<const Code> codes, std::span<float> scores);

void gram(std::span<const double> rows, std::size_t n, std::size_t dim,
          std::span<double> out);

template <class Code>
void hard_encode(std::span<const double> rows, std::size_t n,
                 const Codebooks& C, std::span<Code> codes);

}  // namespace parallel

/// Threads OpenMP will use (1 when built without OpenMP).
int max_threads();
/// Honors CLIPQ_THREADS when set; no-op otherwise.
void configure_threads_from_env();

}  // namespace clipq::kernels
