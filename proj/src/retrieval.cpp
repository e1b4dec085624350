#include "clipq/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <zlib.h>

#include "clipq/error.hpp"
#include "clipq/kernels.hpp"

namespace clipq {

namespace {

std::size_t width_for(std::size_t K) { return K <= 256 ? 1 : 2; }

std::vector<std::uint16_t> widen(const std::vector<std::uint8_t>& bytes) {
  std::vector<std::uint16_t> out(bytes.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
  }
  return out;
}

void check_lut(const LookupTable& lut, const Codebooks& C) {
  if (lut.num_books != C.num_books() || lut.num_codewords != C.num_codewords() ||
      lut.scores.size() != lut.num_books * lut.num_codewords) {
    throw Error(ErrorCode::kDimensionMismatch, "lookup table shape");
  }
}

}  // namespace

CodeDatabase::CodeDatabase(Codebooks codebooks, std::uint32_t vocab_size,
                           std::vector<std::uint64_t> item_ids,
                           std::vector<LabelSet> labels,
                           std::vector<std::uint8_t> codes,
                           std::uint64_t seed, std::uint64_t hyper_hash)
    : codebooks_(std::move(codebooks)),
      vocab_size_(vocab_size),
      item_ids_(std::move(item_ids)),
      labels_(std::move(labels)),
      codes_(std::move(codes)),
      seed_(seed),
      hyper_hash_(hyper_hash) {
  validate();
}

std::size_t CodeDatabase::code_width() const noexcept {
  return width_for(codebooks_.num_codewords());
}

void CodeDatabase::validate() const {
  codebooks_.validate();
  if (labels_.size() != item_ids_.size() ||
      codes_.size() != item_ids_.size() * bytes_per_item()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "database rows: " + std::to_string(item_ids_.size()) +
                    " ids, " + std::to_string(labels_.size()) + " labels, " +
                    std::to_string(codes_.size()) + " code bytes");
  }
  for (const auto& l : labels_) {
    if (l.vocab_size() != vocab_size_) {
      throw Error(ErrorCode::kVocabularyMismatch, "database labels");
    }
  }
  const std::size_t K = codebooks_.num_codewords();
  if (code_width() == 2) {
    for (auto c : widen(codes_)) {
      if (c >= K) throw Error(ErrorCode::kIndexOutOfRange, "code entry");
    }
  } else if (K < 256) {
    for (auto c : codes_) {
      if (c >= K) throw Error(ErrorCode::kIndexOutOfRange, "code entry");
    }
  }
}

HardCode CodeDatabase::code(std::size_t item) const {
  if (item >= size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "database item");
  }
  const std::size_t M = num_books(), w = code_width();
  HardCode out;
  out.indices.resize(M);
  const std::uint8_t* row = codes_.data() + item * M * w;
  for (std::size_t m = 0; m < M; ++m) {
    out.indices[m] = w == 1 ? row[m] : (row[2 * m] | (row[2 * m + 1] << 8));
  }
  return out;
}

std::uint32_t CodeDatabase::checksum() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, codes_.data(), static_cast<uInt>(codes_.size()));
  crc = crc32(crc, reinterpret_cast<const Bytef*>(item_ids_.data()),
              static_cast<uInt>(item_ids_.size() * sizeof(std::uint64_t)));
  for (const auto& l : labels_) {
    const auto bytes = l.to_bytes();
    crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  }
  return static_cast<std::uint32_t>(crc);
}

Codebooks to_storage_precision(const Codebooks& C) {
  std::vector<double> w(C.weights().size());
  std::transform(C.weights().begin(), C.weights().end(), w.begin(),
                 [](double x) {
                   return static_cast<double>(static_cast<float>(x));
                 });
  return Codebooks(C.num_books(), C.num_codewords(), C.sub_dim(),
                   std::move(w));
}

CodeDatabase build_database(const FeatureSet& items, const ProjectionHead& head,
                            const Codebooks& C, std::uint64_t seed,
                            std::uint64_t hyper_hash) {
  if (items.empty()) {
    throw Error(ErrorCode::kEmptyInput, "no database items");
  }
  if (items.dim != head.in_dim() || head.out_dim() != C.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "features of width " + std::to_string(items.dim) +
                    " vs head " + std::to_string(head.in_dim()) + "->" +
                    std::to_string(head.out_dim()) + " vs codebooks " +
                    std::to_string(C.dim()));
  }
  items.validate();
  Codebooks stored = to_storage_precision(C);
  const std::size_t N = items.size(), D = C.dim(), M = C.num_books();

  std::vector<double> z(N * D);
  for (std::size_t n = 0; n < N; ++n) {
    const auto zn = head.project(items.view(n, 0));
    std::copy(zn.begin(), zn.end(),
              z.begin() + static_cast<std::ptrdiff_t>(n * D));
  }

  std::vector<std::uint8_t> bytes;
  if (width_for(C.num_codewords()) == 1) {
    bytes.resize(N * M);
    kernels::parallel::hard_encode<std::uint8_t>(z, N, stored, bytes);
  } else {
    std::vector<std::uint16_t> wide(N * M);
    kernels::parallel::hard_encode<std::uint16_t>(z, N, stored, wide);
    bytes.resize(N * M * 2);
    for (std::size_t i = 0; i < wide.size(); ++i) {
      bytes[2 * i] = static_cast<std::uint8_t>(wide[i] & 0xff);
      bytes[2 * i + 1] = static_cast<std::uint8_t>(wide[i] >> 8);
    }
  }
  return CodeDatabase(std::move(stored), items.vocab_size, items.item_ids,
                      items.labels, std::move(bytes), seed, hyper_hash);
}

LookupTable build_lookup_table(std::span<const double> z, const Codebooks& C) {
  if (z.size() != C.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "query width");
  }
  const std::size_t M = C.num_books(), K = C.num_codewords();
  LookupTable lut{M, K, std::vector<float>(M * K)};
  std::vector<double> row(K);
  for (std::size_t m = 0; m < M; ++m) {
    segment_scores(z, C, m, row);
    for (std::size_t i = 0; i < K; ++i) {
      lut.scores[m * K + i] = static_cast<float>(row[i]);
    }
  }
  for (float s : lut.scores) {
    if (!std::isfinite(s)) throw Error(ErrorCode::kNonFinite, "table entry");
  }
  return lut;
}

LookupTable build_lookup_table(std::span<const float> raw,
                               const ProjectionHead& head,
                               const Codebooks& C) {
  return build_lookup_table(head.project(raw), C);
}

float asymmetric_score(const LookupTable& lut, const HardCode& code) {
  if (code.indices.size() != lut.num_books) {
    throw Error(ErrorCode::kDimensionMismatch,
                "code of width " + std::to_string(code.indices.size()) +
                    " for a table with " + std::to_string(lut.num_books) +
                    " books");
  }
  float s = 0.0f;
  for (std::size_t m = 0; m < lut.num_books; ++m) {
    const auto i = code.indices[m];
    if (i >= lut.num_codewords) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "codeword " + std::to_string(i));
    }
    s += lut.at(m, i);
  }
  return s;
}

RetrievalResult select_top_k(std::span<const float> scores,
                             std::span<const std::uint64_t> item_ids,
                             std::size_t k,
                             std::optional<std::uint64_t> exclude_id) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (scores.size() != item_ids.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "scores vs ids");
  }
  std::vector<std::size_t> rows;
  rows.reserve(scores.size());
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (!exclude_id || item_ids[n] != *exclude_id) rows.push_back(n);
  }
  const std::size_t keep = std::min(k, rows.size());
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(keep),
                    rows.end(), [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return item_ids[a] < item_ids[b];
                    });
  RetrievalResult out;
  out.k_requested = k;
  out.item_ids.reserve(keep);
  out.scores.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.item_ids.push_back(item_ids[rows[i]]);
    out.scores.push_back(scores[rows[i]]);
  }
  return out;
}

RetrievalResult query_top_k(const CodeDatabase& db, const LookupTable& lut,
                            std::size_t k,
                            std::optional<std::uint64_t> exclude_id) {
  if (db.empty()) throw Error(ErrorCode::kEmptyInput, "empty database");
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  check_lut(lut, db.codebooks());
  std::vector<float> scores(db.size());
  const std::size_t M = db.num_books(), K = lut.num_codewords;
  if (db.code_width() == 1) {
    kernels::parallel::adc_scan<std::uint8_t>(lut.scores, M, K,
                                              db.code_bytes(), scores);
  } else {
    const auto wide = widen(db.code_bytes());
    kernels::parallel::adc_scan<std::uint16_t>(lut.scores, M, K, wide,
                                               scores);
  }
  return select_top_k(scores, db.item_ids(), k, exclude_id);
}

RetrievalResult query_top_k(const CodeDatabase& db,
                            std::span<const float> raw,
                            const ProjectionHead& head, std::size_t k,
                            std::optional<std::uint64_t> exclude_id) {
  if (db.empty()) throw Error(ErrorCode::kEmptyInput, "empty database");
  return query_top_k(db, build_lookup_table(raw, head, db.codebooks()), k,
                     exclude_id);
}

}  // namespace clipq
