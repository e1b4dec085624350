#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "clipq/dataset.hpp"
#include "clipq/model.hpp"
#include "clipq/quantizer.hpp"

namespace clipq {

/// Per-query table of segment/codeword inner products, M x K floats.
struct LookupTable {
  std::size_t num_books = 0;
  std::size_t num_codewords = 0;
  std::vector<float> scores;

  float at(std::size_t m, std::size_t i) const {
    return scores[m * num_codewords + i];
  }
  friend bool operator==(const LookupTable&, const LookupTable&) = default;
};

/// Immutable hard-code database. Codes are M indices per item, stored one
/// byte each when K <= 256 and two bytes (little-endian) otherwise.
class CodeDatabase {
 public:
  CodeDatabase() = default;
  CodeDatabase(Codebooks codebooks, std::uint32_t vocab_size,
               std::vector<std::uint64_t> item_ids,
               std::vector<LabelSet> labels, std::vector<std::uint8_t> codes,
               std::uint64_t seed, std::uint64_t hyper_hash);

  std::size_t size() const noexcept { return item_ids_.size(); }
  bool empty() const noexcept { return item_ids_.empty(); }
  std::size_t num_books() const noexcept { return codebooks_.num_books(); }
  std::size_t code_width() const noexcept;
  std::size_t bytes_per_item() const noexcept {
    return num_books() * code_width();
  }

  const Codebooks& codebooks() const noexcept { return codebooks_; }
  std::uint32_t vocab_size() const noexcept { return vocab_size_; }
  const std::vector<std::uint64_t>& item_ids() const noexcept {
    return item_ids_;
  }
  const std::vector<LabelSet>& labels() const noexcept { return labels_; }
  const std::vector<std::uint8_t>& code_bytes() const noexcept {
    return codes_;
  }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t hyper_hash() const noexcept { return hyper_hash_; }

  HardCode code(std::size_t item) const;

  /// CRC-32 over codes, ids, and labels.
  std::uint32_t checksum() const;

  void validate() const;

  friend bool operator==(const CodeDatabase&, const CodeDatabase&) = default;

 private:
  Codebooks codebooks_;
  std::uint32_t vocab_size_ = 0;
  std::vector<std::uint64_t> item_ids_;
  std::vector<LabelSet> labels_;
  std::vector<std::uint8_t> codes_;
  std::uint64_t seed_ = 0;
  std::uint64_t hyper_hash_ = 0;
};

/// Codebooks rounded to float precision, as stored in a database.
Codebooks to_storage_precision(const Codebooks& C);

/// Hard-quantizes view 0 of every item.
CodeDatabase build_database(const FeatureSet& items, const ProjectionHead& head,
                            const Codebooks& C, std::uint64_t seed = 0,
                            std::uint64_t hyper_hash = 0);

LookupTable build_lookup_table(std::span<const double> z, const Codebooks& C);
LookupTable build_lookup_table(std::span<const float> raw,
                               const ProjectionHead& head, const Codebooks& C);

float asymmetric_score(const LookupTable& lut, const HardCode& code);

struct RetrievalResult {
  std::vector<std::uint64_t> item_ids;
  std::vector<float> scores;
  std::size_t k_requested = 0;
};

/// Ranks `scores` (one per database row) by descending score, ties by
/// ascending item id, and keeps the first k. Rows whose id equals
/// `exclude_id` are skipped.
RetrievalResult select_top_k(std::span<const float> scores,
                             std::span<const std::uint64_t> item_ids,
                             std::size_t k,
                             std::optional<std::uint64_t> exclude_id = {});

/// Exhaustive LUT scan of the database.
RetrievalResult query_top_k(const CodeDatabase& db, const LookupTable& lut,
                            std::size_t k,
                            std::optional<std::uint64_t> exclude_id = {});
RetrievalResult query_top_k(const CodeDatabase& db,
                            std::span<const float> raw,
                            const ProjectionHead& head, std::size_t k,
                            std::optional<std::uint64_t> exclude_id = {});

}  // namespace clipq
