#include "clipq/dataset.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "clipq/error.hpp"

namespace clipq {

LabelSet::LabelSet(std::uint32_t vocab_size)
    : vocab_size_(vocab_size), words_((vocab_size + 63) / 64, 0) {}

LabelSet LabelSet::single(std::uint32_t vocab_size, std::uint32_t label) {
  LabelSet s(vocab_size);
  s.set(label);
  return s;
}

bool LabelSet::test(std::uint32_t label) const {
  if (label >= vocab_size_) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "label " + std::to_string(label) + " outside vocabulary of " +
                    std::to_string(vocab_size_));
  }
  return (words_[label / 64] >> (label % 64)) & 1u;
}

void LabelSet::set(std::uint32_t label) {
  if (label >= vocab_size_) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "label " + std::to_string(label) + " outside vocabulary of " +
                    std::to_string(vocab_size_));
  }
  words_[label / 64] |= std::uint64_t{1} << (label % 64);
}

bool LabelSet::empty() const noexcept {
  for (auto w : words_) {
    if (w != 0) return false;
  }
  return true;
}

std::size_t LabelSet::count() const noexcept {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

bool LabelSet::intersects(const LabelSet& other) const {
  if (vocab_size_ != other.vocab_size_) {
    throw Error(ErrorCode::kVocabularyMismatch,
                std::to_string(vocab_size_) + " vs " +
                    std::to_string(other.vocab_size_));
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] & other.words_[i]) return true;
  }
  return false;
}

std::vector<std::uint8_t> LabelSet::to_bytes() const {
  std::vector<std::uint8_t> out((vocab_size_ + 7) / 8, 0);
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b] = static_cast<std::uint8_t>(words_[b / 8] >> ((b % 8) * 8));
  }
  return out;
}

LabelSet LabelSet::from_bytes(std::uint32_t vocab_size,
                              std::span<const std::uint8_t> bytes) {
  if (bytes.size() != (vocab_size + 7) / 8) {
    throw Error(ErrorCode::kDimensionMismatch, "label bitset size");
  }
  LabelSet s(vocab_size);
  for (std::size_t b = 0; b < bytes.size(); ++b) {
    s.words_[b / 8] |= std::uint64_t{bytes[b]} << ((b % 8) * 8);
  }
  // Bits past the vocabulary must be clear.
  if (vocab_size % 64 != 0 && !s.words_.empty()) {
    const auto mask = (std::uint64_t{1} << (vocab_size % 64)) - 1;
    if (s.words_.back() & ~mask) {
      throw Error(ErrorCode::kIndexOutOfRange, "label bit beyond vocabulary");
    }
  }
  return s;
}

void FeatureSet::push_back(std::uint64_t id, LabelSet label,
                           std::span<const float> item_views) {
  if (item_views.size() != static_cast<std::size_t>(views) * dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(views * dim) + " values, got " +
                    std::to_string(item_views.size()));
  }
  if (label.vocab_size() != vocab_size) {
    throw Error(ErrorCode::kVocabularyMismatch, "label vocabulary");
  }
  item_ids.push_back(id);
  labels.push_back(std::move(label));
  values.insert(values.end(), item_views.begin(), item_views.end());
}

void FeatureSet::validate() const {
  if (labels.size() != item_ids.size() ||
      values.size() != item_ids.size() * views * dim) {
    throw Error(ErrorCode::kDimensionMismatch, "feature set shape");
  }
  for (const auto& l : labels) {
    if (l.vocab_size() != vocab_size) {
      throw Error(ErrorCode::kVocabularyMismatch, "label vocabulary");
    }
  }
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kNonFinite, "feature value");
    }
  }
}

}  // namespace clipq
