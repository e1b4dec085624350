#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace clipq {

/// Multi-label membership over a fixed category vocabulary.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::uint32_t vocab_size);

  static LabelSet single(std::uint32_t vocab_size, std::uint32_t label);

  std::uint32_t vocab_size() const noexcept { return vocab_size_; }
  bool test(std::uint32_t label) const;
  void set(std::uint32_t label);
  bool empty() const noexcept;
  std::size_t count() const noexcept;

  /// True iff the two sets share at least one label. Throws on vocabulary
  /// mismatch.
  bool intersects(const LabelSet& other) const;

  /// LSB-first packing: label j lives in byte j/8, bit j%8.
  std::vector<std::uint8_t> to_bytes() const;
  static LabelSet from_bytes(std::uint32_t vocab_size,
                             std::span<const std::uint8_t> bytes);

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::uint32_t vocab_size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// N items, each with V views of a D_in-dim feature vector. Storage is
/// float, item-major then view-major.
struct FeatureSet {
  std::uint32_t views = 0;
  std::uint32_t dim = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t flags = 0;
  std::vector<std::uint64_t> item_ids;
  std::vector<LabelSet> labels;
  std::vector<float> values;

  std::size_t size() const noexcept { return item_ids.size(); }
  bool empty() const noexcept { return item_ids.empty(); }

  std::span<const float> view(std::size_t item, std::uint32_t v) const {
    return {values.data() + (item * views + v) * dim, dim};
  }
  std::span<float> view(std::size_t item, std::uint32_t v) {
    return {values.data() + (item * views + v) * dim, dim};
  }

  /// Append an item; `item_views` holds views*dim floats.
  void push_back(std::uint64_t id, LabelSet label,
                 std::span<const float> item_views);

  /// Checks shape consistency and that every value is finite.
  void validate() const;
};

}  // namespace clipq
