#include <memory>
#include <algorithm>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "clipq/error.hpp"
#include "clipq/evaluation.hpp"

using namespace clipq;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

double ap(std::initializer_list<bool> flags, std::size_t R) {
  std::vector<char> storage(flags.begin(), flags.end());
  auto buf = std::make_unique<bool[]>(storage.size());
  std::copy(storage.begin(), storage.end(), buf.get());
  return average_precision({buf.get(), storage.size()}, R);
}

}  // namespace

TEST_CASE("relevance is label intersection") {
  const std::uint32_t cat = 0, dog = 1, sky = 2, water = 3, boat = 4;
  CHECK(is_relevant(LabelSet::single(5, cat), LabelSet::single(5, cat)));
  CHECK(!is_relevant(LabelSet::single(5, cat), LabelSet::single(5, dog)));
  LabelSet a(5), b(5);
  a.set(sky);
  a.set(water);
  b.set(water);
  b.set(boat);
  CHECK(is_relevant(a, b));
  CHECK(code_of([] {
          is_relevant(LabelSet::single(5, 0), LabelSet::single(6, 0));
        }) == ErrorCode::kVocabularyMismatch);
}

TEST_CASE("average precision examples") {
  CHECK(ap({true, false, true}, 3) == doctest::Approx(0.8333333333333333));
  CHECK(ap({true, true, true, true}, 4) == 1.0);
  CHECK(ap({false, false, false}, 3) == 0.0);
  // Relevant items past the cutoff do not count.
  CHECK(ap({false, false, true}, 2) == 0.0);
  CHECK(ap({true, false, true}, 1) == 1.0);
  CHECK(code_of([] { average_precision({}, 3); }) == ErrorCode::kEmptyInput);
  CHECK(code_of([] { ap({true}, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("denominator conventions") {
  auto buf = std::make_unique<bool[]>(3);
  buf[0] = true;
  buf[1] = false;
  buf[2] = true;
  const std::span<const bool> flags(buf.get(), 3);
  CHECK(average_precision(flags, 3, ApDenominator::kRetrievedRelevant) ==
        doctest::Approx(5.0 / 6.0));
  // Ten relevant items exist but only three fit under R: divide by 3.
  CHECK(average_precision(flags, 3, ApDenominator::kAllRelevant, 10) ==
        doctest::Approx((1.0 + 2.0 / 3.0) / 3.0));
  CHECK(code_of([&] {
          average_precision(flags, 3, ApDenominator::kAllRelevant, 1);
        }) == ErrorCode::kInvalidArgument);
}

// Holds inside the top-R window; pulling an item across the cutoff can lower
// the truncated-denominator AP, e.g. [1,0,1] at R=3 vs the same at R=2.
TEST_CASE("moving a relevant item earlier within the window never lowers AP") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + trial % 30;
    auto flags = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) flags[i] = coin(rng);
    const std::size_t R = 1 + trial % n;
    for (std::size_t i = 0; i + 1 < R; ++i) {
      if (flags[i] || !flags[i + 1]) continue;
      const double before = average_precision({flags.get(), n}, R);
      std::swap(flags[i], flags[i + 1]);
      const double after = average_precision({flags.get(), n}, R);
      std::swap(flags[i], flags[i + 1]);
      CHECK(after >= before - 1e-15);
      CHECK(after >= 0.0);
      CHECK(after <= 1.0);
    }
  }
}

TEST_CASE("AP agrees with the definition on random rankings") {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 40;
    std::vector<int> ints(n);
    auto flags = std::make_unique<bool[]>(n);
    for (std::size_t i = 0; i < n; ++i) flags[i] = ints[i] = coin(rng);
    const std::size_t R = 1 + trial % 50;
    CHECK(average_precision({flags.get(), n}, R) ==
          oracle::average_precision(ints, R));
  }
}

TEST_CASE("mAP over a database") {
  // Items on two orthogonal axes, each axis its own class.
  FeatureSet items;
  items.views = 1;
  items.dim = 2;
  items.vocab_size = 2;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const std::vector<float> f = i % 2 == 0 ? std::vector<float>{1.0f, 0.1f * i}
                                            : std::vector<float>{0.1f * i, 1.0f};
    items.push_back(i, LabelSet::single(2, static_cast<std::uint32_t>(i % 2)), f);
  }
  const auto head = ProjectionHead::identity(2);
  Codebooks C(1, 2, 2, {1, 0, 0, 1});
  const auto db = build_database(items, head, C);

  FeatureSet queries = items;
  const auto perfect = mean_average_precision(queries, db, head, {5});
  CHECK(perfect.map == 1.0);
  CHECK(perfect.per_query.size() == 10);

  // Every database item shares every query's label.
  FeatureSet shared = items;
  shared.vocab_size = 1;
  for (auto& l : shared.labels) l = LabelSet::single(1, 0);
  const auto db_shared = build_database(shared, head, C);
  CHECK(mean_average_precision(shared, db_shared, head, {10}).map == 1.0);

  // Query with the wrong label everywhere.
  FeatureSet wrong;
  wrong.views = 1;
  wrong.dim = 2;
  wrong.vocab_size = 2;
  const std::vector<float> x{1.0f, 0.0f};
  wrong.push_back(99, LabelSet::single(2, 1), x);
  CHECK(mean_average_precision(wrong, db, head, {5}).map == 0.0);

  EvalOptions exclude{5, true, ApDenominator::kRetrievedRelevant};
  CHECK(mean_average_precision(queries, db, head, exclude).map == 1.0);

  FeatureSet other_vocab = wrong;
  other_vocab.vocab_size = 3;
  other_vocab.labels[0] = LabelSet::single(3, 0);
  CHECK(code_of([&] { mean_average_precision(other_vocab, db, head, {5}); }) ==
        ErrorCode::kVocabularyMismatch);
  CHECK(code_of([&] { mean_average_precision(FeatureSet{1, 2, 2, 0, {}, {}, {}}, db, head, {5}); }) ==
        ErrorCode::kEmptyInput);
}

TEST_CASE("mAP is the arithmetic mean of per-query AP") {
  FeatureSet items;
  items.views = 1;
  items.dim = 2;
  items.vocab_size = 2;
  // Ranked order for query along x: ids 0 (rel), 1 (irrel), 2 (rel).
  items.push_back(0, LabelSet::single(2, 0), std::vector<float>{1.0f, 0.0f});
  items.push_back(1, LabelSet::single(2, 1), std::vector<float>{0.8f, 0.6f});
  items.push_back(2, LabelSet::single(2, 0), std::vector<float>{0.6f, 0.8f});
  const auto head = ProjectionHead::identity(2);
  Codebooks C(1, 4, 2, {1.0, 0.0, 0.8, 0.6, 0.6, 0.8, 0.0, 1.0});
  const auto db = build_database(items, head, C);

  FeatureSet queries;
  queries.views = 1;
  queries.dim = 2;
  queries.vocab_size = 2;
  queries.push_back(50, LabelSet::single(2, 0), std::vector<float>{1.0f, 0.0f});
  queries.push_back(51, LabelSet::single(2, 1), std::vector<float>{1.0f, 0.0f});
  const auto r = mean_average_precision(queries, db, head, {3});
  CHECK(r.per_query[0] == doctest::Approx(5.0 / 6.0));
  CHECK(r.per_query[1] == doctest::Approx(0.5));
  CHECK(r.map == doctest::Approx((5.0 / 6.0 + 0.5) / 2.0));
}

TEST_CASE("quantiles interpolate") {
  CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
  CHECK(quantile({1, 2}, 0.25) == doctest::Approx(1.25));
  CHECK(code_of([] { quantile({}, 0.5); }) == ErrorCode::kEmptyInput);
}
