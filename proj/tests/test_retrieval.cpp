#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "clipq/error.hpp"
#include "clipq/retrieval.hpp"
#include "clipq/store.hpp"

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

Codebooks unit_books(std::size_t M, std::size_t K, std::size_t d,
                     std::mt19937_64& rng) {
  auto w = oracle::gaussian(M * K * d, rng);
  for (std::size_t c = 0; c < M * K; ++c) {
    double sq = 0;
    for (std::size_t j = 0; j < d; ++j) sq += w[c * d + j] * w[c * d + j];
    for (std::size_t j = 0; j < d; ++j) w[c * d + j] /= std::sqrt(sq);
  }
  return Codebooks(M, K, d, std::move(w));
}

FeatureSet random_items(std::size_t N, std::size_t dim, std::mt19937_64& rng) {
  FeatureSet fs;
  fs.views = 1;
  fs.dim = static_cast<std::uint32_t>(dim);
  fs.vocab_size = 3;
  std::uniform_int_distribution<std::uint32_t> label(0, 2);
  for (std::size_t n = 0; n < N; ++n) {
    const auto v = oracle::gaussian(dim, rng);
    const std::vector<float> f(v.begin(), v.end());
    fs.push_back(100 + n, LabelSet::single(3, label(rng)), f);
  }
  return fs;
}

}  // namespace

TEST_CASE("database code size is M bytes per item for K = 256") {
  std::mt19937_64 rng(1);
  const auto items = random_items(1000, 16, rng);
  const auto C = unit_books(4, 256, 4, rng);
  const auto db = build_database(items, ProjectionHead::identity(16), C);
  CHECK(db.size() == 1000);
  CHECK(db.bytes_per_item() == 4);
  CHECK(db.code_bytes().size() == 4000);
}

TEST_CASE("wide codebooks use two bytes per index") {
  std::mt19937_64 rng(2);
  const auto items = random_items(50, 8, rng);
  const auto C = unit_books(2, 1024, 4, rng);
  const auto db = build_database(items, ProjectionHead::identity(8), C);
  CHECK(db.bytes_per_item() == 4);
  for (std::size_t n = 0; n < db.size(); ++n) {
    const auto z = ProjectionHead::identity(8).project(items.view(n, 0));
    CHECK(db.code(n) == hard_quantize(z, db.codebooks()));
  }
}

TEST_CASE("an item equal to a codeword concatenation gets that code") {
  std::mt19937_64 rng(3);
  const auto C = to_storage_precision(unit_books(2, 16, 4, rng));
  FeatureSet fs;
  fs.views = 1;
  fs.dim = 8;
  fs.vocab_size = 1;
  std::vector<float> f;
  for (double x : C.codeword(0, 5)) f.push_back(static_cast<float>(x));
  for (double x : C.codeword(1, 9)) f.push_back(static_cast<float>(x));
  fs.push_back(7, LabelSet::single(1, 0), f);
  const auto db = build_database(fs, ProjectionHead::identity(8), C);
  CHECK(db.code(0).indices == std::vector<std::uint32_t>{5, 9});
}

TEST_CASE("database build is deterministic and validated") {
  std::mt19937_64 rng(4);
  const auto items = random_items(200, 8, rng);
  const auto C = unit_books(2, 16, 4, rng);
  const auto head = ProjectionHead::identity(8);
  const auto a = store::encode_database(build_database(items, head, C, 3, 9));
  const auto b = store::encode_database(build_database(items, head, C, 3, 9));
  CHECK(a == b);

  CHECK(code_of([&] { build_database(FeatureSet{1, 8, 3, 0, {}, {}, {}}, head, C); }) ==
        ErrorCode::kEmptyInput);
  CHECK(code_of([&] {
          build_database(items, ProjectionHead::identity(4),
                         unit_books(2, 16, 2, rng));
        }) == ErrorCode::kDimensionMismatch);
  CHECK(code_of([&] {
          CodeDatabase(Codebooks(1, 4, 1, {1, 1, 1, 1}), 1, {1},
                       {LabelSet::single(1, 0)}, {4}, 0, 0);
        }) == ErrorCode::kIndexOutOfRange);
}

TEST_CASE("lookup table entries are segment/codeword dot products") {
  Codebooks C(1, 2, 2, {1, 0, 0, 1});
  const std::vector<double> z{1, 0};
  const auto lut = build_lookup_table(z, C);
  CHECK(lut.scores == std::vector<float>{1.0f, 0.0f});
  CHECK(build_lookup_table(z, C) == lut);

  std::mt19937_64 rng(5);
  const auto U = unit_books(3, 8, 4, rng);
  std::vector<double> self;
  for (std::size_t m = 0; m < 3; ++m) {
    for (double x : U.codeword(m, 2 + m)) self.push_back(x);
  }
  const auto t = build_lookup_table(self, U);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(t.at(m, 2 + m) == doctest::Approx(1.0f));
  }
}

TEST_CASE("asymmetric score sums table entries selected by the code") {
  LookupTable lut{2, 2, {0.1f, 0.9f, 0.4f, 0.6f}};
  CHECK(asymmetric_score(lut, HardCode{{1, 0}}) == doctest::Approx(1.3f).epsilon(1e-6));
  LookupTable zero{2, 2, {0, 0, 0, 0}};
  CHECK(asymmetric_score(zero, HardCode{{1, 1}}) == 0.0f);
  CHECK(code_of([&] { asymmetric_score(lut, HardCode{{2, 0}}); }) ==
        ErrorCode::kIndexOutOfRange);
  CHECK(code_of([&] { asymmetric_score(lut, HardCode{{0}}); }) ==
        ErrorCode::kDimensionMismatch);

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto C = unit_books(4, 16, 3, rng);
    const auto z = l2_normalized(oracle::gaussian(12, rng));
    const auto t = build_lookup_table(z, C);
    std::uniform_int_distribution<std::uint32_t> pick(0, 15);
    HardCode code{{pick(rng), pick(rng), pick(rng), pick(rng)}};
    double direct = 0;
    for (std::size_t m = 0; m < 4; ++m) {
      const auto c = C.codeword(m, code.indices[m]);
      for (std::size_t j = 0; j < 3; ++j) direct += z[m * 3 + j] * c[j];
    }
    CHECK(std::abs(asymmetric_score(t, code) - direct) < 1e-6);
    // Unit segments against unit codewords: |score| <= M.
    CHECK(std::abs(asymmetric_score(t, code)) <= 4.0f + 1e-5f);
  }
}

TEST_CASE("query_top_k ranks like a brute-force sort") {
  std::mt19937_64 rng(7);
  const auto head = ProjectionHead::identity(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto items = random_items(300, 8, rng);
    const auto C = unit_books(2, 16, 4, rng);
    const auto db = build_database(items, head, C);
    std::vector<std::uint32_t> codes;
    for (std::size_t n = 0; n < db.size(); ++n) {
      const auto c = db.code(n);
      codes.insert(codes.end(), c.indices.begin(), c.indices.end());
    }
    const auto q = oracle::gaussian(8, rng);
    const std::vector<float> qf(q.begin(), q.end());
    const auto got = query_top_k(db, qf, head, 25);
    const auto z = head.project(qf);
    CHECK(got.item_ids == oracle::brute_force_ranking(
                             z, db.codebooks().weights(), 2, 16, 4, codes,
                             db.item_ids(), 25));
    for (std::size_t i = 1; i < got.scores.size(); ++i) {
      CHECK(got.scores[i] <= got.scores[i - 1]);
    }
  }
}

TEST_CASE("self-retrieval, truncation, ties and errors") {
  std::mt19937_64 rng(8);
  const auto items = random_items(40, 8, rng);
  const auto C = unit_books(2, 16, 4, rng);
  const auto head = ProjectionHead::identity(8);
  const auto db = build_database(items, head, C);

  // A query whose projection is its own reconstruction maximizes every
  // table row at its own code.
  const auto code = db.code(17);
  std::vector<float> recon;
  for (std::size_t m = 0; m < 2; ++m) {
    for (double x : db.codebooks().codeword(m, code.indices[m])) {
      recon.push_back(static_cast<float>(x));
    }
  }
  const auto top = query_top_k(db, recon, head, 1);
  REQUIRE(top.item_ids.size() == 1);
  CHECK(db.code(top.item_ids[0] - 100) == code);

  const auto all = query_top_k(db, recon, head, 500);
  CHECK(all.item_ids.size() == 40);
  CHECK(all.k_requested == 500);

  const std::vector<float> scores{0.5f, 0.9f, 0.5f, 0.9f};
  const std::vector<std::uint64_t> ids{40, 30, 20, 10};
  const auto r = select_top_k(scores, ids, 4);
  CHECK(r.item_ids == std::vector<std::uint64_t>{10, 30, 20, 40});
  CHECK(select_top_k(scores, ids, 4, 30).item_ids ==
        std::vector<std::uint64_t>{10, 20, 40});

  CHECK(code_of([&] { query_top_k(CodeDatabase{}, recon, head, 1); }) ==
        ErrorCode::kEmptyInput);
  CHECK(code_of([&] { query_top_k(db, recon, head, 0); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("queries never mutate the database") {
  std::mt19937_64 rng(9);
  const auto items = random_items(500, 8, rng);
  const auto head = ProjectionHead::identity(8);
  const auto db = build_database(items, head, unit_books(4, 16, 2, rng));
  const auto before = db.checksum();
  const auto bytes = store::encode_database(db);
  for (int i = 0; i < 200; ++i) {
    const auto q = oracle::gaussian(8, rng);
    const std::vector<float> qf(q.begin(), q.end());
    (void)query_top_k(db, qf, head, 1 + i % 50);
  }
  CHECK(db.checksum() == before);
  CHECK(store::encode_database(db) == bytes);
}
