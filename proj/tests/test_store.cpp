#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"

#include "clipq/error.hpp"
#include "clipq/store.hpp"
#include "clipq/synthetic.hpp"

using namespace clipq;
namespace fs = std::filesystem;

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

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "clipq_test_store";
  fs::create_directories(dir);
  return dir / name;
}

FeatureSet sample_features() {
  synthetic::ClusterSpec spec;
  spec.clusters = 3;
  spec.dim = 5;
  spec.train_per_cluster = 4;
  spec.query_per_cluster = 1;
  auto fs = synthetic::make_clusters(spec).train;
  fs.flags = 0x2a;
  return fs;
}

}  // namespace

TEST_CASE("feature file layout is bit-exact") {
  FeatureSet fs;
  fs.views = 2;
  fs.dim = 1;
  fs.vocab_size = 9;
  LabelSet l(9);
  l.set(0);
  l.set(8);
  fs.push_back(0x0102030405060708ULL, l, std::vector<float>{1.0f, -2.0f});
  const auto bytes = store::encode_features(fs);
  const std::vector<std::uint8_t> expected{
      'F', 'P', 'Q', '1',                              // magic
      1, 0, 0, 0,                                      // version
      1, 0, 0, 0, 0, 0, 0, 0,                          // N
      2,                                               // V
      1, 0, 0, 0,                                      // D_in
      9, 0, 0, 0,                                      // vocab
      0, 0, 0, 0,                                      // flags
      8, 7, 6, 5, 4, 3, 2, 1,                          // item id
      0x01, 0x01,                                      // labels {0, 8}
      0x00, 0x00, 0x80, 0x3f,                          // 1.0f
      0x00, 0x00, 0x00, 0xc0,                          // -2.0f
  };
  CHECK(bytes == expected);
  CHECK(store::kFeatureHeaderBytes == 29);
}

TEST_CASE("features round-trip through disk") {
  const auto fs = sample_features();
  const auto path = scratch("features.fpq");
  store::write_features(path, fs);
  const auto back = store::read_features(path);
  CHECK(back.item_ids == fs.item_ids);
  CHECK(back.labels == fs.labels);
  CHECK(back.values == fs.values);
  CHECK(back.flags == 0x2a);
  CHECK(store::encode_features(back) == store::read_file(path));
  const auto h = store::read_feature_header(path);
  CHECK(h.count == fs.size());
  CHECK(h.views == 2);
}

TEST_CASE("empty feature files are valid") {
  FeatureSet empty;
  empty.views = 1;
  empty.dim = 4;
  empty.vocab_size = 2;
  const auto back = store::decode_features(store::encode_features(empty));
  CHECK(back.empty());
  CHECK(back.dim == 4);
}

TEST_CASE("malformed feature files are rejected with distinct errors") {
  auto bytes = store::encode_features(sample_features());

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { store::decode_features(bad_magic); }) == ErrorCode::kBadMagic);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK(code_of([&] { store::decode_features(truncated); }) == ErrorCode::kTruncated);
  CHECK(code_of([&] {
          store::decode_features(std::span(bytes).first(10));
        }) == ErrorCode::kTruncated);

  auto version = bytes;
  version[4] = 2;
  CHECK(code_of([&] { store::decode_features(version); }) ==
        ErrorCode::kUnsupportedVersion);

  auto nan = bytes;
  // First float of the first item: header, id, one label byte.
  const std::size_t off = 29 + 8 + 1;
  nan[off + 0] = 0x00;
  nan[off + 1] = 0x00;
  nan[off + 2] = 0xc0;
  nan[off + 3] = 0x7f;
  CHECK(code_of([&] { store::decode_features(nan); }) == ErrorCode::kNonFinite);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { store::decode_features(trailing); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("model snapshots round-trip and carry a checksum") {
  Hyperparams h;
  h.num_books = 2;
  h.num_codewords = 8;
  h.head_bias = true;
  h.seed = 42;
  const auto model = init_parameters(6, h);
  const auto path = scratch("model.cqs");
  store::save_model(path, model);
  const auto loaded = store::load_model(path);
  CHECK(loaded == model);
  CHECK(store::encode_model(loaded) == store::read_file(path));

  auto bytes = store::read_file(path);
  bytes[bytes.size() / 2] ^= 0x10;
  CHECK(code_of([&] { store::decode_model(bytes); }) ==
        ErrorCode::kChecksumMismatch);
  auto cut = store::read_file(path);
  cut.resize(cut.size() - 3);
  CHECK(code_of([&] { store::decode_model(cut); }) == ErrorCode::kTruncated);
  CHECK(code_of([&] { store::decode_features(store::read_file(path)); }) ==
        ErrorCode::kBadMagic);
}

TEST_CASE("databases round-trip") {
  const auto fs = sample_features();
  Hyperparams h;
  h.num_books = 5;
  h.num_codewords = 16;
  h.proj_dim = 5;
  const auto model = init_parameters(fs.dim, h);
  const auto db = build_database(fs, model.head, model.codebooks, 9,
                                 store::hyperparams_hash(h));
  const auto path = scratch("db.cqd");
  store::save_database(path, db);
  const auto back = store::load_database(path);
  CHECK(back == db);
  CHECK(back.hyper_hash() == store::hyperparams_hash(h));
  auto bytes = store::read_file(path);
  bytes.back() ^= 1;
  CHECK(code_of([&] { store::decode_database(bytes); }) ==
        ErrorCode::kChecksumMismatch);
}

TEST_CASE("hyperparameter hash tracks every field") {
  Hyperparams a, b;
  CHECK(store::hyperparams_hash(a) == store::hyperparams_hash(b));
  b.eta = 11;
  CHECK(store::hyperparams_hash(a) != store::hyperparams_hash(b));
}

TEST_CASE("manifests resolve paths and check consistency") {
  const auto dir = scratch("manifest_case");
  fs::create_directories(dir);
  auto fsets = synthetic::make_clusters({3, 5, 4, 1});
  store::write_features(dir / "train.fpq", fsets.train);
  store::write_features(dir / "query.fpq", fsets.query);
  store::write_features(dir / "db.fpq", fsets.database);
  store::Manifest m{"toy", "train.fpq", "query.fpq", "db.fpq", 7, true,
                    {"a", "b", "c"}};
  store::save_manifest(dir / "manifest.json", m);
  const auto loaded = store::load_manifest(dir / "manifest.json");
  CHECK(loaded.name == "toy");
  CHECK(loaded.map_at == 7);
  CHECK(loaded.exclude_query_from_database);
  CHECK(loaded.train == dir / "train.fpq");

  m.vocabulary = {"a"};
  store::save_manifest(dir / "bad_vocab.json", m);
  CHECK(code_of([&] { store::load_manifest(dir / "bad_vocab.json"); }) ==
        ErrorCode::kVocabularyMismatch);

  auto other = synthetic::make_clusters({3, 6, 4, 1});
  store::write_features(dir / "wide.fpq", other.query);
  m.vocabulary.clear();
  m.query = "wide.fpq";
  store::save_manifest(dir / "bad_dim.json", m);
  CHECK(code_of([&] { store::load_manifest(dir / "bad_dim.json"); }) ==
        ErrorCode::kDimensionMismatch);

  m.query = "missing.fpq";
  store::save_manifest(dir / "missing.json", m);
  CHECK(code_of([&] { store::load_manifest(dir / "missing.json"); }) ==
        ErrorCode::kIo);
}

TEST_CASE("atomic writes leave no temporary behind") {
  const auto path = scratch("atomic.bin");
  const std::vector<std::uint8_t> payload{1, 2, 3};
  store::write_file_atomic(path, payload);
  CHECK(store::read_file(path) == payload);
  for (const auto& entry : fs::directory_iterator(path.parent_path())) {
    CHECK(entry.path().string().find(".tmp.") == std::string::npos);
  }
}
