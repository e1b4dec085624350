#pragma once

// On-disk formats. Everything is little-endian and versioned; readers reject
// unknown versions instead of guessing.
//
// Feature file (contract with external extractors):
//   magic "FPQ1" | version u32 | N u64 | V u8 | D_in u32 | vocab u32 |
//   flags u32, then per item: id u64 | label bitset ceil(vocab/8) bytes,
//   label j in byte j/8 bit j%8 | V * D_in float32.
//
// Parameter snapshot: magic "CQS1" | version u32 | payload size u64 |
//   crc32 u32 | payload (hyperparameters, head and codebooks as float64).
//
// Code database: magic "CQD1" | version u32 | payload size u64 | crc32 u32 |
//   payload (shape, seed, hyperparameter hash, float32 codebooks, ids,
//   label bitsets, codes).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "clipq/dataset.hpp"
#include "clipq/model.hpp"
#include "clipq/retrieval.hpp"

namespace clipq::store {

inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::uint32_t kDatabaseVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 29;

/// Writes via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_features(const FeatureSet& features);
FeatureSet decode_features(std::span<const std::uint8_t> bytes);
void write_features(const std::filesystem::path& path,
                    const FeatureSet& features);
FeatureSet read_features(const std::filesystem::path& path);

struct FeatureHeader {
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  std::uint32_t views = 0;
  std::uint32_t dim = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t flags = 0;
};
FeatureHeader read_feature_header(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_database(const CodeDatabase& db);
CodeDatabase decode_database(std::span<const std::uint8_t> bytes);
void save_database(const std::filesystem::path& path, const CodeDatabase& db);
CodeDatabase load_database(const std::filesystem::path& path);

/// Stable 64-bit digest of the hyperparameters, recorded in databases.
std::uint64_t hyperparams_hash(const Hyperparams& hyper);

/// Dataset description, stored as JSON. Relative paths resolve against the
/// manifest's directory.
struct Manifest {
  std::string name;
  std::filesystem::path train;
  std::filesystem::path query;
  std::filesystem::path database;
  std::uint32_t map_at = 1000;
  bool exclude_query_from_database = false;
  std::vector<std::string> vocabulary;
};

/// Parses and checks that every referenced file exists and that all three
/// share the feature width and vocabulary size.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace clipq::store
