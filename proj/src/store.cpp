#include "clipq/store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include <unistd.h>
#include <zlib.h>

#include <json.hpp>

#include "clipq/error.hpp"

namespace clipq::store {

namespace {

namespace fs = std::filesystem;

constexpr std::array<char, 4> kFeatureMagic{'F', 'P', 'Q', '1'};
constexpr std::array<char, 4> kSnapshotMagic{'C', 'Q', 'S', '1'};
constexpr std::array<char, 4> kDatabaseMagic{'C', 'Q', 'D', '1'};
constexpr std::size_t kEnvelopeBytes = 4 + 4 + 8 + 4;

class Writer {
 public:
  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::is_floating_point_v<T>) {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                      std::uint64_t>;
      put(std::bit_cast<Bits>(value));
    } else {
      auto v = static_cast<std::make_unsigned_t<T>>(value);
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes_.push_back(static_cast<std::uint8_t>(v & 0xff));
        if constexpr (sizeof(T) > 1) v >>= 8;
      }
    }
  }
  void put_bytes(std::span<const std::uint8_t> b) {
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  void put_magic(const std::array<char, 4>& m) {
    for (char c : m) bytes_.push_back(static_cast<std::uint8_t>(c));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    if constexpr (std::is_floating_point_v<T>) {
      using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                      std::uint64_t>;
      return std::bit_cast<T>(get<Bits>());
    } else {
      need(sizeof(T));
      std::make_unsigned_t<T> v = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::make_unsigned_t<T>>(
                 static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i])
                 << (8 * i));
      }
      pos_ += sizeof(T);
      return static_cast<T>(v);
    }
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kTruncated,
                  "needed " + std::to_string(n) + " more bytes, " +
                      std::to_string(bytes_.size() - pos_) + " left");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_magic(std::span<const std::uint8_t> bytes,
                 const std::array<char, 4>& magic, const char* what) {
  if (bytes.size() < 4) {
    throw Error(ErrorCode::kTruncated, std::string(what) + " shorter than magic");
  }
  if (std::memcmp(bytes.data(), magic.data(), 4) != 0) {
    throw Error(ErrorCode::kBadMagic, std::string("not a ") + what);
  }
}

void check_version(std::uint32_t found, std::uint32_t supported,
                   const char* what) {
  if (found != supported) {
    throw Error(ErrorCode::kUnsupportedVersion,
                std::string(what) + " version " + std::to_string(found) +
                    " (supported: " + std::to_string(supported) + ")");
  }
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> seal(const std::array<char, 4>& magic,
                               std::uint32_t version,
                               std::span<const std::uint8_t> payload) {
  Writer w;
  w.put_magic(magic);
  w.put(version);
  w.put(static_cast<std::uint64_t>(payload.size()));
  w.put(crc_of(payload));
  w.put_bytes(payload);
  return std::move(w.bytes());
}

std::span<const std::uint8_t> unseal(std::span<const std::uint8_t> bytes,
                                     const std::array<char, 4>& magic,
                                     std::uint32_t version, const char* what) {
  check_magic(bytes, magic, what);
  Reader r(bytes.subspan(4));
  check_version(r.get<std::uint32_t>(), version, what);
  const auto length = r.get<std::uint64_t>();
  const auto crc = r.get<std::uint32_t>();
  if (r.remaining() < length) {
    throw Error(ErrorCode::kTruncated, std::string(what) + " payload");
  }
  if (r.remaining() > length) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + " has trailing bytes");
  }
  auto payload = bytes.subspan(kEnvelopeBytes, length);
  if (crc_of(payload) != crc) {
    throw Error(ErrorCode::kChecksumMismatch, what);
  }
  return payload;
}

void put_doubles(Writer& w, std::span<const double> values) {
  for (double v : values) w.put(v);
}

std::vector<double> get_doubles(Reader& r, std::size_t n) {
  if (r.remaining() / 8 < n) throw Error(ErrorCode::kTruncated, "array");
  std::vector<double> out(n);
  for (double& v : out) v = r.get<double>();
  return out;
}

void put_hyper(Writer& w, const Hyperparams& h) {
  w.put(h.alpha);
  w.put(h.tau);
  w.put(h.eta);
  w.put(h.beta);
  w.put(h.gamma);
  w.put(h.num_books);
  w.put(h.num_codewords);
  w.put(h.proj_dim);
  w.put(static_cast<std::uint8_t>(h.head_bias ? 1 : 0));
  w.put(h.batch_size);
  w.put(h.max_epochs);
  w.put(h.lr_codebook);
  w.put(h.lr_head);
  w.put(h.patience);
  w.put(h.min_improvement);
  w.put(h.seed);
}

Hyperparams get_hyper(Reader& r) {
  Hyperparams h;
  h.alpha = r.get<double>();
  h.tau = r.get<double>();
  h.eta = r.get<std::uint32_t>();
  h.beta = r.get<double>();
  h.gamma = r.get<double>();
  h.num_books = r.get<std::uint32_t>();
  h.num_codewords = r.get<std::uint32_t>();
  h.proj_dim = r.get<std::uint32_t>();
  h.head_bias = r.get<std::uint8_t>() != 0;
  h.batch_size = r.get<std::uint32_t>();
  h.max_epochs = r.get<std::uint32_t>();
  h.lr_codebook = r.get<double>();
  h.lr_head = r.get<double>();
  h.patience = r.get<std::uint32_t>();
  h.min_improvement = r.get<double>();
  h.seed = r.get<std::uint64_t>();
  return h;
}

std::uint64_t checked_product(std::initializer_list<std::uint64_t> factors) {
  std::uint64_t out = 1;
  for (auto f : factors) {
    if (f != 0 && out > std::numeric_limits<std::uint64_t>::max() / f) {
      throw Error(ErrorCode::kDimensionMismatch, "size overflows");
    }
    out *= f;
  }
  return out;
}

FeatureHeader parse_feature_header(Reader& r) {
  FeatureHeader h;
  h.version = r.get<std::uint32_t>();
  check_version(h.version, kFeatureVersion, "feature file");
  h.count = r.get<std::uint64_t>();
  h.views = r.get<std::uint8_t>();
  h.dim = r.get<std::uint32_t>();
  h.vocab_size = r.get<std::uint32_t>();
  h.flags = r.get<std::uint32_t>();
  if (h.views == 0 || h.dim == 0) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature file needs V >= 1 and D_in >= 1");
  }
  return h;
}

}  // namespace

void write_file_atomic(const fs::path& path,
                       std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot rename onto " + path.string());
  }
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  return bytes;
}

std::vector<std::uint8_t> encode_features(const FeatureSet& features) {
  features.validate();
  if (features.views == 0 || features.views > 255 || features.dim == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "views must be in [1,255]");
  }
  Writer w;
  w.put_magic(kFeatureMagic);
  w.put(kFeatureVersion);
  w.put(static_cast<std::uint64_t>(features.size()));
  w.put(static_cast<std::uint8_t>(features.views));
  w.put(features.dim);
  w.put(features.vocab_size);
  w.put(features.flags);
  const std::size_t per_item = static_cast<std::size_t>(features.views) *
                               features.dim;
  for (std::size_t n = 0; n < features.size(); ++n) {
    w.put(features.item_ids[n]);
    w.put_bytes(features.labels[n].to_bytes());
    for (std::size_t j = 0; j < per_item; ++j) {
      w.put(features.values[n * per_item + j]);
    }
  }
  return std::move(w.bytes());
}

FeatureSet decode_features(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, kFeatureMagic, "feature file");
  Reader r(bytes.subspan(4));
  const auto h = parse_feature_header(r);
  const std::uint64_t label_bytes = (std::uint64_t{h.vocab_size} + 7) / 8;
  const std::uint64_t per_item =
      8 + label_bytes + checked_product({h.views, h.dim, 4});
  const std::uint64_t expected = checked_product({h.count, per_item});
  if (r.remaining() < expected) {
    throw Error(ErrorCode::kTruncated,
                "feature payload has " + std::to_string(r.remaining()) +
                    " bytes, header implies " + std::to_string(expected));
  }
  if (r.remaining() > expected) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature file has trailing bytes");
  }

  FeatureSet out;
  out.views = h.views;
  out.dim = h.dim;
  out.vocab_size = h.vocab_size;
  out.flags = h.flags;
  out.item_ids.reserve(h.count);
  out.labels.reserve(h.count);
  out.values.resize(h.count * h.views * h.dim);
  const std::size_t floats = static_cast<std::size_t>(h.views) * h.dim;
  for (std::size_t n = 0; n < h.count; ++n) {
    out.item_ids.push_back(r.get<std::uint64_t>());
    out.labels.push_back(LabelSet::from_bytes(h.vocab_size,
                                              r.get_bytes(label_bytes)));
    float* dst = out.values.data() + n * floats;
    for (std::size_t j = 0; j < floats; ++j) {
      dst[j] = r.get<float>();
      if (!std::isfinite(dst[j])) {
        throw Error(ErrorCode::kNonFinite,
                    "item " + std::to_string(n) + " value " +
                        std::to_string(j));
      }
    }
  }
  return out;
}

void write_features(const fs::path& path, const FeatureSet& features) {
  write_file_atomic(path, encode_features(features));
}

FeatureSet read_features(const fs::path& path) {
  return decode_features(read_file(path));
}

FeatureHeader read_feature_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::array<std::uint8_t, kFeatureHeaderBytes> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  std::span<const std::uint8_t> bytes(buf.data(), got);
  check_magic(bytes, kFeatureMagic, "feature file");
  Reader r(bytes.subspan(4));
  return parse_feature_header(r);
}

std::vector<std::uint8_t> encode_model(const Model& model) {
  model.head.validate();
  model.codebooks.validate();
  Writer w;
  put_hyper(w, model.hyper);
  w.put(static_cast<std::uint32_t>(model.head.in_dim()));
  w.put(static_cast<std::uint32_t>(model.head.out_dim()));
  w.put(static_cast<std::uint8_t>(model.head.has_bias() ? 1 : 0));
  put_doubles(w, model.head.weights());
  put_doubles(w, model.head.bias());
  w.put(static_cast<std::uint32_t>(model.codebooks.num_books()));
  w.put(static_cast<std::uint32_t>(model.codebooks.num_codewords()));
  w.put(static_cast<std::uint32_t>(model.codebooks.sub_dim()));
  put_doubles(w, model.codebooks.weights());
  return seal(kSnapshotMagic, kSnapshotVersion, w.bytes());
}

Model decode_model(std::span<const std::uint8_t> bytes) {
  Reader r(unseal(bytes, kSnapshotMagic, kSnapshotVersion, "snapshot"));
  Model model;
  model.hyper = get_hyper(r);
  const auto in_dim = r.get<std::uint32_t>();
  const auto out_dim = r.get<std::uint32_t>();
  const bool bias = r.get<std::uint8_t>() != 0;
  auto weights = get_doubles(r, checked_product({in_dim, out_dim}));
  auto b = get_doubles(r, bias ? out_dim : 0);
  model.head = ProjectionHead(in_dim, out_dim, std::move(weights), std::move(b));
  const auto M = r.get<std::uint32_t>();
  const auto K = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  auto cw = get_doubles(r, checked_product({M, K, d}));
  model.codebooks = Codebooks(M, K, d, std::move(cw));
  if (r.remaining() != 0) {
    throw Error(ErrorCode::kDimensionMismatch, "snapshot has trailing bytes");
  }
  if (model.head.out_dim() != model.codebooks.dim() ||
      model.hyper.num_books != M || model.hyper.num_codewords != K) {
    throw Error(ErrorCode::kDimensionMismatch,
                "snapshot head/codebook/hyperparameter shapes disagree");
  }
  return model;
}

void save_model(const fs::path& path, const Model& model) {
  write_file_atomic(path, encode_model(model));
}

Model load_model(const fs::path& path) { return decode_model(read_file(path)); }

std::vector<std::uint8_t> encode_database(const CodeDatabase& db) {
  db.validate();
  const auto& C = db.codebooks();
  Writer w;
  w.put(static_cast<std::uint64_t>(db.size()));
  w.put(static_cast<std::uint32_t>(C.num_books()));
  w.put(static_cast<std::uint32_t>(C.num_codewords()));
  w.put(static_cast<std::uint32_t>(C.sub_dim()));
  w.put(db.vocab_size());
  w.put(db.seed());
  w.put(db.hyper_hash());
  for (double x : C.weights()) w.put(static_cast<float>(x));
  for (auto id : db.item_ids()) w.put(id);
  for (const auto& l : db.labels()) w.put_bytes(l.to_bytes());
  w.put_bytes(db.code_bytes());
  return seal(kDatabaseMagic, kDatabaseVersion, w.bytes());
}

CodeDatabase decode_database(std::span<const std::uint8_t> bytes) {
  Reader r(unseal(bytes, kDatabaseMagic, kDatabaseVersion, "database"));
  const auto N = r.get<std::uint64_t>();
  const auto M = r.get<std::uint32_t>();
  const auto K = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  const auto vocab = r.get<std::uint32_t>();
  const auto seed = r.get<std::uint64_t>();
  const auto hash = r.get<std::uint64_t>();
  const auto count = checked_product({M, K, d});
  if (r.remaining() / 4 < count) throw Error(ErrorCode::kTruncated, "codebooks");
  std::vector<double> cw(count);
  for (double& x : cw) x = r.get<float>();
  Codebooks C(M, K, d, std::move(cw));

  const std::size_t width = K <= 256 ? 1 : 2;
  const std::uint64_t label_bytes = (std::uint64_t{vocab} + 7) / 8;
  const auto need = checked_product({N, 8 + label_bytes + M * width});
  if (r.remaining() < need) throw Error(ErrorCode::kTruncated, "database rows");
  if (r.remaining() > need) {
    throw Error(ErrorCode::kDimensionMismatch, "database has trailing bytes");
  }
  std::vector<std::uint64_t> ids(N);
  for (auto& id : ids) id = r.get<std::uint64_t>();
  std::vector<LabelSet> labels;
  labels.reserve(N);
  for (std::uint64_t n = 0; n < N; ++n) {
    labels.push_back(LabelSet::from_bytes(vocab, r.get_bytes(label_bytes)));
  }
  const auto codes = r.get_bytes(N * M * width);
  return CodeDatabase(std::move(C), vocab, std::move(ids), std::move(labels),
                      {codes.begin(), codes.end()}, seed, hash);
}

void save_database(const fs::path& path, const CodeDatabase& db) {
  write_file_atomic(path, encode_database(db));
}

CodeDatabase load_database(const fs::path& path) {
  return decode_database(read_file(path));
}

std::uint64_t hyperparams_hash(const Hyperparams& hyper) {
  Writer w;
  put_hyper(w, hyper);
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : w.bytes()) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Manifest load_manifest(const fs::path& path) {
  const auto bytes = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "manifest " + path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const char* key) -> fs::path {
    if (!j.contains(key)) {
      throw Error(ErrorCode::kInvalidArgument,
                  std::string("manifest lacks \"") + key + "\"");
    }
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };

  Manifest m;
  try {
    m.name = j.value("name", std::string("unnamed"));
    m.train = resolve("train");
    m.query = resolve("query");
    m.database = resolve("database");
    m.map_at = j.value("map_at", 1000u);
    m.exclude_query_from_database =
        j.value("exclude_query_from_database", false);
    m.vocabulary = j.value("vocabulary", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "manifest " + path.string() + ": " + e.what());
  }
  if (m.map_at == 0) throw Error(ErrorCode::kInvalidArgument, "map_at must be >= 1");

  const auto train = read_feature_header(m.train);
  for (const auto& other : {m.query, m.database}) {
    const auto h = read_feature_header(other);
    if (h.dim != train.dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  other.string() + " has D_in=" + std::to_string(h.dim) +
                      ", train has " + std::to_string(train.dim));
    }
    if (h.vocab_size != train.vocab_size) {
      throw Error(ErrorCode::kVocabularyMismatch, other.string());
    }
  }
  if (!m.vocabulary.empty() && m.vocabulary.size() != train.vocab_size) {
    throw Error(ErrorCode::kVocabularyMismatch,
                "manifest lists " + std::to_string(m.vocabulary.size()) +
                    " names for a vocabulary of " +
                    std::to_string(train.vocab_size));
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  nlohmann::json j;
  j["name"] = manifest.name;
  j["train"] = manifest.train.string();
  j["query"] = manifest.query.string();
  j["database"] = manifest.database.string();
  j["map_at"] = manifest.map_at;
  j["exclude_query_from_database"] = manifest.exclude_query_from_database;
  j["vocabulary"] = manifest.vocabulary;
  const auto text = j.dump(2) + "\n";
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()),
                              text.size()));
}

}  // namespace clipq::store
