// clipq_cli: train, build, query, eval and inspect from the command line.
//
//   clipq_cli synth   --out data/                  # toy clustered dataset
//   clipq_cli train   --manifest data/manifest.json --bits 32 --out run/
//   clipq_cli build   --manifest data/manifest.json --out run/
//   clipq_cli query   --manifest data/manifest.json --out run/ --k 10
//   clipq_cli eval    --manifest data/manifest.json --out run/
//   clipq_cli inspect run/params.cqs
//
// Options may also come from a key=value file via --config; command-line
// values win. CLIPQ_THREADS caps the OpenMP thread count.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clipq/error.hpp"
#include "clipq/evaluation.hpp"
#include "clipq/kernels.hpp"
#include "clipq/retrieval.hpp"
#include "clipq/store.hpp"
#include "clipq/synthetic.hpp"
#include "clipq/trainer.hpp"

namespace fs = std::filesystem;
using namespace clipq;

namespace {

struct RunConfig {
  Hyperparams hyper;
  std::uint32_t bits = 32;
  fs::path manifest;
  fs::path out = "run";
  fs::path params;    // defaults to out/params.cqs
  fs::path database;  // defaults to out/database.cqd
  fs::path queries;   // defaults to the manifest's query file
  std::size_t k = 10;
  std::size_t R = 0;  // 0: take it from the manifest
  std::string ap_denominator = "retrieved";
  std::vector<std::uint32_t> eta_sweep;
  bool quiet = false;

  fs::path params_path() const {
    return params.empty() ? out / "params.cqs" : params;
  }
  fs::path database_path() const {
    return database.empty() ? out / "database.cqd" : database;
  }
};

struct SynthConfig {
  synthetic::ClusterSpec spec;
  fs::path out = "data";
};

std::string fmt(double x, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  return buf;
}

// Final hyperparameters: M from the bit budget, then the shared checks.
Hyperparams resolve(const RunConfig& cfg) {
  Hyperparams h = cfg.hyper;
  h.num_books = Hyperparams::books_for_bits(cfg.bits, h.num_codewords);
  h.validate();
  return h;
}

store::Manifest need_manifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "--manifest is required");
  }
  return store::load_manifest(cfg.manifest);
}

Model load_checked_model(const RunConfig& cfg, std::uint32_t in_dim) {
  auto model = store::load_model(cfg.params_path());
  if (model.head.in_dim() != in_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "snapshot expects D_in=" +
                    std::to_string(model.head.in_dim()) +
                    " but the manifest's features have D_in=" +
                    std::to_string(in_dim));
  }
  return model;
}

nlohmann::json report_json(const TrainReport& report) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& l : report.history) {
    history.push_back({{"contrastive", l.contrastive},
                       {"weight_decay", l.weight_decay},
                       {"codeword_reg", l.codeword_reg},
                       {"total", l.total}});
  }
  return {{"epochs_run", report.history.size()},
          {"best_epoch", report.best_epoch},
          {"stopped_early", report.stopped_early},
          {"history", history}};
}

ApDenominator parse_denominator(const std::string& s) {
  if (s == "retrieved") return ApDenominator::kRetrievedRelevant;
  if (s == "all") return ApDenominator::kAllRelevant;
  throw Error(ErrorCode::kInvalidArgument,
              "--ap-denominator must be 'retrieved' or 'all'");
}

EvalOptions eval_options(const RunConfig& cfg, const store::Manifest& m) {
  EvalOptions opt;
  opt.R = cfg.R != 0 ? cfg.R : m.map_at;
  opt.exclude_query_from_database = m.exclude_query_from_database;
  opt.denominator = parse_denominator(cfg.ap_denominator);
  return opt;
}

void write_text(const fs::path& path, const std::string& text) {
  store::write_file_atomic(
      path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                      text.size()));
}

// --- subcommands -----------------------------------------------------------

void cmd_synth(const SynthConfig& cfg) {
  const auto data = synthetic::make_clusters(cfg.spec);
  fs::create_directories(cfg.out);
  store::write_features(cfg.out / "train.fpq", data.train);
  store::write_features(cfg.out / "database.fpq", data.database);
  store::write_features(cfg.out / "query.fpq", data.query);
  store::Manifest m;
  m.name = "clusters" + std::to_string(cfg.spec.clusters);
  m.train = "train.fpq";
  m.query = "query.fpq";
  m.database = "database.fpq";
  m.map_at = 100;
  for (std::uint32_t c = 0; c < cfg.spec.clusters; ++c) {
    m.vocabulary.push_back("cluster" + std::to_string(c));
  }
  store::save_manifest(cfg.out / "manifest.json", m);
  std::cout << "wrote " << data.train.size() << " train, "
            << data.database.size() << " database, " << data.query.size()
            << " query items to " << cfg.out.string() << "\n";
}

void cmd_train(const RunConfig& cfg) {
  const auto hyper = resolve(cfg);  // fail before touching any data
  const auto manifest = need_manifest(cfg);
  const auto train = store::read_features(manifest.train);
  auto result = fit(train, hyper, cfg.quiet ? nullptr : &std::cerr);
  fs::create_directories(cfg.out);
  store::save_model(cfg.params_path(), result.model);
  write_text(cfg.out / "train_report.json",
             report_json(result.report).dump(2) + "\n");
  std::cout << "trained " << hyper.code_bits() << "-bit model (M="
            << hyper.num_books << ", K=" << hyper.num_codewords
            << "), best epoch " << result.report.best_epoch + 1 << " -> "
            << cfg.params_path().string() << "\n";
}

void cmd_build(const RunConfig& cfg) {
  const auto manifest = need_manifest(cfg);
  const auto items = store::read_features(manifest.database);
  const auto model = load_checked_model(cfg, items.dim);
  const auto db = build_database(items, model.head, model.codebooks,
                                 model.hyper.seed,
                                 store::hyperparams_hash(model.hyper));
  fs::create_directories(cfg.out);
  store::save_database(cfg.database_path(), db);
  std::cout << "built database of " << db.size() << " items, "
            << db.bytes_per_item() << " code bytes each -> "
            << cfg.database_path().string() << "\n";
}

void cmd_query(const RunConfig& cfg) {
  const auto manifest = need_manifest(cfg);
  const auto queries =
      store::read_features(cfg.queries.empty() ? manifest.query : cfg.queries);
  const auto model = load_checked_model(cfg, queries.dim);
  const auto db = store::load_database(cfg.database_path());
  if (db.empty()) {
    throw Error(ErrorCode::kEmptyInput, "database has no items");
  }
  std::ostringstream out;
  out << "# rank\titem_id\tscore\n";
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::optional<std::uint64_t> exclude;
    if (manifest.exclude_query_from_database) exclude = queries.item_ids[q];
    const auto res =
        query_top_k(db, queries.view(q, 0), model.head, cfg.k, exclude);
    out << "# query_id=" << queries.item_ids[q] << "\n";
    for (std::size_t r = 0; r < res.item_ids.size(); ++r) {
      out << r + 1 << "\t" << res.item_ids[r] << "\t"
          << fmt(res.scores[r], 6) << "\n";
    }
  }
  fs::create_directories(cfg.out);
  write_text(cfg.out / "results.tsv", out.str());
  std::cout << "ranked " << queries.size() << " queries -> "
            << (cfg.out / "results.tsv").string() << "\n";
}

std::string metrics_text(const store::Manifest& manifest,
                         const EvalOptions& opt, const MapReport& report,
                         const Hyperparams& h) {
  std::ostringstream out;
  out << "dataset=" << manifest.name << "\n"
      << "R=" << report.R << "\n"
      << "queries=" << report.per_query.size() << "\n"
      << "ap_denominator="
      << (opt.denominator == ApDenominator::kAllRelevant ? "all" : "retrieved")
      << "\n"
      << "mAP=" << fmt(report.map) << "\n";
  const std::pair<const char*, double> qs[] = {
      {"ap_min", 0.0}, {"ap_q25", 0.25}, {"ap_median", 0.5},
      {"ap_q75", 0.75}, {"ap_max", 1.0}};
  for (const auto& [name, q] : qs) {
    out << name << "=" << fmt(quantile(report.per_query, q)) << "\n";
  }
  out << "bits=" << h.code_bits() << "\n"
      << "M=" << h.num_books << "\n"
      << "K=" << h.num_codewords << "\n"
      << "alpha=" << h.alpha << "\n"
      << "tau=" << h.tau << "\n"
      << "eta=" << h.eta << "\n"
      << "beta=" << h.beta << "\n"
      << "gamma=" << h.gamma << "\n"
      << "batch=" << h.batch_size << "\n"
      << "epochs=" << h.max_epochs << "\n"
      << "seed=" << h.seed << "\n";
  return out.str();
}

void cmd_eval(const RunConfig& cfg) {
  const auto manifest = need_manifest(cfg);
  const auto queries = store::read_features(manifest.query);
  const auto opt = eval_options(cfg, manifest);

  if (!cfg.eta_sweep.empty()) {
    // One row per clipping value, trained and evaluated from scratch.
    const auto train = store::read_features(manifest.train);
    const auto items = store::read_features(manifest.database);
    std::ostringstream table;
    table << "eta\tbits\tmAP@" << opt.R << "\n";
    for (std::uint32_t eta : cfg.eta_sweep) {
      RunConfig one = cfg;
      one.hyper.eta = eta;
      const auto hyper = resolve(one);
      const auto model = fit(train, hyper).model;
      const auto db = build_database(items, model.head, model.codebooks,
                                     hyper.seed,
                                     store::hyperparams_hash(hyper));
      const auto report =
          mean_average_precision(queries, db, model.head, opt);
      table << eta << "\t" << hyper.code_bits() << "\t" << fmt(report.map)
            << "\n";
      std::cout << "eta=" << eta << " mAP@" << opt.R << "="
                << fmt(report.map) << std::endl;
    }
    fs::create_directories(cfg.out);
    write_text(cfg.out / "eta_sweep.tsv", table.str());
    return;
  }

  const auto model = load_checked_model(cfg, queries.dim);
  const auto db = store::load_database(cfg.database_path());
  const auto report = mean_average_precision(queries, db, model.head, opt);
  const auto text = metrics_text(manifest, opt, report, model.hyper);
  fs::create_directories(cfg.out);
  write_text(cfg.out / "metrics.txt", text);
  std::cout << text;
}

void cmd_inspect(const fs::path& path) {
  const auto bytes = store::read_file(path);
  const std::string magic(bytes.begin(),
                          bytes.begin() + std::min<std::size_t>(4, bytes.size()));
  if (magic == "FPQ1") {
    const auto fset = store::decode_features(bytes);
    std::cout << "feature file\n  items=" << fset.size()
              << "\n  views=" << fset.views << "\n  D_in=" << fset.dim
              << "\n  vocab=" << fset.vocab_size << "\n  flags=" << fset.flags
              << "\n";
  } else if (magic == "CQS1") {
    const auto m = store::decode_model(bytes);
    const auto& h = m.hyper;
    std::cout << "parameter snapshot\n  D_in=" << m.head.in_dim()
              << "\n  D=" << m.head.out_dim() << "\n  bias="
              << (m.head.has_bias() ? "yes" : "no") << "\n  M=" << h.num_books
              << "\n  K=" << h.num_codewords << "\n  bits=" << h.code_bits()
              << "\n  alpha=" << h.alpha << "\n  tau=" << h.tau
              << "\n  eta=" << h.eta << "\n  beta=" << h.beta
              << "\n  gamma=" << h.gamma << "\n  batch=" << h.batch_size
              << "\n  seed=" << h.seed << "\n";
  } else if (magic == "CQD1") {
    const auto db = store::decode_database(bytes);
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", db.checksum());
    std::cout << "code database\n  items=" << db.size()
              << "\n  M=" << db.num_books()
              << "\n  K=" << db.codebooks().num_codewords()
              << "\n  bytes_per_item=" << db.bytes_per_item()
              << "\n  seed=" << db.seed() << "\n  checksum=" << crc << "\n";
  } else {
    throw Error(ErrorCode::kBadMagic,
                path.string() + ": not a clipq feature, snapshot or database "
                                "file");
  }
}

void add_hyper_options(CLI::App& app, RunConfig& cfg) {
  auto& h = cfg.hyper;
  app.add_option("--manifest", cfg.manifest, "Dataset manifest (JSON)");
  app.add_option("--out", cfg.out, "Output directory")->capture_default_str();
  app.add_option("--params", cfg.params,
                 "Parameter snapshot (default: OUT/params.cqs)");
  app.add_option("--database", cfg.database,
                 "Code database (default: OUT/database.cqd)");
  app.add_option("--bits", cfg.bits, "Code length; M = bits / log2(K)")
      ->capture_default_str();
  app.add_option("--codewords", h.num_codewords, "Codewords per book (K)")
      ->capture_default_str();
  app.add_option("--proj-dim", h.proj_dim,
                 "Projected width D (0: same as the input)")
      ->capture_default_str();
  app.add_flag("--head-bias", h.head_bias, "Give the projection head a bias");
  app.add_option("--eta", h.eta, "Hardest negatives clipped per query")
      ->capture_default_str();
  app.add_option("--tau", h.tau, "Contrastive temperature")
      ->capture_default_str();
  app.add_option("--alpha", h.alpha, "Soft-assignment sharpness")
      ->capture_default_str();
  app.add_option("--beta", h.beta, "Head weight decay")->capture_default_str();
  app.add_option("--gamma", h.gamma, "Codeword diversity weight")
      ->capture_default_str();
  app.add_option("--batch", h.batch_size, "Items per batch (N_B)")
      ->capture_default_str();
  app.add_option("--epochs", h.max_epochs, "Maximum epochs")
      ->capture_default_str();
  app.add_option("--lr-codebook", h.lr_codebook)->capture_default_str();
  app.add_option("--lr-head", h.lr_head)->capture_default_str();
  app.add_option("--patience", h.patience, "Early-stopping patience")
      ->capture_default_str();
  app.add_option("--seed", h.seed)->capture_default_str();
  app.add_option("--queries", cfg.queries,
                 "Query feature file (default: the manifest's)");
  app.add_option("--k", cfg.k, "Results per query")->capture_default_str();
  app.add_option("--R", cfg.R, "mAP cutoff (default: the manifest's)");
  app.add_option("--ap-denominator", cfg.ap_denominator,
                 "'retrieved' or 'all'")
      ->capture_default_str();
  app.add_option("--eta-sweep", cfg.eta_sweep,
                 "Train and evaluate once per listed eta")
      ->delimiter(',');
  app.add_flag("--quiet", cfg.quiet, "No per-epoch progress");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Product-quantization retrieval with clipped contrastive "
               "learning"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key=value file of option defaults");

  RunConfig cfg;
  add_hyper_options(app, cfg);
  app.fallthrough();

  auto* train = app.add_subcommand("train", "Learn head and codebooks");
  auto* build = app.add_subcommand("build", "Encode the database");
  auto* query = app.add_subcommand("query", "Write ranked results");
  auto* eval = app.add_subcommand("eval", "Compute mAP@R");
  auto* inspect = app.add_subcommand("inspect", "Describe a clipq file");
  fs::path inspect_path;
  inspect->add_option("file", inspect_path)->required();

  SynthConfig synth_cfg;
  auto* synth = app.add_subcommand("synth", "Write a clustered toy dataset");
  auto& spec = synth_cfg.spec;
  synth->add_option("--clusters", spec.clusters)->capture_default_str();
  synth->add_option("--dim", spec.dim)->capture_default_str();
  synth->add_option("--train-per-cluster", spec.train_per_cluster)
      ->capture_default_str();
  synth->add_option("--queries-per-cluster", spec.query_per_cluster)
      ->capture_default_str();
  synth->add_option("--spread", spec.cluster_sigma)->capture_default_str();
  synth->add_option("--duplicates", spec.duplicate_fraction,
                    "Fraction of planted near-duplicate training items")
      ->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();
  synth->add_option("--out", synth_cfg.out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    kernels::configure_threads_from_env();
    if (*train) cmd_train(cfg);
    if (*build) cmd_build(cfg);
    if (*query) cmd_query(cfg);
    if (*eval) cmd_eval(cfg);
    if (*inspect) cmd_inspect(inspect_path);
    if (*synth) cmd_synth(synth_cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
