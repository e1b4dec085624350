#include "clipq/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <string>
#include <unordered_map>

#include "clipq/error.hpp"
#include "clipq/objective.hpp"

namespace clipq {

bool is_relevant(const LabelSet& query, const LabelSet& item) {
  return query.intersects(item);
}

double average_precision(std::span<const bool> ranked_relevance,
                         std::size_t R, ApDenominator denominator,
                         std::size_t total_relevant) {
  if (ranked_relevance.empty()) {
    throw Error(ErrorCode::kEmptyInput, "empty ranking");
  }
  if (R == 0) throw Error(ErrorCode::kInvalidArgument, "R must be >= 1");
  const std::size_t depth = std::min(R, ranked_relevance.size());
  std::size_t hits = 0;
  double precision_sum = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (!ranked_relevance[i]) continue;
    ++hits;
    precision_sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  std::size_t denom = hits;
  if (denominator == ApDenominator::kAllRelevant) {
    if (total_relevant < hits) {
      throw Error(ErrorCode::kInvalidArgument,
                  "total relevant below relevant hits in the ranking");
    }
    denom = std::min(R, total_relevant);
  }
  return denom == 0 ? 0.0 : precision_sum / static_cast<double>(denom);
}

MapReport mean_average_precision(const FeatureSet& queries,
                                 const CodeDatabase& db,
                                 const ProjectionHead& head,
                                 const EvalOptions& options) {
  if (queries.empty()) throw Error(ErrorCode::kEmptyInput, "no queries");
  if (db.empty()) throw Error(ErrorCode::kEmptyInput, "empty database");
  if (options.R == 0) throw Error(ErrorCode::kInvalidArgument, "R must be >= 1");
  if (queries.vocab_size != db.vocab_size()) {
    throw Error(ErrorCode::kVocabularyMismatch,
                "queries " + std::to_string(queries.vocab_size) +
                    " vs database " + std::to_string(db.vocab_size()));
  }
  std::unordered_map<std::uint64_t, std::size_t> row_of;
  row_of.reserve(db.size());
  for (std::size_t n = 0; n < db.size(); ++n) {
    if (!row_of.emplace(db.item_ids()[n], n).second) {
      throw Error(ErrorCode::kInvalidArgument,
                  "duplicate database id " + std::to_string(db.item_ids()[n]));
    }
  }

  const std::size_t Q = queries.size();
  MapReport report;
  report.R = options.R;
  report.per_query.resize(Q);
  // The first failing query (in query order) is rethrown after the loop.
  std::vector<std::exception_ptr> failures(Q);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(Q); ++qi) {
    const auto q = static_cast<std::size_t>(qi);
    try {
      const auto exclude =
          options.exclude_query_from_database
              ? std::optional<std::uint64_t>(queries.item_ids[q])
              : std::nullopt;
      const auto ranked =
          query_top_k(db, queries.view(q, 0), head, options.R, exclude);
      if (ranked.item_ids.empty()) continue;  // database held only the query
      const auto& label = queries.labels[q];
      const std::size_t n = ranked.item_ids.size();
      auto flags = std::make_unique<bool[]>(n);
      for (std::size_t i = 0; i < n; ++i) {
        flags[i] = is_relevant(label, db.labels()[row_of.at(ranked.item_ids[i])]);
      }
      std::size_t total = 0;
      if (options.denominator == ApDenominator::kAllRelevant) {
        for (std::size_t r = 0; r < db.size(); ++r) {
          if (exclude && db.item_ids()[r] == *exclude) continue;
          total += is_relevant(label, db.labels()[r]) ? 1 : 0;
        }
      }
      report.per_query[q] = average_precision(
          {flags.get(), n}, options.R, options.denominator, total);
    } catch (...) {
      failures[q] = std::current_exception();
    }
  }
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }
  report.map = pairwise_sum(report.per_query) / static_cast<double>(Q);
  return report;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::kEmptyInput, "no values");
  if (!(q >= 0.0 && q <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "quantile outside [0,1]");
  }
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace clipq
