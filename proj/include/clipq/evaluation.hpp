#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clipq/dataset.hpp"
#include "clipq/model.hpp"
#include "clipq/retrieval.hpp"

namespace clipq {

enum class ApDenominator {
  kRetrievedRelevant,  // relevant items inside the top R (default)
  kAllRelevant,        // min(R, relevant items in the whole database)
};

bool is_relevant(const LabelSet& query, const LabelSet& item);

/// AP over the first R ranked flags. `total_relevant` is only read under
/// kAllRelevant.
double average_precision(std::span<const bool> ranked_relevance,
                         std::size_t R,
                         ApDenominator denominator =
                             ApDenominator::kRetrievedRelevant,
                         std::size_t total_relevant = 0);

struct MapReport {
  std::size_t R = 0;
  double map = 0.0;
  std::vector<double> per_query;
};

struct EvalOptions {
  std::size_t R = 1000;
  bool exclude_query_from_database = false;
  ApDenominator denominator = ApDenominator::kRetrievedRelevant;
};

/// mAP@R of view 0 of every query against the database.
MapReport mean_average_precision(const FeatureSet& queries,
                                 const CodeDatabase& db,
                                 const ProjectionHead& head,
                                 const EvalOptions& options);

/// Linear-interpolated quantile of an unsorted sample, q in [0,1].
double quantile(std::vector<double> values, double q);

}  // namespace clipq
