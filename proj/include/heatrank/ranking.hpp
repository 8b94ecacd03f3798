#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heatrank/error.hpp"
#include "heatrank/metrics.hpp"

namespace heatrank {

enum class MetricGroup { aug_robustness, quality_no_gt, ground_truth };

std::string to_string(MetricGroup g);

// Default group assignment: robustness/<kind> metrics form the
// augmentation-robustness group; pixel-flipping, irof, sensitivity, and
// complexity the no-ground-truth quality group; roc-auc and
// relevance-mass-accuracy the ground-truth group.
MetricGroup metric_group(const std::string& metric);

// Canonical optimization direction per metric id.
Direction metric_direction(const std::string& metric);

struct TableCell {
    MetricScore score;
    MetricGroup group = MetricGroup::quality_no_gt;
    bool imputed = false;
};

// One ranking column per (metric, pooling) pair.
struct MetricTable {
    std::vector<TableCell> cells;
};

// Builds a table with default group assignment; `groups` overrides the
// group per metric id. Duplicate (metric, pooling, method) rows and rows
// with n < 1 are rejected.
MetricTable make_table(const std::vector<MetricScore>& scores,
                       const std::map<std::string, MetricGroup>* groups = nullptr);

// Fills every missing (method, column) cell with the median of the
// column's present means (even count: mean of the middle two); the imputed
// sem is the median of the present sems. Imputed cells are flagged and
// carry n = 0.
void impute_table(MetricTable& table);

// Mean reciprocal rank per method over 1-based positions in the given
// rankings. Every ranking must contain the same method set.
std::map<std::string, double> mrr(const std::vector<std::vector<std::string>>& rankings);

struct RankedMethod {
    std::string method;
    double mrr = 0.0;
    double uncertainty = 0.0;
};

// order is sorted by descending MRR; mode is "means-only" or "monte-carlo".
struct RankingResult {
    std::vector<RankedMethod> order;
    std::string mode;
};

// Deterministic ranking pass: adds uniform tie noise of width 1e-9 times
// each column's value range to the means, ranks every column respecting
// its direction, aggregates each group's columns by MRR into a group
// ranking, and aggregates the group rankings by MRR into the final order.
// Requires a complete (imputed) table. Ties in an aggregate MRR fall back
// to method-name order.
RankingResult rank_once(const MetricTable& table, std::uint64_t seed);

// Repeats rank_once n times on tables resampled cellwise from
// Normal(mean, sem); the reported MRR is the mean reciprocal final rank
// over the repetitions and the uncertainty its standard error. n >= 2.
RankingResult rank_monte_carlo(const MetricTable& table, int n, std::uint64_t seed);

}  // namespace heatrank
