#pragma once

// CART builders shared by the forest and boosting learners.

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "counsel/models.hpp"
#include "counsel/numeric.hpp"

namespace counsel::models::detail {

using FeatureMatrix = std::vector<std::vector<double>>;  // row-major, one row per sample

struct ClassificationTreeOptions {
    std::optional<int> max_depth;
    std::size_t max_features = 0;  // 0 = all features
    std::size_t min_samples_split = 2;
};

/// Weighted-Gini CART. `rows` may repeat indices (bootstrap). Leaves store
/// the weighted class distribution. `rng` is required when max_features
/// restricts the candidate set.
DecisionTree build_classification_tree(const FeatureMatrix& x, std::span<const int> y,
                                       std::span<const double> weights, std::span<const std::size_t> rows,
                                       std::size_t n_classes, const ClassificationTreeOptions& options,
                                       Rng* rng);

using LeafValueFn = std::function<double(std::span<const std::size_t> rows)>;

/// Least-squares regression tree of bounded depth; leaf values come from
/// `leaf_value` evaluated over the rows reaching the leaf.
DecisionTree build_regression_tree(const FeatureMatrix& x, std::span<const double> target,
                                   std::span<const std::size_t> rows, int max_depth, const LeafValueFn& leaf_value);

int argmax_first(std::span<const double> values);

}  // namespace counsel::models::detail
