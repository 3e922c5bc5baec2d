#include "tree_builder.hpp"

#include <algorithm>
#include <numeric>

#include "counsel/error.hpp"

namespace counsel::models::detail {

int argmax_first(std::span<const double> values) {
    int best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

namespace {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double score = 0.0;
};

double midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    return mid < hi ? mid : lo;
}

class ClassificationBuilder {
public:
    ClassificationBuilder(const FeatureMatrix& x, std::span<const int> y, std::span<const double> w,
                          std::size_t n_classes, const ClassificationTreeOptions& options, Rng* rng)
        : x_(x), y_(y), w_(w), n_classes_(n_classes), options_(options), rng_(rng) {
        n_features_ = x.empty() ? 0 : x.front().size();
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        DecisionTree tree;
        grow(tree, std::move(rows), 0);
        return tree;
    }

private:
    std::vector<double> class_weights(std::span<const std::size_t> rows) const {
        std::vector<double> counts(n_classes_, 0.0);
        for (auto r : rows) counts[static_cast<std::size_t>(y_[r])] += w_[r];
        return counts;
    }

    // Best split of `rows` on `feature`: maximises sum_c l_c^2/W_l + sum_c r_c^2/W_r,
    // which is the weighted Gini decrease up to a constant.
    std::optional<SplitChoice> best_split_on(int feature, std::vector<std::size_t>& rows,
                                             const std::vector<double>& totals, double total_w) const {
        const auto f = static_cast<std::size_t>(feature);
        std::stable_sort(rows.begin(), rows.end(),
                         [&](std::size_t a, std::size_t b) { return x_[a][f] < x_[b][f]; });
        if (x_[rows.front()][f] == x_[rows.back()][f]) return std::nullopt;

        std::vector<double> left(n_classes_, 0.0);
        double left_w = 0.0;
        std::optional<SplitChoice> best;
        for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
            const auto r = rows[i];
            left[static_cast<std::size_t>(y_[r])] += w_[r];
            left_w += w_[r];
            const double here = x_[r][f];
            const double next = x_[rows[i + 1]][f];
            if (here == next) continue;
            const double right_w = total_w - left_w;
            if (left_w <= 0.0 || right_w <= 0.0) continue;
            double ls = 0.0, rs = 0.0;
            for (std::size_t c = 0; c < n_classes_; ++c) {
                ls += left[c] * left[c];
                const double rc = totals[c] - left[c];
                rs += rc * rc;
            }
            const double score = ls / left_w + rs / right_w;
            if (!best || score > best->score) best = SplitChoice{feature, midpoint(here, next), score};
        }
        return best;
    }

    int grow(DecisionTree& tree, std::vector<std::size_t> rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        const auto totals = class_weights(rows);
        const double total_w = std::accumulate(totals.begin(), totals.end(), 0.0);
        const auto non_empty = std::count_if(totals.begin(), totals.end(), [](double c) { return c > 0.0; });

        auto make_leaf = [&] {
            auto& node = tree.nodes[static_cast<std::size_t>(id)];
            node.value = totals;
            if (total_w > 0.0) {
                for (auto& v : node.value) v /= total_w;
            }
            return id;
        };

        if (non_empty <= 1 || rows.size() < options_.min_samples_split ||
            (options_.max_depth && depth >= *options_.max_depth)) {
            return make_leaf();
        }

        std::vector<int> order(n_features_);
        std::iota(order.begin(), order.end(), 0);
        std::size_t budget = n_features_;
        if (options_.max_features > 0 && options_.max_features < n_features_) {
            if (!rng_) fail(ErrorCode::InvalidArgument, "feature subsampling requires an Rng");
            rng_->shuffle(order);
            budget = options_.max_features;
        }

        std::optional<SplitChoice> best;
        std::vector<std::size_t> scratch = rows;
        for (std::size_t k = 0; k < order.size(); ++k) {
            // Past the sampled budget, keep looking only until something splits.
            if (k >= budget && best) break;
            auto candidate = best_split_on(order[k], scratch, totals, total_w);
            if (candidate && (!best || candidate->score > best->score)) best = candidate;
        }
        if (!best) return make_leaf();

        std::vector<std::size_t> left_rows, right_rows;
        const auto f = static_cast<std::size_t>(best->feature);
        for (auto r : rows) (x_[r][f] <= best->threshold ? left_rows : right_rows).push_back(r);

        const int left = grow(tree, std::move(left_rows), depth + 1);
        const int right = grow(tree, std::move(right_rows), depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best->feature;
        node.threshold = best->threshold;
        node.left = left;
        node.right = right;
        return id;
    }

    const FeatureMatrix& x_;
    std::span<const int> y_;
    std::span<const double> w_;
    std::size_t n_classes_;
    std::size_t n_features_;
    ClassificationTreeOptions options_;
    Rng* rng_;
};

class RegressionBuilder {
public:
    RegressionBuilder(const FeatureMatrix& x, std::span<const double> target, int max_depth,
                      const LeafValueFn& leaf_value)
        : x_(x), target_(target), max_depth_(max_depth), leaf_value_(leaf_value) {
        n_features_ = x.empty() ? 0 : x.front().size();
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        DecisionTree tree;
        grow(tree, std::move(rows), 0);
        return tree;
    }

private:
    int grow(DecisionTree& tree, std::vector<std::size_t> rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();

        std::optional<SplitChoice> best;
        if (depth < max_depth_ && rows.size() >= 2) {
            double total = 0.0;
            for (auto r : rows) total += target_[r];
            const double n = static_cast<double>(rows.size());
            const double parent = total * total / n;
            std::vector<std::size_t> sorted = rows;
            for (std::size_t f = 0; f < n_features_; ++f) {
                std::stable_sort(sorted.begin(), sorted.end(),
                                 [&](std::size_t a, std::size_t b) { return x_[a][f] < x_[b][f]; });
                double left_sum = 0.0;
                for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                    left_sum += target_[sorted[i]];
                    const double here = x_[sorted[i]][f];
                    const double next = x_[sorted[i + 1]][f];
                    if (here == next) continue;
                    const double nl = static_cast<double>(i + 1);
                    const double nr = n - nl;
                    const double right_sum = total - left_sum;
                    const double score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                    if (score > parent + 1e-12 && (!best || score > best->score)) {
                        best = SplitChoice{static_cast<int>(f), midpoint(here, next), score};
                    }
                }
            }
        }

        if (!best) {
            tree.nodes[static_cast<std::size_t>(id)].value = {leaf_value_(rows)};
            return id;
        }

        std::vector<std::size_t> left_rows, right_rows;
        const auto f = static_cast<std::size_t>(best->feature);
        for (auto r : rows) (x_[r][f] <= best->threshold ? left_rows : right_rows).push_back(r);
        const int left = grow(tree, std::move(left_rows), depth + 1);
        const int right = grow(tree, std::move(right_rows), depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best->feature;
        node.threshold = best->threshold;
        node.left = left;
        node.right = right;
        return id;
    }

    const FeatureMatrix& x_;
    std::span<const double> target_;
    int max_depth_;
    const LeafValueFn& leaf_value_;
    std::size_t n_features_;
};

}  // namespace

DecisionTree build_classification_tree(const FeatureMatrix& x, std::span<const int> y,
                                       std::span<const double> weights, std::span<const std::size_t> rows,
                                       std::size_t n_classes, const ClassificationTreeOptions& options,
                                       Rng* rng) {
    if (rows.empty()) fail(ErrorCode::InvalidArgument, "build_classification_tree: no rows");
    ClassificationBuilder builder(x, y, weights, n_classes, options, rng);
    return builder.build({rows.begin(), rows.end()});
}

DecisionTree build_regression_tree(const FeatureMatrix& x, std::span<const double> target,
                                   std::span<const std::size_t> rows, int max_depth,
                                   const LeafValueFn& leaf_value) {
    if (rows.empty()) fail(ErrorCode::InvalidArgument, "build_regression_tree: no rows");
    RegressionBuilder builder(x, target, max_depth, leaf_value);
    return builder.build({rows.begin(), rows.end()});
}

}  // namespace counsel::models::detail
