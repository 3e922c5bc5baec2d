#include "counsel/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "counsel/error.hpp"
#include "counsel/numeric.hpp"
#include "tree_builder.hpp"

namespace counsel::models {

using json = nlohmann::json;
using detail::argmax_first;
using detail::FeatureMatrix;

std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::RandomForest: return "random_forest";
        case ModelKind::GradientBoosting: return "gradient_boosting";
        case ModelKind::AdaBoost: return "adaboost";
        case ModelKind::SvmLinear: return "svm_linear";
        case ModelKind::NaiveBayes: return "naive_bayes";
    }
    return "unknown";
}

std::string_view display_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::RandomForest: return "Random Forest";
        case ModelKind::GradientBoosting: return "Gradient Boosting";
        case ModelKind::AdaBoost: return "AdaBoost";
        case ModelKind::SvmLinear: return "Support Vector Machine";
        case ModelKind::NaiveBayes: return "Naive Bayes";
    }
    return "Unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    for (auto kind : kAllModelKinds) {
        if (to_string(kind) == name) return kind;
    }
    fail(ErrorCode::InvalidArgument, "unknown model kind '" + std::string(name) + "'");
}

// --- datasets --------------------------------------------------------------

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> counts(label_set.size(), 0);
    for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
    return counts;
}

std::vector<std::string> canonical_label_order(std::vector<std::string> names) {
    static const std::vector<std::string> known = {"sad", "neutral", "positive", "relax"};
    std::set<std::string> unique(names.begin(), names.end());
    std::vector<std::string> out;
    for (const auto& k : known) {
        if (unique.erase(k)) out.push_back(k);
    }
    out.insert(out.end(), unique.begin(), unique.end());
    return out;
}

Dataset Dataset::from_named(const std::vector<std::vector<double>>& features, const std::vector<std::string>& labels,
                            const std::vector<int>& participants) {
    if (features.size() != labels.size()) {
        fail(ErrorCode::InvalidArgument, "Dataset::from_named: features/labels length mismatch");
    }
    Dataset d;
    d.label_set = canonical_label_order(labels);
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < d.label_set.size(); ++i) index[d.label_set[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < features.size(); ++i) {
        LabeledSample s;
        s.features = features[i];
        s.label = index.at(labels[i]);
        s.participant = i < participants.size() ? participants[i] : -1;
        if (!d.samples.empty() && s.features.size() != d.samples.front().features.size()) {
            fail(ErrorCode::DimensionMismatch, "Dataset::from_named: ragged feature vectors");
        }
        d.samples.push_back(std::move(s));
    }
    return d;
}

namespace {

// Largest-remainder allocation of `total` across buckets proportional to
// `weights`, never exceeding `caps`. Ties go to the lower bucket index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights,
                                   const std::vector<std::size_t>& caps) {
    const std::size_t k = weights.size();
    std::vector<std::size_t> out(k, 0);
    const double weight_sum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::size_t{0}));
    if (total == 0 || weight_sum == 0.0) return out;
    std::vector<double> remainder(k, 0.0);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
        const double quota = static_cast<double>(total) * static_cast<double>(weights[c]) / weight_sum;
        out[c] = std::min(caps[c], static_cast<std::size_t>(std::floor(quota)));
        remainder[c] = quota - std::floor(quota);
        assigned += out[c];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    // One extra unit per bucket in remainder order; further passes only when caps bind.
    while (assigned < total) {
        bool progressed = false;
        for (auto c : order) {
            if (assigned == total) break;
            if (out[c] < caps[c]) {
                ++out[c];
                ++assigned;
                progressed = true;
            }
        }
        if (!progressed) break;
    }
    return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.label_set = data.label_set;
    out.samples.reserve(rows.size());
    for (auto r : rows) out.samples.push_back(data.samples[r]);
    return out;
}

}  // namespace

DatasetSplit split_dataset(const Dataset& data, std::array<double, 3> ratios, std::uint64_t seed) {
    const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(ratio_sum - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
        fail(ErrorCode::InvalidArgument, "split_dataset: ratios must be non-negative and sum to 1");
    }
    const std::size_t n = data.size();
    if (n < 10) fail(ErrorCode::TooFewSamples, "split_dataset: need at least 10 samples, got " + std::to_string(n));

    const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
    const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[2]));

    const std::size_t k = data.label_set.size();
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(data.samples[i].label)].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> counts(k);
    for (std::size_t c = 0; c < k; ++c) {
        rng.shuffle(by_class[c]);
        counts[c] = by_class[c].size();
    }

    const auto test_per_class = apportion(n_test, counts, counts);
    std::vector<std::size_t> remaining(k);
    for (std::size_t c = 0; c < k; ++c) remaining[c] = counts[c] - test_per_class[c];
    const auto val_per_class = apportion(n_val, counts, remaining);

    std::vector<std::size_t> train_rows, val_rows, test_rows;
    for (std::size_t c = 0; c < k; ++c) {
        const auto& rows = by_class[c];
        std::size_t i = 0;
        for (; i < test_per_class[c]; ++i) test_rows.push_back(rows[i]);
        for (std::size_t j = 0; j < val_per_class[c]; ++j, ++i) val_rows.push_back(rows[i]);
        for (; i < rows.size(); ++i) train_rows.push_back(rows[i]);
    }
    // Keep input order inside each split so downstream learners see a stable order.
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    return {subset(data, train_rows), subset(data, val_rows), subset(data, test_rows)};
}

// --- prediction ------------------------------------------------------------

const TreeNode& DecisionTree::leaf_for(std::span<const double> x) const {
    const TreeNode* node = &nodes.front();
    while (node->feature >= 0) {
        const auto f = static_cast<std::size_t>(node->feature);
        node = &nodes[static_cast<std::size_t>(x[f] <= node->threshold ? node->left : node->right)];
    }
    return *node;
}

namespace {

std::vector<double> softmax(std::span<const double> scores) {
    const double peak = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - peak);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

void check_finite(std::span<const double> x, const char* where) {
    for (double v : x) {
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteFeature, std::string(where) + ": non-finite feature value");
    }
}

struct Predictor {
    std::span<const double> x;
    std::size_t n_classes;

    std::vector<double> operator()(const RandomForestParams& p) const {
        std::vector<double> votes(n_classes, 0.0);
        for (const auto& tree : p.trees) votes[static_cast<std::size_t>(argmax_first(tree.leaf_for(x).value))] += 1.0;
        for (auto& v : votes) v /= static_cast<double>(p.trees.size());
        return votes;
    }

    std::vector<double> operator()(const GradientBoostingParams& p) const {
        std::vector<double> scores = p.init_scores;
        for (const auto& round : p.rounds) {
            for (std::size_t c = 0; c < n_classes; ++c) scores[c] += p.learning_rate * round[c].leaf_for(x).value[0];
        }
        return softmax(scores);
    }

    std::vector<double> operator()(const AdaBoostParams& p) const {
        std::vector<double> score(n_classes, 0.0);
        double total = 0.0;
        for (std::size_t m = 0; m < p.stumps.size(); ++m) {
            score[static_cast<std::size_t>(argmax_first(p.stumps[m].leaf_for(x).value))] += p.alphas[m];
            total += p.alphas[m];
        }
        if (total <= 0.0) return std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes));
        for (auto& s : score) s /= total;
        return score;
    }

    std::vector<double> operator()(const LinearSvmParams& p) const {
        std::vector<double> scores(n_classes, 0.0);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double s = p.bias[c];
            for (std::size_t f = 0; f < x.size(); ++f) {
                s += p.weights[c][f] * (x[f] - p.feature_mean[f]) / p.feature_scale[f];
            }
            scores[c] = s;
        }
        return softmax(scores);
    }

    std::vector<double> operator()(const NaiveBayesParams& p) const {
        std::vector<double> log_post(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            double lp = p.log_prior[c];
            for (std::size_t f = 0; f < x.size(); ++f) {
                const double var = p.variances[c][f];
                const double d = x[f] - p.means[c][f];
                lp += -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
            }
            log_post[c] = lp;
        }
        return softmax(log_post);
    }
};

}  // namespace

TrainedModel::TrainedModel(ModelKind kind, std::vector<std::string> label_set, std::size_t n_features,
                           std::uint64_t seed, ModelParams params)
    : kind_(kind), label_set_(std::move(label_set)), n_features_(n_features), seed_(seed), params_(std::move(params)) {}

std::vector<double> TrainedModel::predict_distribution(std::span<const double> features) const {
    if (features.size() != n_features_) {
        fail(ErrorCode::DimensionMismatch, "predict: expected " + std::to_string(n_features_) + " features, got " +
                                               std::to_string(features.size()));
    }
    check_finite(features, "predict");
    return std::visit(Predictor{features, label_set_.size()}, params_);
}

int TrainedModel::predict(std::span<const double> features) const {
    return argmax_first(predict_distribution(features));
}

// --- training --------------------------------------------------------------

namespace {

FeatureMatrix feature_matrix(const Dataset& d) {
    FeatureMatrix x;
    x.reserve(d.size());
    for (const auto& s : d.samples) x.push_back(s.features);
    return x;
}

std::vector<int> label_vector(const Dataset& d) {
    std::vector<int> y;
    y.reserve(d.size());
    for (const auto& s : d.samples) y.push_back(s.label);
    return y;
}

RandomForestParams train_forest(const Dataset& d, const Hyperparams& h, Rng& rng) {
    const auto x = feature_matrix(d);
    const auto y = label_vector(d);
    const std::vector<double> w(d.size(), 1.0);
    detail::ClassificationTreeOptions opt;
    opt.max_depth = h.forest_max_depth;
    opt.max_features = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d.n_features()))));

    RandomForestParams p;
    std::vector<std::size_t> rows(d.size());
    for (int t = 0; t < h.forest_trees; ++t) {
        for (auto& r : rows) r = rng.index(d.size());
        p.trees.push_back(detail::build_classification_tree(x, y, w, rows, d.label_set.size(), opt, &rng));
    }
    return p;
}

GradientBoostingParams train_boosting(const Dataset& d, const Hyperparams& h) {
    const auto x = feature_matrix(d);
    const std::size_t n = d.size();
    const std::size_t k = d.label_set.size();
    const auto counts = d.class_counts();

    GradientBoostingParams p;
    p.learning_rate = h.boosting_learning_rate;
    for (std::size_t c = 0; c < k; ++c) {
        const double prior = std::max(static_cast<double>(counts[c]) / static_cast<double>(n), 1e-12);
        p.init_scores.push_back(std::log(prior));
    }

    std::vector<std::vector<double>> scores(n, p.init_scores);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::vector<double> residual(n);
    const double shrink = static_cast<double>(k - 1) / static_cast<double>(k);

    for (int round = 0; round < h.boosting_rounds; ++round) {
        std::vector<std::vector<double>> prob(n);
        for (std::size_t i = 0; i < n; ++i) prob[i] = softmax(scores[i]);

        std::vector<DecisionTree> trees;
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                residual[i] = (d.samples[i].label == static_cast<int>(c) ? 1.0 : 0.0) - prob[i][c];
            }
            // Newton step for the multinomial deviance (Friedman 2001).
            auto leaf = [&](std::span<const std::size_t> leaf_rows) {
                double num = 0.0, den = 0.0;
                for (auto r : leaf_rows) {
                    num += residual[r];
                    den += std::abs(residual[r]) * (1.0 - std::abs(residual[r]));
                }
                return den < 1e-12 ? 0.0 : shrink * num / den;
            };
            trees.push_back(detail::build_regression_tree(x, residual, rows, h.boosting_depth, leaf));
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) scores[i][c] += p.learning_rate * trees[c].leaf_for(x[i]).value[0];
        }
        p.rounds.push_back(std::move(trees));
    }
    return p;
}

AdaBoostParams train_adaboost(const Dataset& d, const Hyperparams& h) {
    const auto x = feature_matrix(d);
    const auto y = label_vector(d);
    const std::size_t n = d.size();
    const double k = static_cast<double>(d.label_set.size());
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    detail::ClassificationTreeOptions opt;
    opt.max_depth = 1;

    AdaBoostParams p;
    for (int m = 0; m < h.adaboost_rounds; ++m) {
        auto stump = detail::build_classification_tree(x, y, w, rows, d.label_set.size(), opt, nullptr);
        std::vector<bool> miss(n);
        double err = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            miss[i] = argmax_first(stump.leaf_for(x[i]).value) != y[i];
            if (miss[i]) err += w[i];
            total += w[i];
        }
        err /= total;
        if (err <= 0.0) {
            p.stumps.push_back(std::move(stump));
            p.alphas.push_back(1.0);
            break;
        }
        if (err >= 1.0 - 1.0 / k) {
            if (p.stumps.empty()) {
                p.stumps.push_back(std::move(stump));
                p.alphas.push_back(1.0);
            }
            break;
        }
        const double alpha = std::log((1.0 - err) / err) + std::log(k - 1.0);
        double norm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (miss[i]) w[i] *= std::exp(alpha);
            norm += w[i];
        }
        for (auto& wi : w) wi /= norm;
        p.stumps.push_back(std::move(stump));
        p.alphas.push_back(alpha);
    }
    return p;
}

LinearSvmParams train_svm(const Dataset& d, const Hyperparams& h) {
    const std::size_t n = d.size();
    const std::size_t f = d.n_features();
    const std::size_t k = d.label_set.size();

    LinearSvmParams p;
    p.feature_mean.assign(f, 0.0);
    p.feature_scale.assign(f, 0.0);
    for (const auto& s : d.samples) {
        for (std::size_t j = 0; j < f; ++j) p.feature_mean[j] += s.features[j];
    }
    for (auto& m : p.feature_mean) m /= static_cast<double>(n);
    for (const auto& s : d.samples) {
        for (std::size_t j = 0; j < f; ++j) {
            const double dv = s.features[j] - p.feature_mean[j];
            p.feature_scale[j] += dv * dv;
        }
    }
    for (auto& sc : p.feature_scale) {
        sc = std::sqrt(sc / static_cast<double>(n));
        if (!(sc > 0.0)) sc = 1.0;
    }

    std::vector<std::vector<double>> z(n, std::vector<double>(f));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) z[i][j] = (d.samples[i].features[j] - p.feature_mean[j]) / p.feature_scale[j];
    }

    p.weights.assign(k, std::vector<double>(f, 0.0));
    p.bias.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        auto& w = p.weights[c];
        double& b = p.bias[c];
        for (int epoch = 0; epoch < h.svm_epochs; ++epoch) {
            const double eta = h.svm_learning_rate / std::sqrt(static_cast<double>(epoch + 1));
            for (std::size_t i = 0; i < n; ++i) {
                const double yi = d.samples[i].label == static_cast<int>(c) ? 1.0 : -1.0;
                double margin = b;
                for (std::size_t j = 0; j < f; ++j) margin += w[j] * z[i][j];
                margin *= yi;
                for (std::size_t j = 0; j < f; ++j) w[j] -= eta * h.svm_lambda * w[j];
                if (margin < 1.0) {
                    for (std::size_t j = 0; j < f; ++j) w[j] += eta * yi * z[i][j];
                    b += eta * yi;
                }
            }
        }
    }
    return p;
}

NaiveBayesParams train_naive_bayes(const Dataset& d, const Hyperparams& h) {
    const std::size_t f = d.n_features();
    const std::size_t k = d.label_set.size();
    const auto counts = d.class_counts();

    NaiveBayesParams p;
    p.means.assign(k, std::vector<double>(f, 0.0));
    p.variances.assign(k, std::vector<double>(f, 0.0));
    for (const auto& s : d.samples) {
        for (std::size_t j = 0; j < f; ++j) p.means[static_cast<std::size_t>(s.label)][j] += s.features[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
        for (auto& m : p.means[c]) m = counts[c] ? m / static_cast<double>(counts[c]) : 0.0;
    }
    for (const auto& s : d.samples) {
        const auto c = static_cast<std::size_t>(s.label);
        for (std::size_t j = 0; j < f; ++j) {
            const double dv = s.features[j] - p.means[c][j];
            p.variances[c][j] += dv * dv;
        }
    }
    for (std::size_t c = 0; c < k; ++c) {
        for (auto& v : p.variances[c]) {
            v = counts[c] ? v / static_cast<double>(counts[c]) : 0.0;
            v = std::max(v, h.nb_variance_floor);
        }
        const double prior = static_cast<double>(counts[c]) / static_cast<double>(d.size());
        p.log_prior.push_back(prior > 0.0 ? std::log(prior) : -1e300);
    }
    return p;
}

}  // namespace

TrainedModel train_model(ModelKind kind, const Dataset& train, const Hyperparams& hyper, std::uint64_t seed) {
    if (train.empty()) fail(ErrorCode::InvalidArgument, "train_model: empty training set");
    const auto counts = train.class_counts();
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2) {
        fail(ErrorCode::SingleClassTrainSet, "train_model: training set has fewer than two classes");
    }
    const std::size_t f = train.n_features();
    for (const auto& s : train.samples) {
        if (s.features.size() != f) fail(ErrorCode::DimensionMismatch, "train_model: ragged feature vectors");
        check_finite(s.features, "train_model");
    }

    Rng rng(seed);
    ModelParams params;
    switch (kind) {
        case ModelKind::RandomForest: params = train_forest(train, hyper, rng); break;
        case ModelKind::GradientBoosting: params = train_boosting(train, hyper); break;
        case ModelKind::AdaBoost: params = train_adaboost(train, hyper); break;
        case ModelKind::SvmLinear: params = train_svm(train, hyper); break;
        case ModelKind::NaiveBayes: params = train_naive_bayes(train, hyper); break;
    }
    return TrainedModel(kind, train.label_set, f, seed, std::move(params));
}

// --- evaluation ------------------------------------------------------------

Metrics score_predictions(std::span<const int> predicted, std::span<const int> truth, std::size_t n_classes) {
    if (truth.empty()) fail(ErrorCode::EmptyEvalSet, "evaluate: empty evaluation set");
    if (predicted.size() != truth.size()) fail(ErrorCode::DimensionMismatch, "evaluate: length mismatch");
    std::vector<double> tp(n_classes, 0.0), fp(n_classes, 0.0), fn(n_classes, 0.0), support(n_classes, 0.0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = static_cast<std::size_t>(truth[i]);
        const auto p = static_cast<std::size_t>(predicted[i]);
        support[t] += 1.0;
        if (t == p) {
            ++correct;
            tp[t] += 1.0;
        } else {
            fp[p] += 1.0;
            fn[t] += 1.0;
        }
    }
    const double n = static_cast<double>(truth.size());
    double wf1 = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (support[c] == 0.0) continue;
        const double precision = tp[c] + fp[c] > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double recall = tp[c] / support[c];
        const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        wf1 += support[c] / n * f1;
    }
    return {static_cast<double>(correct) / n, wf1};
}

Metrics evaluate(const TrainedModel& model, const Dataset& eval_set) {
    if (eval_set.empty()) fail(ErrorCode::EmptyEvalSet, "evaluate: empty evaluation set");
    std::vector<int> predicted, truth;
    for (const auto& s : eval_set.samples) {
        predicted.push_back(model.predict(s.features));
        truth.push_back(s.label);
    }
    return score_predictions(predicted, truth, model.label_set().size());
}

// --- benchmark -------------------------------------------------------------

namespace {

std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string BenchReport::to_csv() const {
    std::ostringstream out;
    out << "model,dataset,accuracy,f1\n";
    for (const auto& row : rows) {
        out << display_name(row.kind) << ',' << row.split << ',';
        if (row.metrics) {
            out << format_metric(row.metrics->accuracy) << ',' << format_metric(row.metrics->weighted_f1);
        } else {
            out << ',';
        }
        out << '\n';
    }
    return out.str();
}

json BenchReport::to_json() const {
    json j;
    j["seed"] = seed;
    j["dataset"] = dataset_name;
    j["f1_averaging"] = "weighted";
    j["label_set"] = label_set;
    j["split_sizes"] = {{"n", n_samples}, {"train", train_size}, {"validation", validation_size}, {"test", test_size}};
    j["rows"] = json::array();
    for (const auto& row : rows) {
        json r;
        r["model"] = display_name(row.kind);
        r["kind"] = to_string(row.kind);
        r["dataset"] = row.split;
        if (row.metrics) {
            r["accuracy"] = row.metrics->accuracy;
            r["f1"] = row.metrics->weighted_f1;
            r["status"] = "ok";
        } else {
            r["accuracy"] = nullptr;
            r["f1"] = nullptr;
            r["status"] = "failed";
            r["error"] = row.error;
        }
        j["rows"].push_back(std::move(r));
    }
    return j;
}

BenchReport run_benchmark(const Dataset& data, std::uint64_t seed, const Hyperparams& hyper, std::string dataset_name) {
    const auto split = split_dataset(data, {0.70, 0.20, 0.10}, seed);
    BenchReport report;
    report.seed = seed;
    report.dataset_name = std::move(dataset_name);
    report.n_samples = data.size();
    report.train_size = split.train.size();
    report.validation_size = split.validation.size();
    report.test_size = split.test.size();
    report.label_set = data.label_set;

    for (auto kind : kAllModelKinds) {
        try {
            const auto model = train_model(kind, split.train, hyper, seed);
            report.rows.push_back({kind, "Validation", evaluate(model, split.validation), {}});
            report.rows.push_back({kind, "Test", evaluate(model, split.test), {}});
        } catch (const Error& e) {
            report.rows.push_back({kind, "Validation", std::nullopt, e.what()});
            report.rows.push_back({kind, "Test", std::nullopt, e.what()});
        }
    }
    return report;
}

// --- persistence -----------------------------------------------------------

namespace {

json tree_to_json(const DecisionTree& t) {
    json nodes = json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    return nodes;
}

DecisionTree tree_from_json(const json& j) {
    DecisionTree t;
    for (const auto& n : j) {
        TreeNode node;
        node.feature = n.at(0).get<int>();
        node.threshold = n.at(1).get<double>();
        node.left = n.at(2).get<int>();
        node.right = n.at(3).get<int>();
        node.value = n.at(4).get<std::vector<double>>();
        t.nodes.push_back(std::move(node));
    }
    return t;
}

json trees_to_json(const std::vector<DecisionTree>& trees) {
    json out = json::array();
    for (const auto& t : trees) out.push_back(tree_to_json(t));
    return out;
}

std::vector<DecisionTree> trees_from_json(const json& j) {
    std::vector<DecisionTree> out;
    for (const auto& t : j) out.push_back(tree_from_json(t));
    return out;
}

struct ParamsToJson {
    json operator()(const RandomForestParams& p) const { return {{"trees", trees_to_json(p.trees)}}; }
    json operator()(const GradientBoostingParams& p) const {
        json rounds = json::array();
        for (const auto& r : p.rounds) rounds.push_back(trees_to_json(r));
        return {{"learning_rate", p.learning_rate}, {"init_scores", p.init_scores}, {"rounds", rounds}};
    }
    json operator()(const AdaBoostParams& p) const {
        return {{"stumps", trees_to_json(p.stumps)}, {"alphas", p.alphas}};
    }
    json operator()(const LinearSvmParams& p) const {
        return {{"feature_mean", p.feature_mean},
                {"feature_scale", p.feature_scale},
                {"weights", p.weights},
                {"bias", p.bias}};
    }
    json operator()(const NaiveBayesParams& p) const {
        return {{"log_prior", p.log_prior}, {"means", p.means}, {"variances", p.variances}};
    }
};

}  // namespace

json TrainedModel::to_json() const {
    return {{"format_version", kFormatVersion},
            {"kind", to_string(kind_)},
            {"label_set", label_set_},
            {"n_features", n_features_},
            {"seed", seed_},
            {"params", std::visit(ParamsToJson{}, params_)}};
}

TrainedModel TrainedModel::from_json(const json& j) {
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kFormatVersion) {
            fail(ErrorCode::ParseError, "unsupported model format_version " + std::to_string(version));
        }
        const auto kind = parse_model_kind(j.at("kind").get<std::string>());
        const auto& p = j.at("params");
        ModelParams params;
        switch (kind) {
            case ModelKind::RandomForest: params = RandomForestParams{trees_from_json(p.at("trees"))}; break;
            case ModelKind::GradientBoosting: {
                GradientBoostingParams g;
                g.learning_rate = p.at("learning_rate").get<double>();
                g.init_scores = p.at("init_scores").get<std::vector<double>>();
                for (const auto& r : p.at("rounds")) g.rounds.push_back(trees_from_json(r));
                params = std::move(g);
                break;
            }
            case ModelKind::AdaBoost:
                params = AdaBoostParams{trees_from_json(p.at("stumps")), p.at("alphas").get<std::vector<double>>()};
                break;
            case ModelKind::SvmLinear:
                params = LinearSvmParams{p.at("feature_mean").get<std::vector<double>>(),
                                         p.at("feature_scale").get<std::vector<double>>(),
                                         p.at("weights").get<std::vector<std::vector<double>>>(),
                                         p.at("bias").get<std::vector<double>>()};
                break;
            case ModelKind::NaiveBayes:
                params = NaiveBayesParams{p.at("log_prior").get<std::vector<double>>(),
                                          p.at("means").get<std::vector<std::vector<double>>>(),
                                          p.at("variances").get<std::vector<std::vector<double>>>()};
                break;
        }
        return TrainedModel(kind, j.at("label_set").get<std::vector<std::string>>(),
                            j.at("n_features").get<std::size_t>(), j.at("seed").get<std::uint64_t>(),
                            std::move(params));
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, std::string("model json: ") + e.what());
    }
}

Dataset load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, "cannot open dataset '" + path + "'");
    std::vector<std::vector<double>> features;
    std::vector<std::string> labels;
    std::vector<int> participants;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            features.push_back(j.at("features").get<std::vector<double>>());
            labels.push_back(j.at("label").get<std::string>());
            participants.push_back(j.value("participant", -1));
        } catch (const json::exception& e) {
            fail(ErrorCode::ParseError, path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return Dataset::from_named(features, labels, participants);
}

void save_dataset_jsonl(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write dataset '" + path + "'");
    for (const auto& s : data.samples) {
        json j = {{"features", s.features},
                  {"label", data.label_set[static_cast<std::size_t>(s.label)]},
                  {"participant", s.participant}};
        out << j.dump() << '\n';
    }
}

}  // namespace counsel::models
