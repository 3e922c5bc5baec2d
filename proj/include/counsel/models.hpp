#pragma once

// Classical classifiers over HRV feature vectors, plus the train/eval harness.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace counsel::models {

enum class ModelKind { RandomForest, GradientBoosting, AdaBoost, SvmLinear, NaiveBayes };

inline constexpr std::array<ModelKind, 5> kAllModelKinds = {
    ModelKind::RandomForest, ModelKind::GradientBoosting, ModelKind::AdaBoost, ModelKind::SvmLinear,
    ModelKind::NaiveBayes};

std::string_view to_string(ModelKind kind);
std::string_view display_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct LabeledSample {
    std::vector<double> features;
    int label = 0;  // index into Dataset::label_set
    int participant = -1;
};

struct Dataset {
    std::vector<std::string> label_set;
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::size_t n_features() const { return samples.empty() ? 0 : samples.front().features.size(); }
    std::vector<std::size_t> class_counts() const;

    /// Builds a dataset from named labels. The label set is ordered
    /// sad, neutral, positive, relax, then any other names sorted.
    static Dataset from_named(const std::vector<std::vector<double>>& features,
                              const std::vector<std::string>& labels,
                              const std::vector<int>& participants = {});
};

/// Orders label names: known affect labels first, unknown ones sorted after.
std::vector<std::string> canonical_label_order(std::vector<std::string> names);

struct DatasetSplit {
    Dataset train;
    Dataset validation;
    Dataset test;
};

/// Stratified, seeded split. Global sizes are round(n * ratio) for the
/// validation and test parts with the remainder going to train; each class
/// gets its share by largest-remainder apportionment.
DatasetSplit split_dataset(const Dataset& data, std::array<double, 3> ratios = {0.70, 0.20, 0.10},
                           std::uint64_t seed = 0);

// --- learned state -------------------------------------------------------

struct TreeNode {
    int feature = -1;  // < 0 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> value;  // class distribution (classification) or {prediction}
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    const TreeNode& leaf_for(std::span<const double> x) const;
};

struct RandomForestParams {
    std::vector<DecisionTree> trees;
};

struct GradientBoostingParams {
    double learning_rate = 0.1;
    std::vector<double> init_scores;
    std::vector<std::vector<DecisionTree>> rounds;  // rounds[r][class]
};

struct AdaBoostParams {
    std::vector<DecisionTree> stumps;
    std::vector<double> alphas;
};

struct LinearSvmParams {
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;
    std::vector<std::vector<double>> weights;  // one row per class (one-vs-rest)
    std::vector<double> bias;
};

struct NaiveBayesParams {
    std::vector<double> log_prior;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> variances;
};

using ModelParams =
    std::variant<RandomForestParams, GradientBoostingParams, AdaBoostParams, LinearSvmParams, NaiveBayesParams>;

struct Hyperparams {
    int forest_trees = 100;
    std::optional<int> forest_max_depth;  // unlimited when empty
    int boosting_rounds = 100;
    int boosting_depth = 3;
    double boosting_learning_rate = 0.1;
    int adaboost_rounds = 100;
    int svm_epochs = 200;
    double svm_lambda = 1e-3;
    double svm_learning_rate = 0.1;
    double nb_variance_floor = 1e-9;
};

class TrainedModel {
public:
    static constexpr int kFormatVersion = 1;

    TrainedModel(ModelKind kind, std::vector<std::string> label_set, std::size_t n_features,
                 std::uint64_t seed, ModelParams params);

    ModelKind kind() const { return kind_; }
    const std::vector<std::string>& label_set() const { return label_set_; }
    std::size_t n_features() const { return n_features_; }
    std::uint64_t seed() const { return seed_; }
    const ModelParams& params() const { return params_; }

    /// Distribution over label_set(); sums to 1. Throws DimensionMismatch or
    /// NonFiniteFeature.
    std::vector<double> predict_distribution(std::span<const double> features) const;
    int predict(std::span<const double> features) const;

    nlohmann::json to_json() const;
    static TrainedModel from_json(const nlohmann::json& j);

private:
    ModelKind kind_;
    std::vector<std::string> label_set_;
    std::size_t n_features_;
    std::uint64_t seed_;
    ModelParams params_;
};

TrainedModel train_model(ModelKind kind, const Dataset& train, const Hyperparams& hyper = {},
                         std::uint64_t seed = 0);

struct Metrics {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
};

Metrics evaluate(const TrainedModel& model, const Dataset& eval_set);

/// Accuracy and support-weighted F1 over label indices in [0, n_classes).
Metrics score_predictions(std::span<const int> predicted, std::span<const int> truth, std::size_t n_classes);

struct BenchRow {
    ModelKind kind;
    std::string split;  // "Validation" or "Test"
    std::optional<Metrics> metrics;
    std::string error;
};

struct BenchReport {
    std::uint64_t seed = 0;
    std::string dataset_name;
    std::size_t n_samples = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
    std::size_t test_size = 0;
    std::vector<std::string> label_set;
    std::vector<BenchRow> rows;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

BenchReport run_benchmark(const Dataset& data, std::uint64_t seed, const Hyperparams& hyper = {},
                          std::string dataset_name = "dataset");

// --- persistence ---------------------------------------------------------

Dataset load_dataset_jsonl(const std::string& path);
void save_dataset_jsonl(const Dataset& data, const std::string& path);

}  // namespace counsel::models
