#pragma once

// Average-precision feature selection and linear probes over contribution features.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reltrace/corpus.hpp"
#include "reltrace/tracing.hpp"

namespace reltrace {

struct FeatureMatrix {
    Tensor values;  // [N x M]
    FeatureIndexMap index;
    std::vector<std::uint32_t> labels;  // class ids < class_names.size()
    std::vector<std::string> class_names;

    std::size_t rows() const { return labels.size(); }
    std::size_t cols() const { return index.size(); }
    std::size_t n_classes() const { return class_names.size(); }
    void validate() const;
    // Keeps the listed columns, in the given order.
    FeatureMatrix select_columns(std::span<const std::size_t> columns) const;
};

// Ranks by descending score (ties: ascending example index) and averages the
// precision at each positive's rank. Throws if there is no positive.
double average_precision(std::span<const double> scores, const std::vector<bool>& positives);

struct ScoredFeature {
    std::size_t feature = 0;
    double ap = 0.0;
    friend bool operator==(const ScoredFeature&, const ScoredFeature&) = default;
};

struct SelectionResult {
    std::vector<std::vector<ScoredFeature>> per_class;  // descending AP, ties by feature index
    std::vector<std::size_t> merged;  // ascending and unique when deduplicated, else class-major concatenation
    friend bool operator==(const SelectionResult&, const SelectionResult&) = default;
};

SelectionResult select_features(const FeatureMatrix& support, std::size_t m, bool dedup = true);

struct ProbeHyper {
    std::uint32_t epochs = 200;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
};

struct ProbeModel {
    Tensor weight;  // [C x M]
    std::vector<double> bias;
    FeatureIndexMap index;  // map of the probe's own columns
    std::vector<std::size_t> columns;  // global feature ids the columns were read from
    std::vector<std::string> class_names;
    FeatureKind kind = FeatureKind::AttnHead;
    ProbeHyper hyper;
    std::vector<double> loss_history;  // loss before each epoch, then the final loss

    std::size_t n_classes() const { return bias.size(); }
    std::size_t n_features() const { return index.size(); }
};

struct LossAndGrad {
    double loss = 0.0;
    Tensor grad_weight;
    std::vector<double> grad_bias;
};

// Mean softmax cross-entropy over the rows of x.
LossAndGrad cross_entropy(const Tensor& weight, std::span<const double> bias, const FeatureMatrix& x);

// Full-batch Adam from zero-initialised parameters.
ProbeModel train_probe(const FeatureMatrix& x, const ProbeHyper& hyper = {});

struct Prediction {
    std::vector<double> logits;
    std::uint32_t cls = 0;  // argmax, lowest class id on ties
};

Prediction predict(const ProbeModel& probe, std::span<const double> x);

nlohmann::json probe_to_json(const ProbeModel& probe);
ProbeModel probe_from_json(const nlohmann::json& j);

struct EpisodeOptions {
    FeatureKind kind = FeatureKind::AttnHead;
    std::size_t m = 3000;
    bool dedup = true;
    ProbeHyper hyper;
    // Control experiment: shuffle support labels before selection and training.
    bool permute_support_labels = false;
    std::uint64_t permute_seed = 0;
    // Names indexed by global relation id; "R<id>" when empty.
    std::vector<std::string> relation_names;
};

struct EpisodeResult {
    std::vector<std::uint32_t> golds;        // relation ids
    std::vector<std::uint32_t> predictions;  // relation ids
    std::vector<Prediction> query_predictions;
    double accuracy = 0.0;
    SelectionResult selection;
    ProbeModel probe;
    FeatureMatrix query_features;  // restricted to the probe's columns
};

// Traces every prompt at its recall position and builds the N x M feature matrix.
FeatureMatrix episode_features(const ModelWeights& weights, const std::vector<PromptInstance>& prompts,
                               const Episode& episode, FeatureKind kind);

EpisodeResult run_episode(const ModelWeights& weights, const Episode& episode, const EpisodeOptions& options);

}  // namespace reltrace
