#pragma once

// Run configuration and the end-to-end drivers behind the CLI subcommands.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reltrace/analysis.hpp"
#include "reltrace/attribution.hpp"
#include "reltrace/probing.hpp"

namespace reltrace {

inline constexpr const char* kArtifactVersion = "1.0.0";

struct RunConfig {
    std::filesystem::path spec;     // optional; supplies relation and token names
    std::filesystem::path corpus;
    std::filesystem::path weights;
    std::filesystem::path output_dir = "out";
    std::uint32_t n = 5;
    std::uint32_t k = 5;
    std::uint32_t q = 15;
    std::uint32_t episodes = 500;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    FeatureKind feature_kind = FeatureKind::AttnHead;
    std::size_t m = 3000;
    bool dedup = true;
    std::uint32_t epochs = 200;
    double lr = 1e-3;
    bool order_fix = true;
    bool subject_first_only = false;
    bool permute_labels = false;
    std::uint32_t workers = 1;
    // attribute
    std::uint32_t seed_index = 0;
    std::uint32_t episode = 0;
    std::optional<std::uint32_t> query;  // all queries when absent
    bool per_layer = false;
    // analyze
    bool alignment = true;
    bool concentration = true;
    bool correlations = false;
    std::filesystem::path stats;
    std::filesystem::path metrics;  // optional published per-relation metrics (model, id, P, R, F1)
    std::string metrics_model;

    // Throws ErrorKind::Config (n >= 2, k, q, m >= 1, episodes >= 1, seeds non-empty).
    void validate() const;
};

// Applies a JSON object of overrides onto a config; unknown keys are config errors.
void apply_overrides(RunConfig& config, const nlohmann::json& overrides);
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

// Reads the JSON config file (if non-empty), then RELTRACE_* environment
// variables, then `--key value` flags, later sources winning.
RunConfig resolve_config(const std::filesystem::path& file, const std::map<std::string, std::string>& flags);

// {artifact, version, config_hash, seeds}; the hash is FNV-1a over the canonical config dump.
nlohmann::json provenance(const RunConfig& config);

struct Workspace {
    ModelWeights weights;
    std::vector<RelationExample> corpus;
    std::vector<std::string> relation_names;  // by relation id
    std::vector<std::string> token_names;     // by token id; may be empty
};

Workspace load_workspace(const RunConfig& config);

struct EvalOutput {
    nlohmann::json document;
    std::vector<double> episode_accuracies;  // seed-major
    ClassificationReport report;
    double mean_accuracy = 0.0;
};

EvalOutput run_eval(const RunConfig& config, const Workspace& ws);

// Attribution for one query of an already-run episode; verifies both
// completeness identities and throws ErrorKind::Numerical when they fail.
QueryAttribution attribute_query(const Workspace& ws, const Episode& episode, const EpisodeResult& result,
                                 std::size_t query_index);

struct AttributeOutput {
    nlohmann::json document;
    std::vector<QueryAttribution> queries;
};

AttributeOutput run_attribute(const RunConfig& config, const Workspace& ws);

// Correlations only need the stats/metrics files, so the workspace is optional.
nlohmann::json run_analyze(const RunConfig& config, const Workspace* ws);

// Per-relation published metric for one model from a metrics TSV (model, id, precision, recall, f1).
std::map<std::string, double> load_metric_column(const std::filesystem::path& path, const std::string& model,
                                                 const std::string& column);

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json model_config_to_json(const ModelConfig& config);

// Runs fn(0..count-1) on up to `workers` threads and returns results in index
// order; the first failure by index is rethrown.
template <typename Fn>
auto parallel_map(std::size_t count, std::uint32_t workers, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))>;

// Episode RNG seed for (run seed, episode index).
std::uint64_t episode_seed(std::uint64_t seed, std::uint32_t episode);

}  // namespace reltrace

#include "reltrace/detail/parallel.hpp"
