#pragma once

// Classification reports, rank correlation, episode-local TF-IDF lexical
// profiles, TokenScore/lexical alignment and relation-statistics correlations.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reltrace/corpus.hpp"

namespace reltrace {

struct ClassMetrics {
    std::uint32_t relation = 0;
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;  // gold count
};

struct ClassificationReport {
    std::vector<ClassMetrics> per_class;  // ascending relation id; classes never seen are dropped
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
};

// `names` is indexed by relation id; missing entries fall back to "R<id>".
ClassificationReport classification_report(std::span<const std::uint32_t> predictions,
                                           std::span<const std::uint32_t> golds,
                                           const std::vector<std::string>& names);

nlohmann::json to_json(const ClassificationReport& report);

// Mean rank of each value (1-based); tied values share the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> v);

// Pearson correlation of average ranks; nullopt when either input is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

struct LexicalProfile {
    std::vector<std::uint32_t> relations;                 // episode class order
    std::vector<std::map<TokenId, double>> scores;        // per class: token -> contrast score

    double score(std::uint32_t relation, TokenId token) const;
};

LexicalProfile tfidf_profiles(const Episode& episode);

inline constexpr double kStrongAlignMinRho = 0.30;
inline constexpr double kStrongAlignMinMass = 0.50;

struct AlignmentStats {
    std::optional<double> rho;  // undefined for constant inputs
    double mass = 0.0;
    bool strong_align = false;
    bool prediction_correct = false;
};

AlignmentStats make_alignment(std::optional<double> rho, double mass, bool correct);

AlignmentStats lexical_alignment(std::span<const double> token_scores, std::span<const TokenId> tokens,
                                 const LexicalProfile& profile, std::uint32_t predicted_relation, bool correct);

struct AlignmentSummary {
    std::optional<double> mean_rho;  // over queries with a defined rho
    double mean_mass = 0.0;
    std::optional<double> strong_align_incorrect;  // undefined when every prediction is correct
    std::size_t queries = 0;
    std::size_t incorrect = 0;
};

AlignmentSummary aggregate_alignment(std::span<const AlignmentStats> stats);

struct RelationStats {
    std::string property_id;
    std::uint64_t output_range = 1;
    double mean_connection_count = 1.0;
    double tfidf_similarity = 0.0;  // raw value; the file column is in units of 1e-3
};

std::vector<RelationStats> parse_stats_tsv(std::istream& in);
std::vector<RelationStats> parse_stats_json(const nlohmann::json& j);
// Dispatches on the ".json" extension; anything else is read as TSV.
std::vector<RelationStats> ingest_stats(const std::filesystem::path& path);

// Spearman between a per-relation metric and each stats column (and, when
// given, heads-for-95%). Keys: output_range, mean_connection_count,
// tfidf_similarity, heads_for_95. Throws when fewer than 3 relations overlap.
std::map<std::string, std::optional<double>> correlate(
    const std::map<std::string, double>& metric, const std::vector<RelationStats>& stats,
    const std::map<std::string, double>& concentration = {});

}  // namespace reltrace
