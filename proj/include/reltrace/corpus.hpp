#pragma once

// Fill-in-the-blanks prompts, a synthetic relation corpus with planted lexical
// cues, a handcrafted model whose designated head copies the cue relation to the
// recall position, and n-way k-shot episode sampling.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reltrace/model.hpp"

namespace reltrace {

struct Span {
    std::uint32_t start = 0;
    std::uint32_t end = 0;  // inclusive

    std::uint32_t length() const noexcept { return end - start + 1; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct RelationExample {
    std::vector<TokenId> tokens;
    Span e1;  // first-mentioned entity
    Span e2;  // second-mentioned entity
    std::uint32_t relation = 0;
    bool subject_is_e1 = true;

    // Throws ErrorKind::Data on out-of-range, overlapping or mis-ordered spans.
    void validate() const;
    friend bool operator==(const RelationExample&, const RelationExample&) = default;
};

enum class TemplateKind { TwoBlank, SingleBlank };

struct PromptInstance {
    std::vector<TokenId> tokens;
    std::uint32_t t = 0;     // recall position: last token before the recalled entity
    std::uint32_t j_e1 = 0;  // final token of the entity whose information is carried to t
    TemplateKind kind = TemplateKind::TwoBlank;
    std::uint32_t relation = 0;

    friend bool operator==(const PromptInstance&, const PromptInstance&) = default;
};

// Reserved role markers and instruction words occupy the first ids of every vocabulary.
namespace tok {
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kSystem = 1;
inline constexpr TokenId kUser = 2;
inline constexpr TokenId kAssistant = 3;
inline constexpr TokenId kBlank = 4;
inline constexpr TokenId kNewline = 5;
}  // namespace tok

// Display strings of the reserved block, in id order.
const std::vector<std::string>& reserved_tokens();

PromptInstance build_prompt(const RelationExample& example, bool order_fix);

struct SyntheticSpec {
    std::uint32_t n_relations = 8;
    std::vector<std::string> relation_names;  // defaults to "R0", "R1", ...
    std::uint32_t examples_per_relation = 60;
    std::uint32_t n_entities = 64;
    std::uint32_t max_entity_len = 2;
    std::uint32_t cues_per_relation = 4;
    std::uint32_t n_filler = 48;
    // Slot patterns over {F (filler), C (cue), E1, E2}, whitespace separated.
    std::vector<std::string> templates;
    bool subject_first_only = false;
    std::uint64_t seed = 1;

    static SyntheticSpec defaults();
    // Throws ErrorKind::Config.
    void validate() const;

    std::uint32_t vocab_size() const;
    TokenId entity_token(std::uint32_t i) const;
    TokenId cue_token(std::uint32_t relation, std::uint32_t i) const;
    TokenId filler_token(std::uint32_t i) const;
    bool is_cue(TokenId id) const;
    // Relation owning a cue token; only valid when is_cue(id).
    std::uint32_t cue_relation(TokenId id) const;
    std::string relation_name(std::uint32_t r) const;
    std::vector<std::string> token_strings() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
void from_json(const nlohmann::json& j, SyntheticSpec& spec);
SyntheticSpec load_spec(const std::filesystem::path& path);

std::vector<RelationExample> generate_corpus(const SyntheticSpec& spec);

struct PlantOptions {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    double attention_logit = 10.0;  // score gap between cue and non-cue keys
    double copy_gain = 1.0;         // size of the copied relation direction per unit cue mass
    double noise_scale = 0.0005;    // output scale of every non-planted head and MLP
    std::uint64_t seed = 7;
};

// Residual dimension carrying relation r's direction in a planted model.
std::uint32_t planted_relation_dim(std::uint32_t relation);

ModelWeights plant_model(const SyntheticSpec& spec, const ModelConfig& config, const PlantOptions& options = {});

// Corpus file: one JSON object per line.
void save_corpus(const std::vector<RelationExample>& corpus, const SyntheticSpec& spec,
                 const std::filesystem::path& path);
std::vector<RelationExample> load_corpus(const std::filesystem::path& path);

struct Episode {
    std::vector<std::uint32_t> relations;  // ascending; position = episode-local class id
    std::vector<PromptInstance> support;   // k per relation, grouped by class
    std::vector<PromptInstance> query;     // q per relation, grouped by class
    std::vector<std::size_t> support_examples;  // corpus indices
    std::vector<std::size_t> query_examples;

    std::uint32_t class_of(std::uint32_t relation) const;
};

Episode sample_episode(const std::vector<RelationExample>& corpus, std::uint32_t n, std::uint32_t k,
                       std::uint32_t q, Rng& rng, bool order_fix = true);

std::vector<RelationExample> filter_subject_first(const std::vector<RelationExample>& corpus);

}  // namespace reltrace
