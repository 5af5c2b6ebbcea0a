#include "reltrace/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "reltrace/error.hpp"

namespace reltrace {

namespace {

enum class Slot { Filler, Cue, E1, E2 };

std::vector<Slot> parse_template(const std::string& pattern) {
    std::istringstream in(pattern);
    std::vector<Slot> slots;
    std::string w;
    while (in >> w) {
        if (w == "F") {
            slots.push_back(Slot::Filler);
        } else if (w == "C") {
            slots.push_back(Slot::Cue);
        } else if (w == "E1") {
            slots.push_back(Slot::E1);
        } else if (w == "E2") {
            slots.push_back(Slot::E2);
        } else {
            fail(ErrorKind::Config, "template '" + pattern + "': unknown slot '" + w + "'");
        }
    }
    const auto e1 = std::find(slots.begin(), slots.end(), Slot::E1);
    const auto e2 = std::find(slots.begin(), slots.end(), Slot::E2);
    require(std::count(slots.begin(), slots.end(), Slot::E1) == 1 &&
                std::count(slots.begin(), slots.end(), Slot::E2) == 1,
            ErrorKind::Config, "template '" + pattern + "' needs exactly one E1 and one E2");
    require(e1 < e2, ErrorKind::Config, "template '" + pattern + "': E1 must precede E2");
    require(e2 - e1 >= 2, ErrorKind::Config, "template '" + pattern + "': E1 and E2 must not be adjacent");
    require(std::count(slots.begin(), slots.end(), Slot::Cue) >= 1, ErrorKind::Config,
            "template '" + pattern + "' needs at least one cue slot");
    return slots;
}

constexpr std::uint32_t kPlantedFirstRelationDim = 2;

}  // namespace

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> names = {
        "<bos>", "<system>", "<user>", "<assistant>", "[_]", "\\n",
        "You", "are", "a", "helpful", "assistant", ".",
        "Fill", "in", "the", "blanks", "following", "text", ":",
        "Provide", "only", "completed", "as", "your", "answer",
    };
    return names;
}

namespace {

TokenId word(std::string_view w) {
    const auto& names = reserved_tokens();
    const auto it = std::find(names.begin(), names.end(), w);
    return static_cast<TokenId>(it - names.begin());
}

void append_words(std::vector<TokenId>& out, std::initializer_list<std::string_view> words) {
    for (auto w : words) {
        out.push_back(word(w));
    }
}

}  // namespace

void RelationExample::validate() const {
    const auto n = static_cast<std::uint32_t>(tokens.size());
    require(e1.start <= e1.end && e1.end < n, ErrorKind::Data, "e1 span out of range");
    require(e2.start <= e2.end && e2.end < n, ErrorKind::Data, "e2 span out of range");
    require(e1.end < e2.start, ErrorKind::Data, "e1 must end before e2 starts");
}

PromptInstance build_prompt(const RelationExample& ex, bool order_fix) {
    ex.validate();
    PromptInstance p;
    p.relation = ex.relation;
    p.kind = (order_fix && !ex.subject_is_e1) ? TemplateKind::SingleBlank : TemplateKind::TwoBlank;

    auto& out = p.tokens;
    out.push_back(tok::kBos);
    out.push_back(tok::kSystem);
    append_words(out, {"You", "are", "a", "helpful", "assistant", "."});
    out.push_back(tok::kUser);
    append_words(out, {"Fill", "in", "the", "blanks", "in", "the", "following", "text", ":"});
    out.push_back(tok::kNewline);

    // Quoted text with masked spans; remember where the visible subject lands.
    std::uint32_t subject_end_in_text = 0;
    for (std::uint32_t i = 0; i < ex.tokens.size(); ++i) {
        const bool in_e1 = i >= ex.e1.start && i <= ex.e1.end;
        const bool in_e2 = i >= ex.e2.start && i <= ex.e2.end;
        const bool masked = in_e1 || (in_e2 && p.kind == TemplateKind::TwoBlank);
        if (masked) {
            const Span& s = in_e1 ? ex.e1 : ex.e2;
            if (i == s.start) {
                out.push_back(tok::kBlank);
            }
            continue;
        }
        out.push_back(ex.tokens[i]);
        if (in_e2 && i == ex.e2.end) {
            subject_end_in_text = static_cast<std::uint32_t>(out.size() - 1);
        }
    }
    out.push_back(tok::kNewline);
    append_words(out, {"Provide", "only", "the", "completed", "text", "as", "your", "answer", "."});
    out.push_back(tok::kAssistant);

    const std::uint32_t continuation_start = static_cast<std::uint32_t>(out.size());
    if (p.kind == TemplateKind::TwoBlank) {
        // Reveal e1 and stop right before the first token of e2.
        out.insert(out.end(), ex.tokens.begin(), ex.tokens.begin() + ex.e2.start);
        p.j_e1 = continuation_start + ex.e1.end;
    } else {
        // The first-mentioned entity is the object: stop right before it.
        out.insert(out.end(), ex.tokens.begin(), ex.tokens.begin() + ex.e1.start);
        p.j_e1 = subject_end_in_text;
    }
    p.t = static_cast<std::uint32_t>(out.size() - 1);
    require(p.j_e1 < p.t, ErrorKind::Data, "prompt has no token between the entity and the recall position");
    return p;
}

SyntheticSpec SyntheticSpec::defaults() {
    SyntheticSpec s;
    s.templates = {
        "F E1 F C F E2 F",     "E1 F F C E2 F F",     "F F E1 C F E2 F C",
        "F E1 F F E2 F C F",   "C F E1 F F E2 F",     "F E1 C F F E2 C F",
    };
    return s;
}

void SyntheticSpec::validate() const {
    require(n_relations >= 1, ErrorKind::Config, "n_relations must be >= 1");
    require(relation_names.empty() || relation_names.size() == n_relations, ErrorKind::Config,
            "relation_names must be empty or have n_relations entries");
    require(examples_per_relation >= 1, ErrorKind::Config, "examples_per_relation must be >= 1");
    require(n_entities >= 1 && max_entity_len >= 1, ErrorKind::Config, "entity pool must be non-empty");
    require(cues_per_relation >= 1, ErrorKind::Config, "cues_per_relation must be >= 1");
    require(n_filler >= 1, ErrorKind::Config, "n_filler must be >= 1");
    require(!templates.empty(), ErrorKind::Config, "at least one template is required");
    for (const auto& t : templates) {
        parse_template(t);
    }
}

std::uint32_t SyntheticSpec::vocab_size() const {
    return static_cast<std::uint32_t>(reserved_tokens().size()) + n_entities + n_relations * cues_per_relation +
           n_filler;
}

TokenId SyntheticSpec::entity_token(std::uint32_t i) const {
    return static_cast<TokenId>(reserved_tokens().size()) + i;
}

TokenId SyntheticSpec::cue_token(std::uint32_t relation, std::uint32_t i) const {
    return entity_token(n_entities) + relation * cues_per_relation + i;
}

TokenId SyntheticSpec::filler_token(std::uint32_t i) const { return cue_token(n_relations, 0) + i; }

bool SyntheticSpec::is_cue(TokenId id) const { return id >= cue_token(0, 0) && id < filler_token(0); }

std::uint32_t SyntheticSpec::cue_relation(TokenId id) const { return (id - cue_token(0, 0)) / cues_per_relation; }

std::string SyntheticSpec::relation_name(std::uint32_t r) const {
    return relation_names.empty() ? "R" + std::to_string(r) : relation_names.at(r);
}

std::vector<std::string> SyntheticSpec::token_strings() const {
    std::vector<std::string> out = reserved_tokens();
    for (std::uint32_t i = 0; i < n_entities; ++i) {
        out.push_back("ent" + std::to_string(i));
    }
    for (std::uint32_t r = 0; r < n_relations; ++r) {
        for (std::uint32_t i = 0; i < cues_per_relation; ++i) {
            out.push_back(relation_name(r) + "_cue" + std::to_string(i));
        }
    }
    for (std::uint32_t i = 0; i < n_filler; ++i) {
        out.push_back("w" + std::to_string(i));
    }
    return out;
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = nlohmann::json{{"n_relations", s.n_relations},
                       {"relation_names", s.relation_names},
                       {"examples_per_relation", s.examples_per_relation},
                       {"n_entities", s.n_entities},
                       {"max_entity_len", s.max_entity_len},
                       {"cues_per_relation", s.cues_per_relation},
                       {"n_filler", s.n_filler},
                       {"templates", s.templates},
                       {"subject_first_only", s.subject_first_only},
                       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    s = SyntheticSpec::defaults();
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            j.at(key).get_to(field);
        }
    };
    opt("n_relations", s.n_relations);
    opt("relation_names", s.relation_names);
    opt("examples_per_relation", s.examples_per_relation);
    opt("n_entities", s.n_entities);
    opt("max_entity_len", s.max_entity_len);
    opt("cues_per_relation", s.cues_per_relation);
    opt("n_filler", s.n_filler);
    opt("templates", s.templates);
    opt("subject_first_only", s.subject_first_only);
    opt("seed", s.seed);
}

SyntheticSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Data, "cannot open spec file " + path.string());
    SyntheticSpec s;
    try {
        s = nlohmann::json::parse(in).get<SyntheticSpec>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, "spec file " + path.string() + ": " + e.what());
    }
    s.validate();
    return s;
}

std::vector<RelationExample> generate_corpus(const SyntheticSpec& spec) {
    spec.validate();
    std::vector<std::vector<Slot>> shapes;
    for (const auto& t : spec.templates) {
        shapes.push_back(parse_template(t));
    }
    Rng rng(spec.seed);
    std::vector<RelationExample> corpus;
    corpus.reserve(static_cast<std::size_t>(spec.n_relations) * spec.examples_per_relation);

    auto entity = [&](std::vector<TokenId>& out) {
        const auto len = 1 + static_cast<std::uint32_t>(rng.below(spec.max_entity_len));
        const auto start = static_cast<std::uint32_t>(out.size());
        for (std::uint32_t i = 0; i < len; ++i) {
            out.push_back(spec.entity_token(static_cast<std::uint32_t>(rng.below(spec.n_entities))));
        }
        return Span{start, start + len - 1};
    };

    for (std::uint32_t r = 0; r < spec.n_relations; ++r) {
        for (std::uint32_t i = 0; i < spec.examples_per_relation; ++i) {
            const auto& shape = shapes[rng.below(shapes.size())];
            RelationExample ex;
            ex.relation = r;
            ex.subject_is_e1 = spec.subject_first_only || i % 2 == 0;
            for (Slot s : shape) {
                switch (s) {
                    case Slot::Filler:
                        ex.tokens.push_back(spec.filler_token(static_cast<std::uint32_t>(rng.below(spec.n_filler))));
                        break;
                    case Slot::Cue:
                        ex.tokens.push_back(
                            spec.cue_token(r, static_cast<std::uint32_t>(rng.below(spec.cues_per_relation))));
                        break;
                    case Slot::E1:
                        ex.e1 = entity(ex.tokens);
                        break;
                    case Slot::E2:
                        ex.e2 = entity(ex.tokens);
                        break;
                }
            }
            corpus.push_back(std::move(ex));
        }
    }
    return corpus;
}

std::uint32_t planted_relation_dim(std::uint32_t relation) { return kPlantedFirstRelationDim + relation; }

ModelWeights plant_model(const SyntheticSpec& spec, const ModelConfig& config, const PlantOptions& opt) {
    spec.validate();
    config.validate();
    const std::uint32_t R = spec.n_relations;
    const std::uint32_t d = config.d_model, dh = config.d_head, F = config.d_ff, V = config.vocab_size;
    require(V >= spec.vocab_size(), ErrorKind::Config,
            "vocab_size " + std::to_string(V) + " cannot hold the spec vocabulary (" +
                std::to_string(spec.vocab_size()) + ")");
    require(opt.layer < config.n_layers && opt.head < config.n_heads, ErrorKind::Config,
            "planted head outside the model");
    // dims: 0 cue flag, 1 constant, [2, 2+R) relation directions, 2+R cue padding, rest token identity.
    const std::uint32_t pad_dim = kPlantedFirstRelationDim + R;
    const std::uint32_t first_free = pad_dim + 1;
    require(dh >= R + 1, ErrorKind::Config, "subspace capacity exceeded: d_head must be >= n_relations + 1");
    require(d >= first_free + 4, ErrorKind::Config, "subspace capacity exceeded: d_model too small for n_relations");

    Rng rng(opt.seed);
    auto gaussian = [&](std::vector<std::size_t> shape, double scale) {
        Tensor t(std::move(shape));
        for (double& v : t.data()) {
            v = static_cast<double>(static_cast<float>(scale * rng.normal()));
        }
        return t;
    };
    auto is_relation_dim = [&](std::uint32_t i) { return i >= kPlantedFirstRelationDim && i < pad_dim; };
    auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };

    ModelWeights w;
    w.config = config;

    // Every token embedding has squared norm 4, so the layer-0 rmsnorm scale is token independent.
    constexpr double kSquaredNorm = 4.0;
    w.embed = Tensor({V, d});
    for (TokenId id = 0; id < V; ++id) {
        auto e = w.embed.row(id);
        e[1] = 1.0;
        if (spec.is_cue(id)) {
            e[0] = 1.0;
            e[planted_relation_dim(spec.cue_relation(id))] = 1.0;
            e[pad_dim] = std::sqrt(kSquaredNorm - 3.0);
        } else {
            double ss = 0.0;
            for (std::uint32_t i = first_free; i < d; ++i) {
                e[i] = rng.normal();
                ss += e[i] * e[i];
            }
            const double k = std::sqrt((kSquaredNorm - 1.0) / ss);
            for (std::uint32_t i = first_free; i < d; ++i) {
                e[i] = f32(e[i] * k);
            }
        }
    }

    const double rms0 = std::sqrt(kSquaredNorm / d);
    const double qk = std::sqrt(opt.attention_logit * std::sqrt(static_cast<double>(dh)) * rms0 * rms0);
    const double vo = std::sqrt(opt.copy_gain * rms0);

    for (std::uint32_t l = 0; l < config.n_layers; ++l) {
        LayerWeights lw;
        lw.attn_norm = Tensor({d}, 1.0);
        lw.mlp_norm = Tensor({d}, 1.0);
        lw.wq = gaussian({d, d}, 0.3);
        lw.wk = gaussian({d, d}, 0.3);
        lw.wv = gaussian({d, d}, 0.3);
        lw.wo = gaussian({d, d}, opt.noise_scale);
        lw.w_gate = gaussian({d, F}, 0.3);
        lw.w_up = gaussian({d, F}, 0.3);
        lw.w_down = gaussian({F, d}, opt.noise_scale);
        // Nothing except the planted head reads or writes the relation subspace.
        for (std::uint32_t i = 0; i < d; ++i) {
            if (!is_relation_dim(i)) {
                continue;
            }
            for (std::uint32_t c = 0; c < d; ++c) {
                lw.wq.at(i, c) = lw.wk.at(i, c) = lw.wv.at(i, c) = 0.0;
                lw.wo.at(c, i) = 0.0;
            }
            for (std::uint32_t c = 0; c < F; ++c) {
                lw.w_gate.at(i, c) = lw.w_up.at(i, c) = 0.0;
                lw.w_down.at(c, i) = 0.0;
            }
        }
        if (l == opt.layer) {
            const std::uint32_t base = opt.head * dh;
            for (std::uint32_t i = 0; i < d; ++i) {
                for (std::uint32_t c = base; c < base + dh; ++c) {
                    lw.wq.at(i, c) = lw.wk.at(i, c) = lw.wv.at(i, c) = 0.0;
                }
            }
            for (std::uint32_t r = base; r < base + dh; ++r) {
                for (std::uint32_t c = 0; c < d; ++c) {
                    lw.wo.at(r, c) = 0.0;
                }
            }
            // Query reads the constant dim, key reads the cue flag: cue keys score attention_logit higher.
            lw.wq.at(1, base) = f32(qk);
            lw.wk.at(0, base) = f32(qk);
            for (std::uint32_t r = 0; r < R; ++r) {
                lw.wv.at(planted_relation_dim(r), base + 1 + r) = f32(vo);
                lw.wo.at(base + 1 + r, planted_relation_dim(r)) = f32(vo);
            }
        }
        w.layers.push_back(std::move(lw));
    }
    w.final_norm = Tensor({d}, 1.0);
    w.unembed = gaussian({d, V}, 0.1);
    w.validate();
    return w;
}

void save_corpus(const std::vector<RelationExample>& corpus, const SyntheticSpec& spec,
                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::Data, "cannot write corpus " + path.string());
    const auto names = spec.token_strings();
    for (const auto& ex : corpus) {
        nlohmann::json j;
        j["tokens"] = ex.tokens;
        std::vector<std::string> text;
        for (TokenId id : ex.tokens) {
            text.push_back(id < names.size() ? names[id] : "<unk>");
        }
        j["text"] = text;
        j["e1"] = {ex.e1.start, ex.e1.end};
        j["e2"] = {ex.e2.start, ex.e2.end};
        j["relation"] = ex.relation;
        j["relation_name"] = spec.relation_name(ex.relation);
        j["subject_is_e1"] = ex.subject_is_e1;
        out << j.dump() << '\n';
    }
    require(out.good(), ErrorKind::Data, "write failed for corpus " + path.string());
}

std::vector<RelationExample> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Data, "cannot open corpus " + path.string());
    std::vector<RelationExample> corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        RelationExample ex;
        try {
            const auto j = nlohmann::json::parse(line);
            ex.tokens = j.at("tokens").get<std::vector<TokenId>>();
            const auto e1 = j.at("e1").get<std::vector<std::uint32_t>>();
            const auto e2 = j.at("e2").get<std::vector<std::uint32_t>>();
            require(e1.size() == 2 && e2.size() == 2, ErrorKind::Data, "span must be [start, end]");
            ex.e1 = {e1[0], e1[1]};
            ex.e2 = {e2[0], e2[1]};
            ex.relation = j.at("relation").get<std::uint32_t>();
            ex.subject_is_e1 = j.at("subject_is_e1").get<bool>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ex.validate();
        corpus.push_back(std::move(ex));
    }
    return corpus;
}

std::uint32_t Episode::class_of(std::uint32_t relation) const {
    const auto it = std::find(relations.begin(), relations.end(), relation);
    require(it != relations.end(), ErrorKind::Argument, "relation not part of the episode");
    return static_cast<std::uint32_t>(it - relations.begin());
}

Episode sample_episode(const std::vector<RelationExample>& corpus, std::uint32_t n, std::uint32_t k,
                       std::uint32_t q, Rng& rng, bool order_fix) {
    require(n >= 1 && k >= 1 && q >= 1, ErrorKind::Argument, "episode needs n, k, q >= 1");
    std::map<std::uint32_t, std::vector<std::size_t>> by_relation;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        by_relation[corpus[i].relation].push_back(i);
    }
    std::vector<std::uint32_t> pool;
    for (const auto& [r, idx] : by_relation) {
        pool.push_back(r);
    }
    require(n <= pool.size(), ErrorKind::Argument,
            "episode asks for " + std::to_string(n) + " relations but the corpus has " + std::to_string(pool.size()));

    // Partial Fisher-Yates.
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    Episode ep;
    ep.relations.assign(pool.begin(), pool.begin() + n);
    std::sort(ep.relations.begin(), ep.relations.end());

    for (std::uint32_t r : ep.relations) {
        auto idx = by_relation[r];
        require(idx.size() >= static_cast<std::size_t>(k) + q, ErrorKind::Argument,
                "relation " + std::to_string(r) + " has fewer than k + q examples");
        for (std::size_t i = 0; i < k + q; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        for (std::size_t i = 0; i < k + q; ++i) {
            auto prompt = build_prompt(corpus[idx[i]], order_fix);
            if (i < k) {
                ep.support.push_back(std::move(prompt));
                ep.support_examples.push_back(idx[i]);
            } else {
                ep.query.push_back(std::move(prompt));
                ep.query_examples.push_back(idx[i]);
            }
        }
    }
    // Support and query must never share an example.
    for (std::size_t s : ep.support_examples) {
        require(std::find(ep.query_examples.begin(), ep.query_examples.end(), s) == ep.query_examples.end(),
                ErrorKind::Numerical, "support and query overlap");
    }
    return ep;
}

std::vector<RelationExample> filter_subject_first(const std::vector<RelationExample>& corpus) {
    std::vector<RelationExample> out;
    std::copy_if(corpus.begin(), corpus.end(), std::back_inserter(out),
                 [](const RelationExample& ex) { return ex.subject_is_e1; });
    return out;
}

}  // namespace reltrace
