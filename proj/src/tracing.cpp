#include "reltrace/tracing.hpp"

#include <array>
#include <fstream>

#include <nlohmann/json.hpp>

#include "reltrace/container.hpp"
#include "reltrace/error.hpp"

namespace reltrace {

namespace {

constexpr std::array<std::string_view, kFeatureKindCount> kKindNames = {
    "attn_head", "attn_token_total", "attn_token_head", "mlp_head",
    "mlp_token_total", "mlp_token_head", "full_attention", "full_mlp",
};

void check_position(const TraceBundle& trace, std::uint32_t layer, std::uint32_t t) {
    require(layer < trace.config.n_layers, ErrorKind::Argument, "layer index out of range");
    require(t < trace.seq_len(), ErrorKind::Argument, "target position out of range");
}

void check_head(const TraceBundle& trace, std::uint32_t head) {
    require(head < trace.config.n_heads, ErrorKind::Argument, "head index out of range");
}

// W_{O,h} applied to a head-space vector z in R^{d_head}.
std::vector<double> project_head(const ModelWeights& weights, std::uint32_t layer, std::uint32_t head,
                                 const std::vector<double>& z) {
    const std::uint32_t d = weights.config.d_model;
    std::vector<double> out(d, 0.0);
    for (std::uint32_t i = 0; i < z.size(); ++i) {
        if (z[i] == 0.0) {
            continue;
        }
        for (std::uint32_t c = 0; c < d; ++c) {
            out[c] += z[i] * weights.wo_head(layer, head, i, c);
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(FeatureKind kind) { return kKindNames.at(static_cast<std::size_t>(kind)); }

FeatureKind parse_feature_kind(std::string_view name) {
    for (std::uint32_t i = 0; i < kFeatureKindCount; ++i) {
        if (kKindNames[i] == name) {
            return static_cast<FeatureKind>(i);
        }
    }
    fail(ErrorKind::Config, "unknown feature kind '" + std::string(name) + "'");
}

bool needs_entity(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::AttnTokenTotal:
        case FeatureKind::AttnTokenHead:
        case FeatureKind::MlpTokenTotal:
        case FeatureKind::MlpTokenHead:
            return true;
        default:
            return false;
    }
}

bool is_per_head(FeatureKind kind) {
    return kind == FeatureKind::AttnHead || kind == FeatureKind::AttnTokenHead || kind == FeatureKind::MlpHead ||
           kind == FeatureKind::MlpTokenHead;
}

bool is_mlp(FeatureKind kind) {
    return kind == FeatureKind::MlpHead || kind == FeatureKind::MlpTokenTotal || kind == FeatureKind::MlpTokenHead ||
           kind == FeatureKind::FullMLP;
}

Contribution head_contribution(const TraceBundle& trace, const ModelWeights& weights, std::uint32_t layer,
                               std::uint32_t head, std::uint32_t t) {
    check_position(trace, layer, t);
    check_head(trace, head);
    const LayerTrace& lt = trace.layers[layer];
    const std::uint32_t dh = trace.config.d_head;
    std::vector<double> z(dh, 0.0);
    for (std::uint32_t j = 0; j <= t; ++j) {
        const double a = lt.attn_weights.at(head, t, j);
        for (std::uint32_t i = 0; i < dh; ++i) {
            z[i] += a * lt.values.at(head, j, i);
        }
    }
    return Contribution{layer, head, t, std::nullopt, project_head(weights, layer, head, z)};
}

Contribution head_token_contribution(const TraceBundle& trace, const ModelWeights& weights, std::uint32_t layer,
                                     std::uint32_t head, std::uint32_t t, std::uint32_t j) {
    check_position(trace, layer, t);
    check_head(trace, head);
    require(j <= t, ErrorKind::Argument, "source position j must not exceed target t (causality)");
    const LayerTrace& lt = trace.layers[layer];
    const std::uint32_t dh = trace.config.d_head;
    const double a = lt.attn_weights.at(head, t, j);
    std::vector<double> z(dh);
    for (std::uint32_t i = 0; i < dh; ++i) {
        z[i] = a * lt.values.at(head, j, i);
    }
    return Contribution{layer, head, t, j, project_head(weights, layer, head, z)};
}

EntityContributions entity_contributions(const TraceBundle& trace, const ModelWeights& weights,
                                         std::uint32_t layer, std::uint32_t t, std::uint32_t j_e1) {
    check_position(trace, layer, t);
    require(j_e1 <= t, ErrorKind::Argument, "entity position must not exceed target t");
    EntityContributions out;
    out.total = Contribution{layer, std::nullopt, t, j_e1, std::vector<double>(trace.config.d_model, 0.0)};
    for (std::uint32_t h = 0; h < trace.config.n_heads; ++h) {
        auto c = head_token_contribution(trace, weights, layer, h, t, j_e1);
        for (std::size_t i = 0; i < c.vec.size(); ++i) {
            out.total.vec[i] += c.vec[i];
        }
        out.per_head.push_back(std::move(c));
    }
    return out;
}

Contribution mlp_propagate(const TraceBundle& trace, const ModelWeights& weights, std::uint32_t layer,
                           std::uint32_t t, const Contribution& delta) {
    check_position(trace, layer, t);
    require(delta.layer == layer, ErrorKind::Argument, "mlp_propagate: contribution belongs to another layer");
    require(delta.target == t, ErrorKind::Argument, "mlp_propagate: contribution has another target position");
    require(delta.vec.size() == trace.config.d_model, ErrorKind::Shape,
            "mlp_propagate: delta must live in the residual stream");
    const LayerTrace& lt = trace.layers[layer];
    const LayerWeights& lw = weights.layers[layer];
    const double r = lt.mlp_norm_scale[t];
    std::vector<double> normed(delta.vec.size());
    for (std::size_t i = 0; i < normed.size(); ++i) {
        normed[i] = lw.mlp_norm[i] * (r * delta.vec[i]);
    }
    std::vector<double> out = vecmat(normed, lw.w_up);
    const auto g = lt.gate.row(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= g[i];
    }
    return Contribution{layer, delta.head, t, delta.source, std::move(out)};
}

FeatureIndexMap feature_index_map(const ModelConfig& config, FeatureKind kind) {
    const std::uint32_t width = is_mlp(kind) ? config.d_ff : config.d_model;
    FeatureIndexMap map;
    if (is_per_head(kind)) {
        map.reserve(static_cast<std::size_t>(config.n_layers) * config.n_heads * width);
        for (std::uint32_t l = 0; l < config.n_layers; ++l) {
            for (std::uint32_t h = 0; h < config.n_heads; ++h) {
                for (std::uint32_t d = 0; d < width; ++d) {
                    map.push_back({l, h, d});
                }
            }
        }
    } else {
        map.reserve(static_cast<std::size_t>(config.n_layers) * width);
        for (std::uint32_t l = 0; l < config.n_layers; ++l) {
            for (std::uint32_t d = 0; d < width; ++d) {
                map.push_back({l, kSummedHead, d});
            }
        }
    }
    return map;
}

FeatureVector extract_features(const TraceBundle& trace, const ModelWeights& weights, FeatureKind kind,
                               std::uint32_t t, std::optional<std::uint32_t> j_e1) {
    require(!needs_entity(kind) || j_e1.has_value(), ErrorKind::Argument,
            "feature kind " + std::string(to_string(kind)) + " needs the entity position j_e1");
    require(t < trace.seq_len(), ErrorKind::Argument, "target position out of range");
    const ModelConfig& cfg = trace.config;
    FeatureVector fv;
    fv.index = feature_index_map(cfg, kind);
    fv.values.reserve(fv.index.size());
    auto append = [&](const std::vector<double>& v) { fv.values.insert(fv.values.end(), v.begin(), v.end()); };
    auto append_row = [&](std::span<const double> v) { fv.values.insert(fv.values.end(), v.begin(), v.end()); };

    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        switch (kind) {
            case FeatureKind::AttnHead:
                for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
                    append(head_contribution(trace, weights, l, h, t).vec);
                }
                break;
            case FeatureKind::AttnTokenHead:
                for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
                    append(head_token_contribution(trace, weights, l, h, t, *j_e1).vec);
                }
                break;
            case FeatureKind::AttnTokenTotal:
                append(entity_contributions(trace, weights, l, t, *j_e1).total.vec);
                break;
            case FeatureKind::MlpHead:
                for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
                    append(mlp_propagate(trace, weights, l, t, head_contribution(trace, weights, l, h, t)).vec);
                }
                break;
            case FeatureKind::MlpTokenHead:
                for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
                    append(mlp_propagate(trace, weights, l, t, head_token_contribution(trace, weights, l, h, t, *j_e1))
                               .vec);
                }
                break;
            case FeatureKind::MlpTokenTotal:
                append(mlp_propagate(trace, weights, l, t, entity_contributions(trace, weights, l, t, *j_e1).total).vec);
                break;
            case FeatureKind::FullAttention:
                append_row(trace.layers[l].attn_out.row(t));
                break;
            case FeatureKind::FullMLP:
                append_row(trace.layers[l].mlp_act.row(t));
                break;
        }
    }
    return fv;
}

void save_feature_dump(const FeatureDump& dump, const std::filesystem::path& path) {
    const std::size_t m = dump.index.size();
    require(dump.features.size() == dump.rows * m, ErrorKind::Shape, "feature dump: matrix size mismatch");
    require(dump.labels.size() == dump.rows, ErrorKind::Shape, "feature dump: one label per row expected");
    require(dump.rows > 0 && m > 0, ErrorKind::Argument, "feature dump: empty matrix");
    for (std::uint32_t y : dump.labels) {
        require(y < dump.class_names.size(), ErrorKind::Argument, "feature dump: label without a class name");
    }
    container::Writer out(path, "RTRF", kFeatureDumpVersion);
    out.section_f32("features", {dump.rows, m}, dump.features);
    std::vector<std::uint32_t> idx;
    idx.reserve(3 * m);
    for (const auto& f : dump.index) {
        idx.insert(idx.end(), {f.layer, f.head, f.dim});
    }
    out.section_u32("index_map", {m, 3}, idx);
    out.section_u32("labels", {dump.rows}, dump.labels);
    out.section_u32("kind", {1}, {static_cast<std::uint32_t>(dump.kind)});
    out.close();

    nlohmann::json side;
    side["kind"] = to_string(dump.kind);
    side["class_names"] = dump.class_names;
    std::ofstream js(path.string() + ".json");
    require(js.good(), ErrorKind::Data, "cannot write feature dump sidecar");
    js << side.dump(2) << '\n';
}

FeatureDump load_feature_dump(const std::filesystem::path& path) {
    container::Reader in(path, "RTRF", kFeatureDumpVersion);
    FeatureDump d;
    bool have_features = false, have_index = false, have_labels = false, have_kind = false;
    std::size_t cols = 0;
    while (auto h = in.next_section()) {
        if (h->name == "features") {
            require(h->extents.size() == 2, ErrorKind::Data, "features must be rank 2");
            d.rows = h->extents[0];
            cols = h->extents[1];
            d.features = in.payload_f32(*h);
            have_features = true;
        } else if (h->name == "index_map") {
            require(h->extents.size() == 2 && h->extents[1] == 3, ErrorKind::Data, "index_map must be [M x 3]");
            const auto raw = in.payload_u32(*h);
            for (std::size_t i = 0; i < h->extents[0]; ++i) {
                d.index.push_back({raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]});
            }
            have_index = true;
        } else if (h->name == "labels") {
            d.labels = in.payload_u32(*h);
            have_labels = true;
        } else if (h->name == "kind") {
            const auto k = in.payload_u32(*h);
            require(k.size() == 1 && k[0] < kFeatureKindCount, ErrorKind::Data, "bad kind section");
            d.kind = static_cast<FeatureKind>(k[0]);
            have_kind = true;
        } else {
            fail(ErrorKind::Data, "unknown feature dump section '" + h->name + "'");
        }
    }
    require(have_features && have_index && have_labels && have_kind, ErrorKind::Data,
            "feature dump is missing a section");
    require(d.index.size() == cols && d.labels.size() == d.rows, ErrorKind::Data,
            "feature dump sections disagree in size");

    std::ifstream js(path.string() + ".json");
    if (js.good()) {
        try {
            const auto side = nlohmann::json::parse(js);
            d.class_names = side.at("class_names").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Data, std::string("feature dump sidecar: ") + e.what());
        }
    }
    return d;
}

}  // namespace reltrace
