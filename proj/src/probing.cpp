#include "reltrace/probing.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>
#include <sodium.h>

#include "reltrace/error.hpp"

namespace reltrace {

void FeatureMatrix::validate() const {
    require(values.rank() == 2 && values.extent(0) == labels.size() && values.extent(1) == index.size(),
            ErrorKind::Shape, "feature matrix shape disagrees with labels/index map");
    for (std::uint32_t y : labels) {
        require(y < class_names.size(), ErrorKind::Data, "label id exceeds the number of classes");
    }
}

FeatureMatrix FeatureMatrix::select_columns(std::span<const std::size_t> columns) const {
    require(!columns.empty(), ErrorKind::Argument, "cannot select zero columns");
    FeatureMatrix out;
    out.labels = labels;
    out.class_names = class_names;
    out.values = Tensor({rows(), columns.size()});
    for (std::size_t c = 0; c < columns.size(); ++c) {
        require(columns[c] < cols(), ErrorKind::Argument, "selected column out of range");
        out.index.push_back(index[columns[c]]);
    }
    for (std::size_t i = 0; i < rows(); ++i) {
        for (std::size_t c = 0; c < columns.size(); ++c) {
            out.values.at(i, c) = values.at(i, columns[c]);
        }
    }
    return out;
}

namespace {

// Example order by descending score, ties by ascending index.
std::vector<std::size_t> ranking(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

template <typename IsPositive>
double ap_from_ranking(const std::vector<std::size_t>& order, IsPositive is_positive) {
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (is_positive(order[rank])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    require(hits > 0, ErrorKind::Argument, "average precision needs at least one positive");
    return sum / static_cast<double>(hits);
}

}  // namespace

double average_precision(std::span<const double> scores, const std::vector<bool>& positives) {
    require(scores.size() == positives.size(), ErrorKind::Shape, "scores and labels differ in length");
    return ap_from_ranking(ranking(scores), [&](std::size_t i) { return positives[i]; });
}

SelectionResult select_features(const FeatureMatrix& support, std::size_t m, bool dedup) {
    support.validate();
    require(m >= 1, ErrorKind::Argument, "m must be positive");
    const std::size_t C = support.n_classes(), M = support.cols(), N = support.rows();
    std::vector<std::size_t> class_count(C, 0);
    for (auto y : support.labels) {
        ++class_count[y];
    }
    for (std::size_t c = 0; c < C; ++c) {
        require(class_count[c] > 0, ErrorKind::Argument,
                "class '" + support.class_names[c] + "' has no support examples");
    }

    std::vector<std::vector<ScoredFeature>> scored(C, std::vector<ScoredFeature>(M));
    std::vector<double> column(N);
    for (std::size_t f = 0; f < M; ++f) {
        for (std::size_t i = 0; i < N; ++i) {
            column[i] = support.values.at(i, f);
        }
        const auto order = ranking(column);
        for (std::size_t c = 0; c < C; ++c) {
            scored[c][f] = {f, ap_from_ranking(order, [&](std::size_t i) { return support.labels[i] == c; })};
        }
    }

    SelectionResult out;
    const std::size_t keep = std::min(m, M);
    for (auto& s : scored) {
        std::stable_sort(s.begin(), s.end(), [](const ScoredFeature& a, const ScoredFeature& b) { return a.ap > b.ap; });
        s.resize(keep);
        for (const auto& f : s) {
            out.merged.push_back(f.feature);
        }
        out.per_class.push_back(std::move(s));
    }
    if (dedup) {
        std::sort(out.merged.begin(), out.merged.end());
        out.merged.erase(std::unique(out.merged.begin(), out.merged.end()), out.merged.end());
    }
    return out;
}

LossAndGrad cross_entropy(const Tensor& weight, std::span<const double> bias, const FeatureMatrix& x) {
    const std::size_t C = bias.size(), M = x.cols(), N = x.rows();
    require(weight.rank() == 2 && weight.extent(0) == C && weight.extent(1) == M, ErrorKind::Shape,
            "probe weight shape mismatch");
    LossAndGrad out;
    out.grad_weight = Tensor({C, M});
    out.grad_bias.assign(C, 0.0);
    std::vector<double> logits(C);
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto xi = x.values.row(i);
        for (std::size_t c = 0; c < C; ++c) {
            logits[c] = bias[c] + dot(weight.row(c), xi);
        }
        const auto p = softmax(logits);
        const std::uint32_t y = x.labels[i];
        out.loss -= std::log(p[y]) * inv_n;
        for (std::size_t c = 0; c < C; ++c) {
            const double g = (p[c] - (c == y ? 1.0 : 0.0)) * inv_n;
            out.grad_bias[c] += g;
            auto gw = out.grad_weight.row(c);
            for (std::size_t f = 0; f < M; ++f) {
                gw[f] += g * xi[f];
            }
        }
    }
    return out;
}

ProbeModel train_probe(const FeatureMatrix& x, const ProbeHyper& hyper) {
    x.validate();
    const std::size_t C = x.n_classes(), M = x.cols(), N = x.rows();
    require(C >= 2, ErrorKind::Argument, "probe needs at least two classes");
    require(N >= C, ErrorKind::Argument, "probe needs at least one example per class");
    require(M >= 1, ErrorKind::Argument, "probe needs at least one feature");
    const bool varied = std::any_of(x.labels.begin(), x.labels.end(), [&](auto y) { return y != x.labels[0]; });
    require(varied, ErrorKind::Argument, "degenerate labels: every example has the same class");
    require(hyper.lr > 0.0 && hyper.eps > 0.0, ErrorKind::Argument, "bad Adam hyperparameters");

    ProbeModel probe;
    probe.weight = Tensor({C, M});
    probe.bias.assign(C, 0.0);
    probe.index = x.index;
    probe.class_names = x.class_names;
    probe.hyper = hyper;

    std::vector<double> m_w(C * M, 0.0), v_w(C * M, 0.0), m_b(C, 0.0), v_b(C, 0.0);
    double b1t = 1.0, b2t = 1.0;
    auto adam = [&](double& param, double g, double& m, double& v) {
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
        const double mhat = m / (1.0 - b1t);
        const double vhat = v / (1.0 - b2t);
        param -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    };
    for (std::uint32_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        const auto lg = cross_entropy(probe.weight, probe.bias, x);
        probe.loss_history.push_back(lg.loss);
        b1t *= hyper.beta1;
        b2t *= hyper.beta2;
        for (std::size_t i = 0; i < C * M; ++i) {
            adam(probe.weight[i], lg.grad_weight[i], m_w[i], v_w[i]);
        }
        for (std::size_t c = 0; c < C; ++c) {
            adam(probe.bias[c], lg.grad_bias[c], m_b[c], v_b[c]);
        }
    }
    probe.loss_history.push_back(cross_entropy(probe.weight, probe.bias, x).loss);
    require(probe.weight.all_finite(), ErrorKind::Numerical, "probe training diverged");
    return probe;
}

Prediction predict(const ProbeModel& probe, std::span<const double> x) {
    require(x.size() == probe.n_features(), ErrorKind::Shape,
            "input has " + std::to_string(x.size()) + " features, probe expects " +
                std::to_string(probe.n_features()));
    Prediction p;
    p.logits.resize(probe.n_classes());
    for (std::size_t c = 0; c < p.logits.size(); ++c) {
        p.logits[c] = probe.bias[c] + dot(probe.weight.row(c), x);
    }
    // max_element returns the first maximum, i.e. the lowest class id.
    p.cls = static_cast<std::uint32_t>(std::max_element(p.logits.begin(), p.logits.end()) - p.logits.begin());
    return p;
}

namespace {

std::string encode_f64(std::span<const double> values) {
    std::vector<unsigned char> raw(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (std::size_t k = 0; k < 8; ++k) {
            raw[8 * i + k] = static_cast<unsigned char>(bits >> (8 * k));
        }
    }
    const int variant = sodium_base64_VARIANT_ORIGINAL;
    std::string out(sodium_base64_ENCODED_LEN(raw.size(), variant), '\0');
    sodium_bin2base64(out.data(), out.size(), raw.data(), raw.size(), variant);
    out.resize(out.size() - 1);  // drop the terminating NUL
    return out;
}

std::vector<double> decode_f64(const std::string& text) {
    std::vector<unsigned char> raw(text.size());
    std::size_t len = 0;
    if (sodium_base642bin(raw.data(), raw.size(), text.data(), text.size(), nullptr, &len, nullptr,
                          sodium_base64_VARIANT_ORIGINAL) != 0) {
        fail(ErrorKind::Data, "invalid base64 payload");
    }
    require(len % 8 == 0, ErrorKind::Data, "base64 payload is not a whole number of f64 values");
    std::vector<double> out(len / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (std::size_t k = 0; k < 8; ++k) {
            bits |= static_cast<std::uint64_t>(raw[8 * i + k]) << (8 * k);
        }
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

}  // namespace

nlohmann::json probe_to_json(const ProbeModel& probe) {
    nlohmann::json j;
    j["format"] = "reltrace-probe";
    j["version"] = 1;
    j["kind"] = to_string(probe.kind);
    j["n_classes"] = probe.n_classes();
    j["n_features"] = probe.n_features();
    j["class_names"] = probe.class_names;
    j["weight_f64_le"] = encode_f64(probe.weight.data());
    j["bias_f64_le"] = encode_f64(probe.bias);
    auto idx = nlohmann::json::array();
    for (const auto& f : probe.index) {
        idx.push_back({f.layer, f.head, f.dim});
    }
    j["index_map"] = idx;
    j["columns"] = probe.columns;
    j["hyper"] = {{"epochs", probe.hyper.epochs}, {"lr", probe.hyper.lr},       {"beta1", probe.hyper.beta1},
                  {"beta2", probe.hyper.beta2},   {"eps", probe.hyper.eps},     {"seed", probe.hyper.seed}};
    return j;
}

ProbeModel probe_from_json(const nlohmann::json& j) {
    ProbeModel p;
    try {
        require(j.at("format") == "reltrace-probe", ErrorKind::Data, "not a probe document");
        p.kind = parse_feature_kind(j.at("kind").get<std::string>());
        const auto C = j.at("n_classes").get<std::size_t>();
        const auto M = j.at("n_features").get<std::size_t>();
        p.class_names = j.at("class_names").get<std::vector<std::string>>();
        auto w = decode_f64(j.at("weight_f64_le").get<std::string>());
        require(w.size() == C * M, ErrorKind::Data, "probe weight payload has the wrong length");
        p.weight = Tensor({C, M}, std::move(w));
        p.bias = decode_f64(j.at("bias_f64_le").get<std::string>());
        require(p.bias.size() == C, ErrorKind::Data, "probe bias payload has the wrong length");
        for (const auto& e : j.at("index_map")) {
            p.index.push_back({e.at(0).get<std::uint32_t>(), e.at(1).get<std::uint32_t>(), e.at(2).get<std::uint32_t>()});
        }
        require(p.index.size() == M, ErrorKind::Data, "probe index map has the wrong length");
        p.columns = j.at("columns").get<std::vector<std::size_t>>();
        const auto& h = j.at("hyper");
        p.hyper.epochs = h.at("epochs").get<std::uint32_t>();
        p.hyper.lr = h.at("lr").get<double>();
        p.hyper.beta1 = h.at("beta1").get<double>();
        p.hyper.beta2 = h.at("beta2").get<double>();
        p.hyper.eps = h.at("eps").get<double>();
        p.hyper.seed = h.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Data, std::string("probe document: ") + e.what());
    }
    return p;
}

FeatureMatrix episode_features(const ModelWeights& weights, const std::vector<PromptInstance>& prompts,
                               const Episode& episode, FeatureKind kind) {
    require(!prompts.empty(), ErrorKind::Argument, "no prompts to trace");
    FeatureMatrix fm;
    fm.index = feature_index_map(weights.config, kind);
    fm.values = Tensor({prompts.size(), fm.index.size()});
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& p = prompts[i];
        const auto trace = forward(weights, p.tokens);
        const auto fv = extract_features(trace, weights, kind, p.t, p.j_e1);
        std::copy(fv.values.begin(), fv.values.end(), fm.values.row(i).begin());
        fm.labels.push_back(episode.class_of(p.relation));
    }
    return fm;
}

EpisodeResult run_episode(const ModelWeights& weights, const Episode& episode, const EpisodeOptions& options) {
    require(episode.relations.size() >= 2, ErrorKind::Argument, "episode needs at least two relations");
    std::vector<std::string> names;
    for (std::uint32_t r : episode.relations) {
        names.push_back(r < options.relation_names.size() ? options.relation_names[r] : "R" + std::to_string(r));
    }
    FeatureMatrix support = episode_features(weights, episode.support, episode, options.kind);
    FeatureMatrix query = episode_features(weights, episode.query, episode, options.kind);
    support.class_names = names;
    query.class_names = names;

    if (options.permute_support_labels) {
        Rng rng(options.permute_seed);
        auto& y = support.labels;
        for (std::size_t i = y.size(); i > 1; --i) {
            std::swap(y[i - 1], y[rng.below(i)]);
        }
    }

    EpisodeResult res;
    res.selection = select_features(support, options.m, options.dedup);
    const auto train = support.select_columns(res.selection.merged);
    res.probe = train_probe(train, options.hyper);
    res.probe.kind = options.kind;
    res.probe.columns = res.selection.merged;
    res.query_features = query.select_columns(res.selection.merged);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < res.query_features.rows(); ++i) {
        auto pred = predict(res.probe, res.query_features.values.row(i));
        const std::uint32_t gold = episode.relations[res.query_features.labels[i]];
        const std::uint32_t guess = episode.relations[pred.cls];
        res.golds.push_back(gold);
        res.predictions.push_back(guess);
        correct += gold == guess ? 1 : 0;
        res.query_predictions.push_back(std::move(pred));
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(res.golds.size());
    return res;
}

}  // namespace reltrace
