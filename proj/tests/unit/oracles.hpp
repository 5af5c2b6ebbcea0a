#pragma once

// Brute-force references shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "reltrace/probing.hpp"

namespace oracle {

// AP by explicit rank enumeration: rank r of every example is 1 + the number of
// examples that precede it (higher score, or equal score and lower index).
inline double average_precision(const std::vector<double>& s, const std::vector<bool>& pos) {
    const std::size_t n = s.size();
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 1;
        for (std::size_t j = 0; j < n; ++j)
            if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++r;
        rank[i] = r;
    }
    // Precision terms are summed in rank order so the result is bit-comparable.
    std::vector<std::size_t> pos_ranks;
    for (std::size_t i = 0; i < n; ++i)
        if (pos[i]) pos_ranks.push_back(rank[i]);
    std::sort(pos_ranks.begin(), pos_ranks.end());
    double total = 0.0;
    const std::size_t npos = pos_ranks.size();
    for (std::size_t k = 0; k < npos; ++k) {
        std::size_t hits = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (pos[j] && rank[j] <= pos_ranks[k]) ++hits;
        total += static_cast<double>(hits) / static_cast<double>(pos_ranks[k]);
    }
    return total / static_cast<double>(npos);
}

// Rank table: each value's rank is 1 + (#smaller) + (#equal - 1) / 2.
inline std::vector<double> rank_table(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0, equal = 0;
        for (double w : v) {
            if (w < v[i]) ++less;
            if (w == v[i]) ++equal;
        }
        r[i] = 1.0 + less + (equal - 1.0) / 2.0;
    }
    return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(rank_table(x), rank_table(y));
}

using reltrace::FeatureMatrix;
using reltrace::Rng;
using reltrace::ScoredFeature;
using reltrace::SelectionResult;
using reltrace::Tensor;

inline FeatureMatrix random_matrix(Rng& rng, std::size_t n, std::size_t m, std::size_t classes, bool ties = false) {
    FeatureMatrix fm;
    fm.values = Tensor({n, m});
    for (double& v : fm.values.data()) v = ties ? static_cast<double>(rng.below(4)) : rng.normal();
    for (std::size_t f = 0; f < m; ++f) fm.index.push_back({0, 0, static_cast<std::uint32_t>(f)});
    for (std::size_t i = 0; i < n; ++i) fm.labels.push_back(static_cast<std::uint32_t>(i < classes ? i : rng.below(classes)));
    for (std::size_t c = 0; c < classes; ++c) fm.class_names.push_back("c" + std::to_string(c));
    return fm;
}

// Per-class AP of every column, sorted by AP then feature index, top m kept.
inline SelectionResult select_features(const FeatureMatrix& fm, std::size_t m, bool dedup) {
    SelectionResult out;
    for (std::size_t c = 0; c < fm.n_classes(); ++c) {
        std::vector<bool> pos;
        for (auto y : fm.labels) pos.push_back(y == c);
        std::vector<ScoredFeature> s;
        for (std::size_t f = 0; f < fm.cols(); ++f) {
            std::vector<double> col;
            for (std::size_t i = 0; i < fm.rows(); ++i) col.push_back(fm.values.at(i, f));
            s.push_back({f, average_precision(col, pos)});
        }
        std::sort(s.begin(), s.end(), [](const ScoredFeature& a, const ScoredFeature& b) {
            return a.ap != b.ap ? a.ap > b.ap : a.feature < b.feature;
        });
        s.resize(std::min(m, s.size()));
        for (const auto& e : s) out.merged.push_back(e.feature);
        out.per_class.push_back(s);
    }
    if (dedup) {
        std::sort(out.merged.begin(), out.merged.end());
        out.merged.erase(std::unique(out.merged.begin(), out.merged.end()), out.merged.end());
    }
    return out;
}

}  // namespace oracle
