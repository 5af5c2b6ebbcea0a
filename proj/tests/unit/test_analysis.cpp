#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "reltrace/analysis.hpp"
#include "reltrace/error.hpp"
#include "support.hpp"

using namespace reltrace;

TEST_SUITE_BEGIN("analysis");

namespace {

PromptInstance prompt(std::uint32_t relation, std::vector<TokenId> tokens) {
    PromptInstance p;
    p.relation = relation;
    p.tokens = std::move(tokens);
    p.t = static_cast<std::uint32_t>(p.tokens.size() - 1);
    return p;
}

// Relations 7 and 9; token 1 is shared, 2 belongs to 7, 3 (twice) to 9.
Episode toy_episode() {
    Episode e;
    e.relations = {7, 9};
    e.support = {prompt(7, {1, 2}), prompt(7, {1, 2}), prompt(9, {1, 3, 3})};
    return e;
}

}  // namespace

TEST_CASE("classification report: all correct") {
    const std::vector<std::uint32_t> y{0, 1, 2, 2};
    const auto r = classification_report(y, y, {"a", "b", "c"});
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_f1 == 1.0);
    for (const auto& c : r.per_class) {
        CHECK(c.precision == 1.0);
        CHECK(c.recall == 1.0);
    }
}

TEST_CASE("classification report: hand confusion matrix") {
    // gold a: predicted a,a,b   gold b: predicted b,c   gold c: predicted c,a,a
    const std::vector<std::uint32_t> gold{0, 0, 0, 1, 1, 2, 2, 2};
    const std::vector<std::uint32_t> pred{0, 0, 1, 1, 2, 2, 0, 0};
    const auto r = classification_report(pred, gold, {"a", "b", "c"});
    REQUIRE(r.per_class.size() == 3);
    // a: TP 2, FP 2, FN 1; b: TP 1, FP 1, FN 1; c: TP 1, FP 1, FN 2.
    CHECK(r.per_class[0].precision == 0.5);
    CHECK(r.per_class[0].recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[0].f1 == doctest::Approx(4.0 / 7.0));
    CHECK(r.per_class[1].precision == 0.5);
    CHECK(r.per_class[1].recall == 0.5);
    CHECK(r.per_class[2].precision == 0.5);
    CHECK(r.per_class[2].recall == doctest::Approx(1.0 / 3.0));
    CHECK(r.per_class[2].support == 3);
    CHECK(r.accuracy == 0.5);
    CHECK(r.macro_f1 == (r.per_class[0].f1 + r.per_class[1].f1 + r.per_class[2].f1) / 3.0);
}

TEST_CASE("classification report drops unseen classes and zero denominators give 0") {
    const std::vector<std::uint32_t> gold{0, 0, 3};
    const std::vector<std::uint32_t> pred{0, 3, 0};
    const auto r = classification_report(pred, gold, {"a", "b", "c", "d"});
    REQUIRE(r.per_class.size() == 2);
    CHECK(r.per_class[1].name == "d");
    CHECK(r.per_class[1].f1 == 0.0);
    CHECK(r.per_class[1].precision == 0.0);

    const std::vector<std::uint32_t> g2{0, 0}, p2{1, 1};
    const auto only_predicted = classification_report(p2, g2, {});
    CHECK(only_predicted.per_class[1].name == "R1");
    CHECK(only_predicted.per_class[1].recall == 0.0);
    CHECK_THROWS_AS(classification_report(p2, std::vector<std::uint32_t>{0}, {}), Error);

    const auto j = to_json(r);
    CHECK(j["per_class"].size() == 2);
    CHECK(j["macro"]["f1"] == r.macro_f1);
}

TEST_CASE("spearman examples") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    CHECK(*spearman(x, x) == doctest::Approx(1.0));
    const std::vector<double> rev{9, 7, 5, 3, 1};
    CHECK(*spearman(x, rev) == doctest::Approx(-1.0));

    const std::vector<double> a{1, 2, 2, 3}, b{1, 3, 2, 4};
    CHECK(average_ranks(a) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    CHECK(std::abs(*spearman(a, b) - oracle::spearman(a, b)) <= 1e-12);

    CHECK_FALSE(spearman(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}).has_value());
    CHECK_FALSE(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 0}).has_value());
    CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST_CASE("spearman agrees with the rank-table oracle and ignores monotone maps") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(30);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng.below(6));
            y[i] = trial % 2 ? rng.normal() : static_cast<double>(rng.below(4));
        }
        const auto s = spearman(x, y);
        const double o = oracle::spearman(x, y);
        if (!s) {
            CHECK(std::isnan(o));
            continue;
        }
        CHECK(std::abs(*s - o) <= 1e-12);
        auto ex = x;
        for (auto& v : ex) v = std::exp(v);
        CHECK(std::abs(*spearman(ex, y) - *s) <= 1e-12);
    }
}

TEST_CASE("tf-idf on a two-relation toy episode") {
    const auto prof = tfidf_profiles(toy_episode());
    const double ln2 = std::log(2.0);
    CHECK(prof.score(7, 1) == 0.0);
    CHECK(prof.score(9, 1) == 0.0);
    CHECK(prof.score(7, 2) == doctest::Approx(2.0 * ln2));
    CHECK(prof.score(9, 2) == doctest::Approx(-2.0 * ln2));
    CHECK(prof.score(9, 3) == doctest::Approx(2.0 * ln2));
    CHECK(prof.score(7, 3) == doctest::Approx(-2.0 * ln2));
    for (TokenId t : {1u, 2u, 3u}) CHECK(prof.score(7, t) == -prof.score(9, t));
    CHECK(prof.score(7, 42) == 0.0);
    CHECK_THROWS_AS(prof.score(8, 1), Error);
}

TEST_CASE("tf-idf with three relations and support order") {
    Episode e;
    e.relations = {0, 1, 2};
    e.support = {prompt(0, {5, 6}), prompt(0, {5}), prompt(1, {6, 7}), prompt(2, {8})};
    const auto prof = tfidf_profiles(e);
    const double l3 = std::log(3.0), l32 = std::log(1.5);
    // Token 5 only in relation 0 (tf 2); token 6 in relations 0 and 1.
    CHECK(prof.score(0, 5) == doctest::Approx(2 * l3));
    CHECK(prof.score(1, 5) == doctest::Approx(-l3));
    CHECK(prof.score(2, 6) == doctest::Approx(-l32));
    CHECK(prof.score(0, 6) == doctest::Approx(l32 - 0.5 * l32));

    auto shuffled = e;
    std::swap(shuffled.support[0], shuffled.support[1]);
    const auto again = tfidf_profiles(shuffled);
    CHECK(again.scores == prof.scores);

    Episode lonely;
    lonely.relations = {0};
    lonely.support = {prompt(0, {1})};
    CHECK_THROWS_AS(tfidf_profiles(lonely), Error);
    Episode missing = e;
    missing.support.pop_back();
    CHECK_THROWS_AS(tfidf_profiles(missing), Error);
}

TEST_CASE("lexical alignment") {
    const auto prof = tfidf_profiles(toy_episode());
    const std::vector<TokenId> tokens{1, 2, 3, 2};
    // Proportional to the lexical scores under relation 7 with distinct values.
    const std::vector<TokenId> distinct{3, 1, 2};
    const auto a = lexical_alignment(std::vector<double>{-1.0, 0.0, 1.0}, distinct, prof, 7, true);
    CHECK(*a.rho == doctest::Approx(1.0));
    CHECK(a.mass == 1.0);
    CHECK(a.strong_align);

    const auto b = lexical_alignment(std::vector<double>{0.5, 1.0, 3.0, 0.5}, tokens, prof, 7, false);
    // Positive mass 5.0, of which 1.5 falls on token 2 (positive under relation 7).
    CHECK(b.mass == doctest::Approx(0.3));
    CHECK_FALSE(b.prediction_correct);

    const auto none = lexical_alignment(std::vector<double>{-1.0, -2.0, 0.0, -0.5}, tokens, prof, 7, true);
    CHECK(none.mass == 0.0);
    const auto flat = lexical_alignment(std::vector<double>{1.0, 1.0, 1.0, 1.0}, tokens, prof, 7, true);
    CHECK_FALSE(flat.rho.has_value());
    CHECK_FALSE(flat.strong_align);
    CHECK_THROWS_AS(lexical_alignment(std::vector<double>{1.0}, tokens, prof, 7, true), Error);
}

TEST_CASE("strong alignment thresholds") {
    CHECK(make_alignment(0.4, 0.6, false).strong_align);
    CHECK(make_alignment(0.30, 0.50, false).strong_align);
    CHECK_FALSE(make_alignment(0.29, 0.9, false).strong_align);
    CHECK_FALSE(make_alignment(0.9, 0.49, false).strong_align);
    CHECK_FALSE(make_alignment(std::nullopt, 0.9, false).strong_align);
}

TEST_CASE("aggregate alignment") {
    const std::vector<AlignmentStats> s{make_alignment(0.4, 0.6, false), make_alignment(0.1, 0.2, false),
                                        make_alignment(std::nullopt, 0.5, true), make_alignment(0.7, 1.0, true)};
    const auto a = aggregate_alignment(s);
    CHECK(*a.mean_rho == doctest::Approx(0.4));
    CHECK(a.mean_mass == doctest::Approx(0.575));
    CHECK(*a.strong_align_incorrect == 0.5);
    CHECK(a.incorrect == 2);
    CHECK(a.queries == 4);

    const std::vector<AlignmentStats> all_right{make_alignment(0.4, 0.6, true)};
    CHECK_FALSE(aggregate_alignment(all_right).strong_align_incorrect.has_value());

    // Small real-world magnitudes average without distortion.
    const std::vector<AlignmentStats> small{make_alignment(0.095, 0.475, false), make_alignment(0.115, 0.491, true)};
    const auto p = aggregate_alignment(small);
    CHECK(*p.mean_rho == doctest::Approx(0.105));
    CHECK(p.mean_mass == doctest::Approx(0.483));
    CHECK_THROWS_AS(aggregate_alignment(std::vector<AlignmentStats>{}), Error);
}

TEST_CASE("stats ingestion") {
    std::istringstream tsv(
        "# comment\nproperty_id\toutput_range\tmean_connection_count\ttfidf_similarity_e-3\n"
        "P59\t88\t1.000\t31.8\nP26\t826,642\t2.030\t0.0\n\n");
    const auto s = parse_stats_tsv(tsv);
    REQUIRE(s.size() == 2);
    CHECK(s[0].property_id == "P59");
    CHECK(s[0].output_range == 88);
    CHECK(s[0].mean_connection_count == 1.0);
    CHECK(s[0].tfidf_similarity == doctest::Approx(0.0318));
    CHECK(s[1].output_range == 826642);
    CHECK(s[1].mean_connection_count == 2.03);
    CHECK(s[1].tfidf_similarity == 0.0);

    std::istringstream empty("");
    CHECK(parse_stats_tsv(empty).empty());
    std::istringstream neg("P1\t-3\t1.5\t2\n");
    CHECK_THROWS_AS(parse_stats_tsv(neg), Error);
    std::istringstream bad("P1\tmany\t1.5\t2\n");
    CHECK_THROWS_AS(parse_stats_tsv(bad), Error);
    std::istringstream short_row("P1\t3\t1.5\n");
    CHECK_THROWS_AS(parse_stats_tsv(short_row), Error);

    const auto j = nlohmann::json::parse(
        R"([{"property_id": "P59", "output_range": 88, "mean_connection_count": 1.0, "tfidf_similarity_e-3": 31.8}])");
    const auto sj = parse_stats_json(j);
    CHECK(sj[0].output_range == 88);
    CHECK(sj[0].tfidf_similarity == doctest::Approx(0.0318));
    CHECK_THROWS_AS(parse_stats_json(nlohmann::json::parse(R"([{"property_id": "P1"}])")), Error);
}

TEST_CASE("ingest the shipped fixture and dispatch on extension") {
    const std::filesystem::path fixture = std::filesystem::path(RELTRACE_SOURCE_DIR) / "data" / "fewrel_relation_stats.tsv";
    const auto s = ingest_stats(fixture);
    CHECK(s.size() == 16);
    testing::TempDir dir("stats_json");
    std::ofstream(dir.path / "s.json")
        << R"([{"property_id": "P26", "output_range": 826642, "mean_connection_count": 2.03, "tfidf_similarity_e-3": 0}])";
    CHECK(ingest_stats(dir.path / "s.json")[0].output_range == 826642);
    CHECK_THROWS_AS(ingest_stats(dir.path / "absent.tsv"), Error);
}

TEST_CASE("correlate") {
    std::vector<RelationStats> stats;
    for (int i = 1; i <= 5; ++i)
        stats.push_back({"P" + std::to_string(i), static_cast<std::uint64_t>(i * 10), 1.0 + i, 0.001 * (6 - i)});
    std::map<std::string, double> metric;
    for (int i = 1; i <= 5; ++i) metric["P" + std::to_string(i)] = i * 10.0;
    metric["P99"] = 1.0;
    std::map<std::string, double> conc{{"P1", 5}, {"P2", 4}, {"P3", 3}, {"P4", 2}, {"P5", 1}};
    const auto r = correlate(metric, stats, conc);
    CHECK(*r.at("output_range") == doctest::Approx(1.0));
    CHECK(*r.at("mean_connection_count") == doctest::Approx(1.0));
    CHECK(*r.at("tfidf_similarity") == doctest::Approx(-1.0));
    CHECK(*r.at("heads_for_95") == doctest::Approx(-1.0));
    CHECK(correlate(metric, stats).count("heads_for_95") == 0);

    std::map<std::string, double> tiny{{"P1", 1.0}, {"P2", 2.0}};
    CHECK_THROWS_AS(correlate(tiny, stats), Error);
}

TEST_SUITE_END();
