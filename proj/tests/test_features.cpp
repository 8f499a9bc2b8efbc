#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "qfactor/features.hpp"
#include "qfactor/parsetree.hpp"
#include "qfactor/rng.hpp"

using namespace qfactor;

namespace {

Question make_q(std::string id, std::int64_t at, std::string text,
                bool answered = false) {
    Question q;
    q.id = std::move(id);
    q.author = "user";
    q.posted_at = at;
    q.text = std::move(text);
    q.answered = answered;
    q.top_level = true;
    return q;
}

Thread make_thread(std::vector<Question> qs, std::string description = "") {
    Thread t;
    t.id = "t";
    t.description = std::move(description);
    t.questions = std::move(qs);
    t.started_at = t.questions.empty() ? 0 : t.questions.front().posted_at;
    t.ended_at = t.questions.empty() ? 0 : t.questions.back().posted_at;
    for (auto& q : t.questions) q.thread_id = t.id;
    return t;
}

PolitenessLexicons shipped_lexicons() {
    return PolitenessLexicons::load(testutil::data_path("greetings.txt"),
                                    testutil::data_path("apologies.txt"),
                                    testutil::data_path("hedges.txt"));
}

const SimFn kEqSim = [](const TokenSet& a, const TokenSet& b) {
    return extended_jaccard(a, b, [](const std::string& x, const std::string& y) {
        return x == y;
    });
};

}  // namespace

TEST_CASE("length counts raw tokens including stop-words") {
    CHECK(length_feature(make_q("q", 0, "Why?")) == 1.0);
    CHECK(length_feature(make_q("q", 0, "How far is your office from your home?")) ==
          8.0);
}

TEST_CASE("temporal features from a hand-enumerated thread") {
    std::vector<Question> qs = {
        make_q("a", 10, "A?", true), make_q("b", 20, "B?", true),
        make_q("c", 25, "C?", false), make_q("d", 30, "D?", true)};
    const Thread t = make_thread(qs);

    const auto [frac_before, frac_time] =
        temporal_features(t.questions[2], t);
    CHECK(frac_before == doctest::Approx(2.0 / 3.0));
    // started_at 10, last answered at 30: (25 - 10) / (30 - 10).
    CHECK(frac_time == doctest::Approx(0.75));

    SUBCASE("first question at thread start is (0,0)") {
        const auto [fb, ft] = temporal_features(t.questions[0], t);
        CHECK(fb == 0.0);
        CHECK(ft == 0.0);
    }
    SUBCASE("question exactly at the last answer time has elapsed 1") {
        const auto [fb, ft] = temporal_features(t.questions[3], t);
        CHECK(ft == 1.0);
        CHECK(fb == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("thread end anchor is configurable") {
        Thread late = t;
        late.ended_at = 50;
        const auto [fb, ft] = temporal_features(late.questions[3], late, true);
        CHECK(ft == doctest::Approx((30.0 - 10.0) / (50.0 - 10.0)));
        (void)fb;
    }
}

TEST_CASE("temporal features stay clamped on degenerate threads") {
    std::vector<Question> qs = {make_q("a", 5, "A?", true)};
    Thread t = make_thread(qs);
    t.started_at = 5;
    const auto [fb, ft] = temporal_features(t.questions[0], t);
    CHECK(fb == 0.0);
    CHECK(ft == 0.0);  // zero span
}

TEST_CASE("politeness markers from the shipped lexicons") {
    const PolitenessLexicons lex = shipped_lexicons();
    const Question q =
        make_q("q", 0, "Thanks! Sorry to bother you, but could you perhaps explain?");
    const double score = politeness_score(q, lex);
    CHECK(score > 0.0);

    CHECK(politeness_score(make_q("q", 0, "What engine does it use?"), lex) == 0.0);

    // Same token count, one vs two markers.
    const double one = politeness_score(make_q("q", 0, "sorry alpha beta gamma"), lex);
    const double two = politeness_score(make_q("q", 0, "sorry sorry beta gamma"), lex);
    CHECK(two == doctest::Approx(2.0 * one));
}

TEST_CASE("removing a marker never raises the politeness score") {
    const PolitenessLexicons lex = shipped_lexicons();
    const double with_marker =
        politeness_score(make_q("q", 0, "could you explain the rules"), lex);
    const double without =
        politeness_score(make_q("q", 0, "you explain the rules"), lex);
    CHECK(without <= with_marker);
}

TEST_CASE("multi-word phrases count as single markers") {
    const PolitenessLexicons lex = shipped_lexicons();
    const double a = politeness_score(make_q("q", 0, "thank you for this"), lex);
    CHECK(a > 0.0);
}

TEST_CASE("syntactic aggregation over sentences") {
    SUBCASE("empty list gives 16 zeros") {
        const auto out = syntactic_features({});
        for (double v : out) CHECK(v == 0.0);
    }
    SUBCASE("singleton: avg = max = min") {
        SentenceSyntax s;
        s.depth = 7;
        s.vp_count = 3;
        s.max_vp_depth = 6;
        s.vp_ratio = 6.0 / 7.0;
        const auto out = syntactic_features({s});
        CHECK(out[0] == 7.0);   // depth avg
        CHECK(out[1] == 7.0);   // depth max
        CHECK(out[2] == 7.0);   // depth min
        CHECK(out[3] == 3.0);   // vp avg
        CHECK(out[4] == 3.0);
        CHECK(out[5] == 3.0);
        CHECK(out[12] == 1.0);  // sentence count
        CHECK(out[13] == 3.0);  // total vp count
        CHECK(out[14] == 7.0);  // global max depth
        CHECK(out[15] == doctest::Approx(6.0 / 7.0));
    }
    SUBCASE("two sentences with depths 2 and 11") {
        SentenceSyntax s1, s2;
        s1.depth = 2;
        s2.depth = 11;
        s2.vp_count = 4;
        s2.max_vp_depth = 9;
        s2.vp_ratio = 9.0 / 11.0;
        const auto out = syntactic_features({s1, s2});
        CHECK(out[0] == doctest::Approx(6.5));
        CHECK(out[1] == 11.0);
        CHECK(out[2] == 2.0);
        CHECK(out[12] == 2.0);
        CHECK(out[13] == 4.0);
        CHECK(out[14] == 11.0);
        CHECK(out[15] == doctest::Approx(9.0 / 11.0));
    }
}

TEST_CASE("redundancy against earlier questions only") {
    const StopwordSet stops = {"is", "your", "the", "to", "s", "what"};
    std::vector<Question> qs = {
        make_q("a", 10, "What's your favorite Middle Eastern Dish?", true),
        make_q("b", 20, "How tall are you?", false),
        make_q("c", 30, "What's your favourite dish to prepare?", false),
        make_q("d", 30, "Unrelated topic entirely?", false)};
    const Thread t = make_thread(qs);

    CHECK(redundancy_score(t.questions[0], t, stops, kEqSim) == 0.0);

    // Shared content words: favorite/favourite differ, dish matches.
    const double chef = redundancy_score(t.questions[2], t, stops, kEqSim);
    CHECK(chef > 0.0);

    // Exact duplicate of an earlier question scores 1.
    std::vector<Question> dup = {
        make_q("a", 1, "How deep is the lake?", true),
        make_q("b", 2, "How deep is the lake?", false)};
    const Thread t2 = make_thread(dup);
    CHECK(redundancy_score(t2.questions[1], t2, stops, kEqSim) == 1.0);

    // Same timestamp is not "previously asked".
    CHECK(redundancy_score(t.questions[3], t, stops, kEqSim) == 0.0);
}

TEST_CASE("redundancy is monotone under adding earlier questions") {
    const StopwordSet stops;
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Question> qs;
        const char* pool[] = {"alpha", "beta", "gamma", "delta", "epsilon"};
        for (int i = 0; i < 4; ++i) {
            std::string text;
            for (int w = 0; w < 3; ++w) {
                text += pool[rng.uniform_u64(5)];
                text += ' ';
            }
            text += '?';
            qs.push_back(make_q("q" + std::to_string(i), 10 * (i + 1), text));
        }
        const Question target = make_q("target", 100, "alpha beta gamma?");

        std::vector<Question> prefix;
        double prev = 0.0;
        for (const auto& q : qs) {
            prefix.push_back(q);
            std::vector<Question> with_target = prefix;
            with_target.push_back(target);
            const Thread t = make_thread(with_target);
            const double score =
                redundancy_score(t.questions.back(), t, stops, kEqSim);
            CHECK(score >= prev);
            prev = score;
        }
    }
}

TEST_CASE("relevance compares against the thread description") {
    const StopwordSet stops = {"the"};
    const Question q = make_q("q", 10, "coral reef bleaching?");
    SUBCASE("empty description scores zero") {
        const Thread t = make_thread({q}, "");
        CHECK(relevance_score(t.questions[0], t, stops, kEqSim) == 0.0);
    }
    SUBCASE("identical token sets score one") {
        const Thread t = make_thread({q}, "coral reef bleaching");
        CHECK(relevance_score(t.questions[0], t, stops, kEqSim) == 1.0);
    }
    SUBCASE("disjoint vocabularies score zero") {
        const Thread t = make_thread({q}, "city council budget");
        CHECK(relevance_score(t.questions[0], t, stops, kEqSim) == 0.0);
    }
}

TEST_CASE("unigram counts cover only in-vocabulary tokens") {
    std::unordered_map<std::string, std::size_t> vocab = {{"why", 0}, {"lake", 1}};
    const auto m1 = unigram_features(make_q("q", 0, "why why why?"), vocab);
    REQUIRE(m1.size() == 1);
    CHECK(m1.at(0) == 3.0);
    const auto m2 = unigram_features(make_q("q", 0, "something else?"), vocab);
    CHECK(m2.empty());
}

TEST_CASE("vocabulary building is sorted, unique and split-safe") {
    const Question a = make_q("a", 1, "zebra apple apple?");
    const Question b = make_q("b", 2, "mango zebra?");
    const auto vocab = build_vocabulary({&a, &b});
    CHECK(vocab == std::vector<std::string>{"apple", "mango", "zebra"});

    // Leakage guard: words only in a held-out question never enter the map.
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < vocab.size(); ++i) index[vocab[i]] = i;
    const Question test_only = make_q("t", 3, "durian?");
    CHECK(unigram_features(test_only, index).empty());
}

TEST_CASE("schema arity follows the enabled groups") {
    const std::set<FeatureGroup> all_dense = {
        FeatureGroup::Length,     FeatureGroup::Temporal,
        FeatureGroup::Politeness, FeatureGroup::Syntactic,
        FeatureGroup::Redundancy, FeatureGroup::Relevance};
    CHECK(FeatureSchema::create(all_dense, {}).dense_arity() == 22);
    CHECK(FeatureSchema::create({FeatureGroup::Length}, {}).dense_arity() == 1);
    CHECK(FeatureSchema::create({FeatureGroup::Temporal, FeatureGroup::Redundancy},
                                {})
              .dense_arity() == 3);

    const FeatureSchema schema = FeatureSchema::create(all_dense, {});
    for (const auto& [name, group] : schema.dense) {
        CHECK(name.find(std::string(group_name(group)) + ".") == 0);
    }
}

TEST_CASE("assembled vectors are finite, bounded and deterministic") {
    const StopwordSet stops = load_stopwords(testutil::data_path("stopwords.txt"));
    const PolitenessLexicons lex = shipped_lexicons();
    std::vector<Question> qs = {
        make_q("a", 10, "What camera do you use for filming?", true),
        make_q("b", 20, "Thanks! Could you share your camera settings?", false),
        make_q("c", 30, "What lens goes with that camera?", true)};
    const Thread t = make_thread(qs, "I film documentaries about cameras.");

    FeatureConfig config;
    config.groups = {FeatureGroup::Length,     FeatureGroup::Temporal,
                     FeatureGroup::Politeness, FeatureGroup::Syntactic,
                     FeatureGroup::Redundancy, FeatureGroup::Relevance};
    const FeatureExtractor extractor(config, &stops, &lex, nullptr, nullptr,
                                     nullptr);
    for (const Question& q : t.questions) {
        const FeatureVector fv = extractor.assemble(q, t);
        REQUIRE(fv.dense.size() == 22);
        for (double v : fv.dense) {
            CHECK(std::isfinite(v));
        }
        const FeatureVector again = extractor.assemble(q, t);
        CHECK(fv.dense == again.dense);
        CHECK(fv.label == q.answered);
    }

    // Temporal and similarity features live in [0,1].
    const FeatureVector fv = extractor.assemble(t.questions[1], t);
    const auto& schema = extractor.schema();
    for (std::size_t i = 0; i < schema.dense.size(); ++i) {
        const FeatureGroup g = schema.dense[i].second;
        if (g == FeatureGroup::Temporal || g == FeatureGroup::Redundancy ||
            g == FeatureGroup::Relevance) {
            CHECK(fv.dense[i] >= 0.0);
            CHECK(fv.dense[i] <= 1.0);
        }
    }
}

TEST_CASE("politeness without lexicons is an error") {
    const StopwordSet stops;
    FeatureConfig config;
    config.groups = {FeatureGroup::Politeness};
    const FeatureExtractor extractor(config, &stops, nullptr, nullptr, nullptr,
                                     nullptr);
    const Thread t = make_thread({make_q("a", 1, "Hello?")});
    CHECK_THROWS_AS(extractor.assemble(t.questions[0], t), std::runtime_error);
}

TEST_CASE("feature csv and unigram sidecar round trip") {
    const StopwordSet stops;
    FeatureConfig config;
    config.groups = {FeatureGroup::Length, FeatureGroup::Temporal,
                     FeatureGroup::Unigram};
    const std::vector<std::string> vocab = {"camera", "lens"};
    const FeatureExtractor extractor(config, &stops, nullptr, nullptr, nullptr,
                                     nullptr, vocab);
    std::vector<Question> qs = {make_q("a", 10, "camera camera lens?", true),
                                make_q("b", 20, "why though?", false)};
    const Thread t = make_thread(qs);
    std::vector<FeatureVector> rows;
    for (const Question& q : t.questions) rows.push_back(extractor.assemble(q, t));

    const std::string dir = testutil::temp_dir("features");
    const std::string csv = dir + "/f.csv";
    const std::string sidecar = dir + "/u.csv";
    write_feature_csv(csv, extractor.schema(), rows);
    write_unigram_sidecar(sidecar, rows);

    const FeatureTable table = read_feature_csv(csv);
    REQUIRE(table.rows.size() == rows.size());
    REQUIRE(table.schema.dense.size() == extractor.schema().dense.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(table.rows[i].question_id == rows[i].question_id);
        CHECK(table.rows[i].label == rows[i].label);
        REQUIRE(table.rows[i].dense.size() == rows[i].dense.size());
        for (std::size_t j = 0; j < rows[i].dense.size(); ++j) {
            CHECK(table.rows[i].dense[j] == rows[i].dense[j]);
        }
    }
    for (std::size_t i = 0; i < table.schema.dense.size(); ++i) {
        CHECK(table.schema.dense[i].first == extractor.schema().dense[i].first);
        CHECK(table.schema.dense[i].second == extractor.schema().dense[i].second);
    }

    const auto unigrams = read_unigram_sidecar(sidecar);
    REQUIRE(unigrams.count("a") == 1);
    CHECK(unigrams.at("a").at(0) == 2.0);
    CHECK(unigrams.at("a").at(1) == 1.0);
    CHECK(unigrams.count("b") == 0);
}

TEST_CASE("syntactic features flow from the parse sidecar") {
    const StopwordSet stops;
    auto parses =
        load_parse_sidecar(testutil::fixture_path("syntax_calibration.jsonl"));
    // Rename one entry to match a question id.
    parses["q1"] = parses.at("row3");
    FeatureConfig config;
    config.groups = {FeatureGroup::Syntactic};
    const FeatureExtractor extractor(config, &stops, nullptr, nullptr, nullptr,
                                     &parses);
    const Thread t = make_thread({make_q("q1", 1, "any?"), make_q("q2", 2, "b?")});
    const FeatureVector with_parse = extractor.assemble(t.questions[0], t);
    CHECK(with_parse.dense[0] == 7.0);  // depth avg of the row3 tree

    const FeatureVector missing = extractor.assemble(t.questions[1], t);
    for (double v : missing.dense) CHECK(v == 0.0);
}
