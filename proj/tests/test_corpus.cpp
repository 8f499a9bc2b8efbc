#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "qfactor/corpus.hpp"
#include "qfactor/rng.hpp"

using namespace qfactor;

namespace {

Question make_q(std::string id, std::int64_t at, bool answered,
                bool top = true, std::string text = "Why?") {
    Question q;
    q.id = std::move(id);
    q.author = "user";
    q.posted_at = at;
    q.text = std::move(text);
    q.answered = answered;
    q.top_level = top;
    return q;
}

Thread make_thread(std::string id, std::vector<Question> qs,
                   Domain d = Domain::Other) {
    Thread t;
    t.id = std::move(id);
    t.domain = d;
    t.started_at = 0;
    t.ended_at = 1 << 20;
    t.questions = std::move(qs);
    std::sort(t.questions.begin(), t.questions.end(),
              [](const Question& a, const Question& b) {
                  return a.posted_at < b.posted_at;
              });
    return t;
}

Corpus random_corpus(Rng& rng, std::size_t n_threads) {
    Corpus c;
    std::size_t next_id = 0;
    for (std::size_t i = 0; i < n_threads; ++i) {
        std::vector<Question> qs;
        const std::size_t n = 1 + rng.uniform_u64(12);
        for (std::size_t j = 0; j < n; ++j) {
            Question q = make_q("q" + std::to_string(next_id++),
                                static_cast<std::int64_t>(rng.uniform_u64(1000)),
                                rng.uniform() < 0.4, rng.uniform() < 0.8,
                                rng.uniform() < 0.7 ? "Why so?" : "No question");
            qs.push_back(std::move(q));
        }
        c.threads.push_back(make_thread("t" + std::to_string(i), std::move(qs)));
    }
    return c;
}

}  // namespace

TEST_CASE("domain names round trip and unknown names are rejected") {
    for (Domain d : {Domain::Actor, Domain::Author, Domain::Politician,
                     Domain::Director, Domain::Other}) {
        auto back = domain_from_name(domain_name(d));
        REQUIRE(back.has_value());
        CHECK(*back == d);
    }
    CHECK_FALSE(domain_from_name("science").has_value());
    CHECK_FALSE(domain_from_name("").has_value());
}

TEST_CASE("empty stream parses to an empty corpus") {
    std::istringstream in("");
    const Corpus c = parse_corpus(in);
    CHECK(c.threads.empty());
    CHECK(c.question_count() == 0);
}

TEST_CASE("questions are re-sorted by posted_at") {
    std::istringstream in(
        R"({"id":"t1","domain":"actor","description":"","started_at":0,"ended_at":100,)"
        R"("questions":[{"id":"q2","author":"b","posted_at":50,"text":"B?","answered":false,"top_level":true},)"
        R"({"id":"q1","author":"a","posted_at":10,"text":"A?","answered":true,"top_level":true}]})"
        "\n");
    const Corpus c = parse_corpus(in);
    REQUIRE(c.threads.size() == 1);
    REQUIRE(c.threads[0].questions.size() == 2);
    CHECK(c.threads[0].questions[0].id == "q1");
    CHECK(c.threads[0].questions[1].id == "q2");
    CHECK(c.threads[0].questions[0].thread_id == "t1");
}

TEST_CASE("missing required field reports the offending line") {
    std::istringstream in(
        R"({"id":"t1","domain":"actor","description":"","started_at":0,"ended_at":9,"questions":[]})"
        "\n"
        R"({"id":"t2","domain":"actor","description":"","started_at":0,"ended_at":9,)"
        R"("questions":[{"id":"q1","author":"a","posted_at":1,"answered":false,"top_level":true}]})"
        "\n");
    try {
        parse_corpus(in);
        FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
        CHECK(e.line_number == 2);
        CHECK(std::string(e.what()).find("text") != std::string::npos);
    }
}

TEST_CASE("malformed JSON reports the offending line") {
    std::istringstream in("{not json\n");
    try {
        parse_corpus(in);
        FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
        CHECK(e.line_number == 1);
    }
}

TEST_CASE("duplicate question ids are rejected by name") {
    std::istringstream in(
        R"({"id":"t1","domain":"actor","description":"","started_at":0,"ended_at":9,)"
        R"("questions":[{"id":"dup","author":"a","posted_at":1,"text":"A?","answered":false,"top_level":true},)"
        R"({"id":"dup","author":"b","posted_at":2,"text":"B?","answered":false,"top_level":true}]})"
        "\n");
    CHECK_THROWS_WITH_AS(parse_corpus(in), doctest::Contains("dup"), CorpusError);
}

TEST_CASE("unknown domain maps to other and counts a warning") {
    std::istringstream in(
        R"({"id":"t1","domain":"astronaut","description":"","started_at":0,"ended_at":9,"questions":[]})"
        "\n");
    const Corpus c = parse_corpus(in);
    REQUIRE(c.threads.size() == 1);
    CHECK(c.threads[0].domain == Domain::Other);
    CHECK(c.unknown_domain_warnings == 1);
}

TEST_CASE("negative timestamps and blank question text are rejected") {
    std::istringstream neg(
        R"({"id":"t1","domain":"actor","description":"","started_at":0,"ended_at":9,)"
        R"("questions":[{"id":"q1","author":"a","posted_at":-5,"text":"A?","answered":false,"top_level":true}]})"
        "\n");
    CHECK_THROWS_AS(parse_corpus(neg), CorpusError);
    std::istringstream blank(
        R"({"id":"t1","domain":"actor","description":"","started_at":0,"ended_at":9,)"
        R"("questions":[{"id":"q1","author":"a","posted_at":5,"text":"   ","answered":false,"top_level":true}]})"
        "\n");
    CHECK_THROWS_AS(parse_corpus(blank), CorpusError);
}

TEST_CASE("question mark detection accepts ASCII and full-width marks") {
    CHECK(has_question_mark("why?"));
    CHECK(has_question_mark("你最喜欢哪一种？"));
    CHECK_FALSE(has_question_mark("no mark here"));
    CHECK_FALSE(has_question_mark(""));
}

TEST_CASE("filtering drops non-questions and truncates after the last answer") {
    std::vector<Question> qs;
    for (int i = 0; i < 20; ++i) {
        qs.push_back(make_q("q" + std::to_string(i), i, i == 9));
    }
    const Thread t = filter_questions(make_thread("t", qs));
    REQUIRE(t.questions.size() == 10);
    CHECK(t.questions.back().id == "q9");

    SUBCASE("statements and nested comments are dropped") {
        std::vector<Question> mixed = {
            make_q("a", 1, true), make_q("b", 2, false, true, "Great job!"),
            make_q("c", 3, false, false, "Nested?"), make_q("d", 4, true)};
        const Thread f = filter_questions(make_thread("t2", mixed));
        REQUIRE(f.questions.size() == 2);
        CHECK(f.questions[0].id == "a");
        CHECK(f.questions[1].id == "d");
    }
}

TEST_CASE("a thread with no answered question keeps zero questions") {
    std::vector<Question> qs = {make_q("a", 1, false), make_q("b", 2, false)};
    const Thread t = filter_questions(make_thread("t", qs));
    CHECK(t.questions.empty());
}

TEST_CASE("ties at the truncation boundary are retained") {
    std::vector<Question> qs = {make_q("a", 1, true), make_q("b", 1, false),
                                make_q("c", 2, false)};
    const Thread t = filter_questions(make_thread("t", qs));
    std::set<std::string> kept;
    for (const auto& q : t.questions) kept.insert(q.id);
    CHECK(kept == std::set<std::string>{"a", "b"});
}

TEST_CASE("filtering is idempotent on random corpora") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const Corpus c = random_corpus(rng, 4);
        const Corpus once = filter_corpus(c);
        const Corpus twice = filter_corpus(once);
        REQUIRE(once.threads.size() == twice.threads.size());
        for (std::size_t i = 0; i < once.threads.size(); ++i) {
            REQUIRE(once.threads[i].questions.size() ==
                    twice.threads[i].questions.size());
            for (std::size_t j = 0; j < once.threads[i].questions.size(); ++j) {
                CHECK(once.threads[i].questions[j].id ==
                      twice.threads[i].questions[j].id);
            }
        }
    }
}

TEST_CASE("no retained question is later than the last answered one") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const Corpus c = filter_corpus(random_corpus(rng, 3));
        for (const Thread& t : c.threads) {
            std::int64_t last_answered = -1;
            for (const Question& q : t.questions) {
                if (q.answered) last_answered = std::max(last_answered, q.posted_at);
            }
            for (const Question& q : t.questions) {
                CHECK(q.posted_at <= last_answered);
            }
        }
    }
}

TEST_CASE("split rejects bad ratios and tiny corpora") {
    const Thread t = make_thread(
        "t", {make_q("a", 1, true), make_q("b", 2, false), make_q("c", 3, true)});
    CHECK_THROWS_AS(split_corpus({t}, SplitRatios{0.5, 0.5, 0.5}, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(split_corpus({t}, SplitRatios{1.0, 0.0, 0.0}, 1),
                    std::invalid_argument);
    const Thread small = make_thread("s", {make_q("a", 1, true), make_q("b", 2, false)});
    CHECK_THROWS_AS(split_corpus({small}, SplitRatios{}, 1), std::invalid_argument);
}

TEST_CASE("split is a deterministic partition") {
    Rng rng(7);
    std::vector<Thread> threads;
    std::set<std::string> all_ids;
    for (int i = 0; i < 5; ++i) {
        std::vector<Question> qs;
        for (int j = 0; j < 20; ++j) {
            const std::string id = "q" + std::to_string(i) + "_" + std::to_string(j);
            qs.push_back(make_q(id, j, rng.uniform() < 0.5));
            all_ids.insert(id);
        }
        threads.push_back(make_thread("t" + std::to_string(i), qs));
    }
    const CorpusSplit s1 = split_corpus(threads, SplitRatios{0.6, 0.2, 0.2}, 42);
    const CorpusSplit s2 = split_corpus(threads, SplitRatios{0.6, 0.2, 0.2}, 42);
    CHECK(s1.train == s2.train);
    CHECK(s1.dev == s2.dev);
    CHECK(s1.test == s2.test);

    CHECK(s1.train.size() == 60);
    CHECK(s1.dev.size() == 20);
    CHECK(s1.test.size() == 20);

    std::set<std::string> seen;
    for (const auto* part : {&s1.train, &s1.dev, &s1.test}) {
        for (const auto& id : *part) {
            CHECK(seen.insert(id).second);  // pairwise disjoint
        }
    }
    CHECK(seen == all_ids);

    const CorpusSplit s3 = split_corpus(threads, SplitRatios{0.6, 0.2, 0.2}, 43);
    CHECK(s3.train != s1.train);
}

TEST_CASE("split apportions within each thread by largest remainder") {
    // 10 questions at (0.8, 0.1, 0.1): exact shares are 8/1/1.
    std::vector<Question> qs;
    for (int j = 0; j < 10; ++j) qs.push_back(make_q("q" + std::to_string(j), j, true));
    const CorpusSplit s = split_corpus({make_thread("t", qs)},
                                       SplitRatios{0.8, 0.1, 0.1}, 7);
    CHECK(s.train.size() == 8);
    CHECK(s.dev.size() == 1);
    CHECK(s.test.size() == 1);
}

TEST_CASE("response rates reproduce the published domain table") {
    const auto mk_domain = [](Domain d, std::size_t asked, std::size_t replied) {
        std::vector<Question> qs;
        qs.reserve(asked);
        for (std::size_t i = 0; i < asked; ++i) {
            qs.push_back(make_q(domain_name(d) + std::to_string(i),
                                static_cast<std::int64_t>(i), i < replied));
        }
        return make_thread(std::string("t_") + domain_name(d), std::move(qs), d);
    };
    const std::vector<Thread> threads = {
        mk_domain(Domain::Actor, 58859, 3060),
        mk_domain(Domain::Author, 21295, 3752),
        mk_domain(Domain::Politician, 13866, 1914),
        mk_domain(Domain::Director, 24196, 3295),
    };
    const CorpusStats stats = corpus_stats(threads);
    CHECK(stats.per_domain.at(Domain::Actor).response_rate() == 5.19);
    CHECK(stats.per_domain.at(Domain::Author).response_rate() == 17.61);
    CHECK(stats.per_domain.at(Domain::Politician).response_rate() == 13.80);
    CHECK(stats.per_domain.at(Domain::Director).response_rate() == 13.61);
    CHECK(stats.total.asked == 118216);
    CHECK(stats.total.replied == 12021);
    CHECK(stats.total.response_rate() == 10.16);
}

TEST_CASE("simple rate arithmetic") {
    const Thread t = make_thread(
        "t", {make_q("a", 1, true), make_q("b", 2, false), make_q("c", 3, false),
              make_q("d", 4, false)});
    const CorpusStats stats = corpus_stats({t});
    CHECK(stats.total.asked == 4);
    CHECK(stats.total.replied == 1);
    CHECK(stats.total.response_rate() == 25.00);
}

TEST_CASE("stats totals equal the sum of domains and rates stay in range") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const Corpus c = filter_corpus(random_corpus(rng, 6));
        const CorpusStats stats = corpus_stats(c.threads);
        std::size_t asked = 0, replied = 0;
        for (const auto& [d, counts] : stats.per_domain) {
            asked += counts.asked;
            replied += counts.replied;
            CHECK(counts.response_rate() >= 0.0);
            CHECK(counts.response_rate() <= 100.0);
        }
        CHECK(stats.total.asked == asked);
        CHECK(stats.total.replied == replied);
    }
}

TEST_CASE("corpus serialization round trips") {
    Rng rng(11);
    Corpus c = random_corpus(rng, 4);
    c.unknown_domain_warnings = 3;
    const std::string bytes = serialize_corpus(c);
    const Corpus back = deserialize_corpus(bytes);
    CHECK(back.unknown_domain_warnings == 3);
    REQUIRE(back.threads.size() == c.threads.size());
    for (std::size_t i = 0; i < c.threads.size(); ++i) {
        CHECK(back.threads[i].id == c.threads[i].id);
        CHECK(back.threads[i].domain == c.threads[i].domain);
        REQUIRE(back.threads[i].questions.size() == c.threads[i].questions.size());
        for (std::size_t j = 0; j < c.threads[i].questions.size(); ++j) {
            const Question& a = c.threads[i].questions[j];
            const Question& b = back.threads[i].questions[j];
            CHECK(a.id == b.id);
            CHECK(a.author == b.author);
            CHECK(a.posted_at == b.posted_at);
            CHECK(a.text == b.text);
            CHECK(a.answered == b.answered);
            CHECK(a.top_level == b.top_level);
        }
    }
    CHECK_THROWS_AS(deserialize_corpus("garbage"), std::exception);
}

TEST_CASE("thread time envelope covers every retained question") {
    std::istringstream in(
        R"({"id":"t1","domain":"actor","description":"","started_at":50,"ended_at":60,)"
        R"("questions":[{"id":"q1","author":"a","posted_at":10,"text":"A?","answered":true,"top_level":true},)"
        R"({"id":"q2","author":"b","posted_at":90,"text":"B?","answered":false,"top_level":true}]})"
        "\n");
    const Corpus c = parse_corpus(in);
    REQUIRE(c.threads.size() == 1);
    CHECK(c.threads[0].started_at <= 10);
    CHECK(c.threads[0].ended_at >= 90);
}
