#include "qfactor/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qfactor/rng.hpp"
#include "qfactor/util.hpp"

namespace qfactor {

using nlohmann::json;

const char* domain_name(Domain d) {
    switch (d) {
        case Domain::Actor: return "actor";
        case Domain::Author: return "author";
        case Domain::Politician: return "politician";
        case Domain::Director: return "director";
        case Domain::Other: return "other";
    }
    return "other";
}

std::optional<Domain> domain_from_name(const std::string& name) {
    if (name == "actor") return Domain::Actor;
    if (name == "author") return Domain::Author;
    if (name == "politician") return Domain::Politician;
    if (name == "director") return Domain::Director;
    if (name == "other") return Domain::Other;
    return std::nullopt;
}

std::size_t Corpus::question_count() const {
    std::size_t n = 0;
    for (const auto& t : threads) n += t.questions.size();
    return n;
}

double DomainCounts::response_rate() const {
    if (asked == 0) return 0.0;
    return floor2(100.0 * static_cast<double>(replied) /
                  static_cast<double>(asked));
}

namespace {

bool is_blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isspace(c); });
}

Question parse_question(const json& jq, const std::string& thread_id,
                        std::size_t line_no) {
    const char* required[] = {"id", "author", "posted_at", "text",
                              "answered", "top_level"};
    for (const char* field : required) {
        if (!jq.contains(field)) {
            throw CorpusError("question missing field \"" +
                                  std::string(field) + "\" at line " +
                                  std::to_string(line_no),
                              line_no);
        }
    }
    Question q;
    q.id = jq.at("id").get<std::string>();
    q.thread_id = thread_id;
    q.author = jq.at("author").get<std::string>();
    q.posted_at = jq.at("posted_at").get<std::int64_t>();
    q.text = jq.at("text").get<std::string>();
    q.answered = jq.at("answered").get<bool>();
    q.top_level = jq.at("top_level").get<bool>();
    if (q.posted_at < 0) {
        throw CorpusError("question \"" + q.id + "\" has negative posted_at" +
                              " at line " + std::to_string(line_no),
                          line_no);
    }
    if (is_blank(q.text)) {
        throw CorpusError("question \"" + q.id + "\" has empty text at line " +
                              std::to_string(line_no),
                          line_no);
    }
    return q;
}

}  // namespace

Corpus parse_corpus(std::istream& in) {
    Corpus corpus;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        json jt = json::parse(line, nullptr, false);
        if (jt.is_discarded() || !jt.is_object()) {
            throw CorpusError("malformed JSON at line " +
                                  std::to_string(line_no),
                              line_no);
        }
        const char* required[] = {"id", "domain", "description", "started_at",
                                  "ended_at", "questions"};
        for (const char* field : required) {
            if (!jt.contains(field)) {
                throw CorpusError("thread missing field \"" +
                                      std::string(field) + "\" at line " +
                                      std::to_string(line_no),
                                  line_no);
            }
        }
        Thread t;
        t.id = jt.at("id").get<std::string>();
        const auto domain_tag = jt.at("domain").get<std::string>();
        if (auto d = domain_from_name(domain_tag)) {
            t.domain = *d;
        } else {
            t.domain = Domain::Other;
            ++corpus.unknown_domain_warnings;
        }
        t.description = jt.at("description").get<std::string>();
        t.started_at = jt.at("started_at").get<std::int64_t>();
        t.ended_at = jt.at("ended_at").get<std::int64_t>();
        for (const json& jq : jt.at("questions")) {
            Question q = parse_question(jq, t.id, line_no);
            if (!seen_ids.insert(q.id).second) {
                throw CorpusError("duplicate question id \"" + q.id +
                                      "\" at line " + std::to_string(line_no),
                                  line_no);
            }
            t.questions.push_back(std::move(q));
        }
        std::stable_sort(t.questions.begin(), t.questions.end(),
                         [](const Question& a, const Question& b) {
                             return a.posted_at < b.posted_at;
                         });
        // Widen the thread window to envelope its questions so the
        // started_at <= posted_at <= ended_at invariant always holds.
        if (!t.questions.empty()) {
            t.started_at = std::min(t.started_at, t.questions.front().posted_at);
            t.ended_at = std::max(t.ended_at, t.questions.back().posted_at);
        }
        corpus.threads.push_back(std::move(t));
    }
    return corpus;
}

Corpus parse_corpus_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus file: " + path);
    return parse_corpus(in);
}

bool has_question_mark(const std::string& text) {
    if (text.find('?') != std::string::npos) return true;
    return text.find("\xEF\xBC\x9F") != std::string::npos;  // U+FF1F
}

Thread filter_questions(const Thread& thread) {
    Thread out = thread;
    out.questions.clear();
    std::vector<const Question*> candidates;
    for (const Question& q : thread.questions) {
        if (q.top_level && has_question_mark(q.text)) candidates.push_back(&q);
    }
    // Truncation anchor: the last answered question among the candidates.
    std::int64_t last_answered_at = -1;
    bool any_answered = false;
    for (const Question* q : candidates) {
        if (q->answered) {
            any_answered = true;
            last_answered_at = std::max(last_answered_at, q->posted_at);
        }
    }
    if (!any_answered) return out;  // empty thread
    for (const Question* q : candidates) {
        if (q->posted_at <= last_answered_at) out.questions.push_back(*q);
    }
    return out;
}

Corpus filter_corpus(const Corpus& corpus) {
    Corpus out;
    out.unknown_domain_warnings = corpus.unknown_domain_warnings;
    out.threads.reserve(corpus.threads.size());
    for (const Thread& t : corpus.threads) out.threads.push_back(filter_questions(t));
    return out;
}

CorpusSplit split_corpus(const std::vector<Thread>& threads,
                         const SplitRatios& ratios, std::uint64_t seed) {
    const double parts[3] = {ratios.train, ratios.dev, ratios.test};
    double sum = 0.0;
    for (double p : parts) {
        if (!(p > 0.0 && p < 1.0)) {
            throw std::invalid_argument("split ratios must each lie in (0,1)");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1");
    }
    std::size_t total = 0;
    for (const Thread& t : threads) total += t.questions.size();
    if (total < 3) {
        throw std::invalid_argument("need at least 3 questions to split");
    }

    Rng rng(seed);
    CorpusSplit split;
    std::vector<std::string>* buckets[3] = {&split.train, &split.dev,
                                            &split.test};
    for (const Thread& t : threads) {
        const std::size_t m = t.questions.size();
        if (m == 0) continue;
        std::vector<std::size_t> order(m);
        for (std::size_t i = 0; i < m; ++i) order[i] = i;
        rng.shuffle(order);
        // Largest-remainder apportionment of this thread's questions.
        std::size_t counts[3];
        double remainders[3];
        std::size_t assigned = 0;
        for (int p = 0; p < 3; ++p) {
            const double exact = parts[p] * static_cast<double>(m);
            counts[p] = static_cast<std::size_t>(std::floor(exact));
            remainders[p] = exact - std::floor(exact);
            assigned += counts[p];
        }
        while (assigned < m) {
            int best = 0;
            for (int p = 1; p < 3; ++p) {
                if (remainders[p] > remainders[best]) best = p;
            }
            ++counts[best];
            remainders[best] = -1.0;
            ++assigned;
        }
        std::size_t cursor = 0;
        for (int p = 0; p < 3; ++p) {
            for (std::size_t i = 0; i < counts[p]; ++i, ++cursor) {
                buckets[p]->push_back(t.questions[order[cursor]].id);
            }
        }
    }
    for (auto* bucket : buckets) std::sort(bucket->begin(), bucket->end());
    return split;
}

CorpusStats corpus_stats(const std::vector<Thread>& threads) {
    CorpusStats stats;
    for (const Thread& t : threads) {
        DomainCounts& c = stats.per_domain[t.domain];
        for (const Question& q : t.questions) {
            ++c.asked;
            ++stats.total.asked;
            if (q.answered) {
                ++c.replied;
                ++stats.total.replied;
            }
        }
    }
    return stats;
}

namespace {

json corpus_to_json(const Corpus& corpus) {
    json jthreads = json::array();
    for (const Thread& t : corpus.threads) {
        json jqs = json::array();
        for (const Question& q : t.questions) {
            jqs.push_back({{"id", q.id},
                           {"author", q.author},
                           {"posted_at", q.posted_at},
                           {"text", q.text},
                           {"answered", q.answered},
                           {"top_level", q.top_level}});
        }
        jthreads.push_back({{"id", t.id},
                            {"domain", domain_name(t.domain)},
                            {"description", t.description},
                            {"started_at", t.started_at},
                            {"ended_at", t.ended_at},
                            {"questions", std::move(jqs)}});
    }
    return json{{"format", "qfactor-corpus-v1"},
                {"unknown_domain_warnings", corpus.unknown_domain_warnings},
                {"threads", std::move(jthreads)}};
}

}  // namespace

std::string serialize_corpus(const Corpus& corpus) {
    const std::vector<std::uint8_t> cbor = json::to_cbor(corpus_to_json(corpus));
    return std::string(cbor.begin(), cbor.end());
}

Corpus deserialize_corpus(const std::string& bytes) {
    json j = json::from_cbor(bytes, true, false);
    if (j.is_discarded() || !j.is_object() ||
        j.value("format", "") != "qfactor-corpus-v1") {
        throw CorpusError("not a qfactor corpus container");
    }
    Corpus corpus;
    corpus.unknown_domain_warnings = j.at("unknown_domain_warnings").get<std::size_t>();
    for (const json& jt : j.at("threads")) {
        Thread t;
        t.id = jt.at("id").get<std::string>();
        t.domain = domain_from_name(jt.at("domain").get<std::string>())
                       .value_or(Domain::Other);
        t.description = jt.at("description").get<std::string>();
        t.started_at = jt.at("started_at").get<std::int64_t>();
        t.ended_at = jt.at("ended_at").get<std::int64_t>();
        for (const json& jq : jt.at("questions")) {
            Question q;
            q.id = jq.at("id").get<std::string>();
            q.thread_id = t.id;
            q.author = jq.at("author").get<std::string>();
            q.posted_at = jq.at("posted_at").get<std::int64_t>();
            q.text = jq.at("text").get<std::string>();
            q.answered = jq.at("answered").get<bool>();
            q.top_level = jq.at("top_level").get<bool>();
            t.questions.push_back(std::move(q));
        }
        corpus.threads.push_back(std::move(t));
    }
    return corpus;
}

std::string stats_to_json(const CorpusStats& stats) {
    json jdomains = json::object();
    for (const auto& [domain, counts] : stats.per_domain) {
        jdomains[domain_name(domain)] = {{"asked", counts.asked},
                                         {"replied", counts.replied},
                                         {"response_rate", counts.response_rate()}};
    }
    json j{{"domains", std::move(jdomains)},
           {"total",
            {{"asked", stats.total.asked},
             {"replied", stats.total.replied},
             {"response_rate", stats.total.response_rate()}}}};
    return j.dump(2) + "\n";
}

}  // namespace qfactor
