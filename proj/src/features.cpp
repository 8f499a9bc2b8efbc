#include "qfactor/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "qfactor/util.hpp"

namespace qfactor {

const char* group_name(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::Length: return "length";
        case FeatureGroup::Temporal: return "temporal";
        case FeatureGroup::Politeness: return "politeness";
        case FeatureGroup::Syntactic: return "syntactic";
        case FeatureGroup::Redundancy: return "redundancy";
        case FeatureGroup::Relevance: return "relevance";
        case FeatureGroup::Unigram: return "unigram";
    }
    return "unigram";
}

std::optional<FeatureGroup> group_from_name(const std::string& name) {
    if (name == "length") return FeatureGroup::Length;
    if (name == "temporal") return FeatureGroup::Temporal;
    if (name == "politeness") return FeatureGroup::Politeness;
    if (name == "syntactic") return FeatureGroup::Syntactic;
    if (name == "redundancy") return FeatureGroup::Redundancy;
    if (name == "relevance") return FeatureGroup::Relevance;
    if (name == "unigram") return FeatureGroup::Unigram;
    return std::nullopt;
}

FeatureSchema FeatureSchema::create(const std::set<FeatureGroup>& groups,
                                    std::vector<std::string> vocabulary) {
    FeatureSchema s;
    const auto add = [&s](FeatureGroup g, const char* name) {
        s.dense.emplace_back(std::string(group_name(g)) + "." + name, g);
    };
    if (groups.count(FeatureGroup::Length)) {
        add(FeatureGroup::Length, "token_count");
    }
    if (groups.count(FeatureGroup::Temporal)) {
        add(FeatureGroup::Temporal, "frac_answered_before");
        add(FeatureGroup::Temporal, "frac_time_elapsed");
    }
    if (groups.count(FeatureGroup::Politeness)) {
        add(FeatureGroup::Politeness, "marker_ratio");
    }
    if (groups.count(FeatureGroup::Syntactic)) {
        static const char* kNames[16] = {
            "depth_avg",        "depth_max",        "depth_min",
            "vp_count_avg",     "vp_count_max",     "vp_count_min",
            "max_vp_depth_avg", "max_vp_depth_max", "max_vp_depth_min",
            "vp_ratio_avg",     "vp_ratio_max",     "vp_ratio_min",
            "sentence_count",   "vp_count_total",   "depth_global_max",
            "vp_ratio_global_max"};
        for (const char* n : kNames) add(FeatureGroup::Syntactic, n);
    }
    if (groups.count(FeatureGroup::Redundancy)) {
        add(FeatureGroup::Redundancy, "max_prior_similarity");
    }
    if (groups.count(FeatureGroup::Relevance)) {
        add(FeatureGroup::Relevance, "description_similarity");
    }
    s.has_unigrams = groups.count(FeatureGroup::Unigram) > 0;
    if (s.has_unigrams) s.vocabulary = std::move(vocabulary);
    return s;
}

namespace {

std::vector<std::vector<std::string>> load_phrase_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
    std::vector<std::vector<std::string>> phrases;
    std::string line;
    while (std::getline(in, line)) {
        auto tokens = tokenize_words(line);
        if (!tokens.empty()) phrases.push_back(std::move(tokens));
    }
    return phrases;
}

std::size_t count_phrase_hits(const std::vector<std::string>& tokens,
                              const std::vector<std::vector<std::string>>& phrases) {
    std::size_t hits = 0;
    for (const auto& phrase : phrases) {
        if (phrase.size() > tokens.size()) continue;
        for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
            if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + i)) {
                ++hits;
            }
        }
    }
    return hits;
}

}  // namespace

PolitenessLexicons PolitenessLexicons::load(const std::string& greetings_path,
                                            const std::string& apologies_path,
                                            const std::string& hedges_path) {
    PolitenessLexicons lex;
    lex.greetings = load_phrase_file(greetings_path);
    lex.apologies = load_phrase_file(apologies_path);
    lex.hedges = load_phrase_file(hedges_path);
    return lex;
}

double length_feature(const Question& q) {
    return static_cast<double>(tokenize_words(q.text).size());
}

std::pair<double, double> temporal_features(const Question& q, const Thread& t,
                                            bool use_thread_end) {
    std::size_t answered = 0, answered_before = 0;
    std::int64_t last_answered_at = t.started_at;
    for (const Question& other : t.questions) {
        if (!other.answered) continue;
        ++answered;
        if (other.posted_at < q.posted_at) ++answered_before;
        last_answered_at = std::max(last_answered_at, other.posted_at);
    }
    if (answered == 0) return {0.0, 0.0};
    const double frac_answered =
        static_cast<double>(answered_before) / static_cast<double>(answered);

    const std::int64_t end = use_thread_end ? t.ended_at : last_answered_at;
    const double span = static_cast<double>(end - t.started_at);
    double frac_time = 0.0;
    if (span > 0.0) {
        frac_time = static_cast<double>(q.posted_at - t.started_at) / span;
    }
    return {std::clamp(frac_answered, 0.0, 1.0), std::clamp(frac_time, 0.0, 1.0)};
}

double politeness_score(const Question& q, const PolitenessLexicons& lex) {
    const auto tokens = tokenize_words(q.text);
    const std::size_t hits = count_phrase_hits(tokens, lex.greetings) +
                             count_phrase_hits(tokens, lex.apologies) +
                             count_phrase_hits(tokens, lex.hedges);
    return static_cast<double>(hits) /
           static_cast<double>(std::max<std::size_t>(1, tokens.size()));
}

std::array<double, 16> syntactic_features(
    const std::vector<SentenceSyntax>& sentences) {
    std::array<double, 16> out{};
    if (sentences.empty()) return out;
    const double n = static_cast<double>(sentences.size());
    const auto stats = [&](const std::function<double(const SentenceSyntax&)>& get,
                           std::size_t base) {
        double sum = 0.0;
        double hi = -std::numeric_limits<double>::infinity();
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& s : sentences) {
            const double v = get(s);
            sum += v;
            hi = std::max(hi, v);
            lo = std::min(lo, v);
        }
        out[base] = sum / n;
        out[base + 1] = hi;
        out[base + 2] = lo;
    };
    stats([](const SentenceSyntax& s) { return double(s.depth); }, 0);
    stats([](const SentenceSyntax& s) { return double(s.vp_count); }, 3);
    stats([](const SentenceSyntax& s) { return double(s.max_vp_depth); }, 6);
    stats([](const SentenceSyntax& s) { return s.vp_ratio; }, 9);
    out[12] = n;
    double vp_total = 0.0;
    for (const auto& s : sentences) vp_total += s.vp_count;
    out[13] = vp_total;
    out[14] = out[1];   // global max depth
    out[15] = out[10];  // global max vp_ratio
    return out;
}

double redundancy_score(const Question& q, const Thread& t,
                        const StopwordSet& stopwords, const SimFn& sim) {
    const TokenSet mine = tokenize(q.text, stopwords);
    double best = 0.0;
    for (const Question& other : t.questions) {
        if (other.posted_at >= q.posted_at || other.id == q.id) continue;
        best = std::max(best, sim(mine, tokenize(other.text, stopwords)));
    }
    return best;
}

double relevance_score(const Question& q, const Thread& t,
                       const StopwordSet& stopwords, const SimFn& sim) {
    const TokenSet description = tokenize(t.description, stopwords);
    if (description.empty()) return 0.0;
    return sim(tokenize(q.text, stopwords), description);
}

std::map<std::size_t, double> unigram_features(
    const Question& q,
    const std::unordered_map<std::string, std::size_t>& vocab) {
    std::map<std::size_t, double> counts;
    for (const auto& token : tokenize_words(q.text)) {
        auto it = vocab.find(token);
        if (it != vocab.end()) counts[it->second] += 1.0;
    }
    return counts;
}

std::vector<std::string> build_vocabulary(
    const std::vector<const Question*>& questions) {
    std::set<std::string> words;
    for (const Question* q : questions) {
        for (auto& token : tokenize_words(q->text)) words.insert(std::move(token));
    }
    return {words.begin(), words.end()};
}

FeatureExtractor::FeatureExtractor(
    FeatureConfig config, const StopwordSet* stopwords,
    const PolitenessLexicons* politeness, const EmbeddingTable* embeddings,
    const SynonymLexicon* synonyms,
    const std::unordered_map<std::string, std::vector<ParseTree>>* parses,
    std::vector<std::string> vocabulary)
    : config_(std::move(config)),
      stopwords_(stopwords),
      politeness_(politeness),
      embeddings_(embeddings),
      synonyms_(synonyms),
      parses_(parses) {
    schema_ = FeatureSchema::create(config_.groups, std::move(vocabulary));
    for (std::size_t i = 0; i < schema_.vocabulary.size(); ++i) {
        vocab_index_.emplace(schema_.vocabulary[i], i);
    }
}

double FeatureExtractor::similarity(const TokenSet& a, const TokenSet& b) const {
    WordMatcher matcher{embeddings_, synonyms_, config_.knn_k};
    return extended_jaccard(a, b, matcher);
}

TokenSet FeatureExtractor::tokens_of(const std::string& key,
                                     const std::string& text) const {
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        auto it = token_cache_.find(key);
        if (it != token_cache_.end()) return it->second;
    }
    static const StopwordSet kEmpty;
    TokenSet tokens = tokenize(text, stopwords_ ? *stopwords_ : kEmpty);
    std::lock_guard<std::mutex> lock(cache_mutex_);
    return token_cache_.emplace(key, std::move(tokens)).first->second;
}

FeatureVector FeatureExtractor::assemble(const Question& q,
                                         const Thread& t) const {
    FeatureVector fv;
    fv.question_id = q.id;
    fv.label = q.answered;
    fv.dense.reserve(schema_.dense_arity());

    const SimFn sim = [this](const TokenSet& a, const TokenSet& b) {
        return similarity(a, b);
    };
    static const StopwordSet kEmpty;
    const StopwordSet& stop = stopwords_ ? *stopwords_ : kEmpty;

    if (config_.groups.count(FeatureGroup::Length)) {
        fv.dense.push_back(length_feature(q));
    }
    if (config_.groups.count(FeatureGroup::Temporal)) {
        const auto [fa, ft] = temporal_features(q, t, config_.use_thread_end);
        fv.dense.push_back(fa);
        fv.dense.push_back(ft);
    }
    if (config_.groups.count(FeatureGroup::Politeness)) {
        if (!politeness_) {
            throw std::runtime_error("politeness group enabled without lexicons");
        }
        fv.dense.push_back(politeness_score(q, *politeness_));
    }
    if (config_.groups.count(FeatureGroup::Syntactic)) {
        std::vector<SentenceSyntax> syntax;
        if (parses_) {
            auto it = parses_->find(q.id);
            if (it != parses_->end()) {
                syntax.reserve(it->second.size());
                for (const ParseTree& tree : it->second) {
                    syntax.push_back(sentence_syntax(tree, config_.vp_labels));
                }
            }
        }
        for (double v : syntactic_features(syntax)) fv.dense.push_back(v);
    }
    if (config_.groups.count(FeatureGroup::Redundancy)) {
        const TokenSet mine = tokens_of(q.id, q.text);
        double best = 0.0;
        for (const Question& other : t.questions) {
            if (other.posted_at >= q.posted_at || other.id == q.id) continue;
            best = std::max(best, sim(mine, tokens_of(other.id, other.text)));
        }
        fv.dense.push_back(best);
    }
    if (config_.groups.count(FeatureGroup::Relevance)) {
        fv.dense.push_back(relevance_score(q, t, stop, sim));
    }
    if (schema_.has_unigrams) {
        fv.unigram = unigram_features(q, vocab_index_);
    }
    return fv;
}

void write_feature_csv(const std::string& path, const FeatureSchema& schema,
                       const std::vector<FeatureVector>& rows) {
    std::ostringstream out;
    out << "question_id";
    for (const auto& [name, group] : schema.dense) out << ',' << name;
    out << ",label\n";
    char buf[64];
    for (const FeatureVector& row : rows) {
        if (row.dense.size() != schema.dense_arity()) {
            throw std::runtime_error("feature row arity mismatch for question " +
                                     row.question_id);
        }
        out << row.question_id;
        for (double v : row.dense) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ',' << buf;
        }
        out << ',' << (row.label ? 1 : 0) << '\n';
    }
    write_file(path, out.str());
}

FeatureTable read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open feature csv: " + path);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("feature csv is empty: " + path);
    }
    const auto header = split_string(line, ',');
    if (header.size() < 2 || header.front() != "question_id" ||
        header.back() != "label") {
        throw std::runtime_error("feature csv header malformed: " + path);
    }
    FeatureTable table;
    for (std::size_t i = 1; i + 1 < header.size(); ++i) {
        const auto dot = header[i].find('.');
        auto group = dot == std::string::npos
                         ? std::nullopt
                         : group_from_name(header[i].substr(0, dot));
        if (!group) {
            throw std::runtime_error("feature column without a known group: " +
                                     header[i]);
        }
        table.schema.dense.emplace_back(header[i], *group);
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_string(line, ',');
        if (cells.size() != header.size()) {
            throw std::runtime_error("feature csv row " + std::to_string(line_no) +
                                     " has wrong cell count");
        }
        FeatureVector row;
        row.question_id = cells.front();
        for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
            row.dense.push_back(std::stod(cells[i]));
        }
        row.label = cells.back() == "1";
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_unigram_sidecar(const std::string& path,
                           const std::vector<FeatureVector>& rows) {
    std::ostringstream out;
    out << "question_id,word_index,count\n";
    char buf[64];
    for (const FeatureVector& row : rows) {
        for (const auto& [index, count] : row.unigram) {
            std::snprintf(buf, sizeof(buf), "%.17g", count);
            out << row.question_id << ',' << index << ',' << buf << '\n';
        }
    }
    write_file(path, out.str());
}

std::unordered_map<std::string, std::map<std::size_t, double>>
read_unigram_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open unigram sidecar: " + path);
    std::string line;
    std::getline(in, line);  // header
    std::unordered_map<std::string, std::map<std::size_t, double>> result;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_string(line, ',');
        if (cells.size() != 3) {
            throw std::runtime_error("unigram sidecar row malformed: " + line);
        }
        result[cells[0]][std::stoull(cells[1])] = std::stod(cells[2]);
    }
    return result;
}

}  // namespace qfactor
