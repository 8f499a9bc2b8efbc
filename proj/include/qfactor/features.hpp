#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qfactor/corpus.hpp"
#include "qfactor/parsetree.hpp"
#include "qfactor/textsim.hpp"

namespace qfactor {

enum class FeatureGroup {
    Length,
    Temporal,
    Politeness,
    Syntactic,
    Redundancy,
    Relevance,
    Unigram
};

const char* group_name(FeatureGroup g);
std::optional<FeatureGroup> group_from_name(const std::string& name);

// Dense feature names follow "group.name" so the group is recoverable from a
// CSV header. Order is frozen at creation; vectors are only comparable under
// one schema.
struct FeatureSchema {
    std::vector<std::pair<std::string, FeatureGroup>> dense;
    bool has_unigrams = false;
    std::vector<std::string> vocabulary;  // unigram column order, sorted

    static FeatureSchema create(const std::set<FeatureGroup>& groups,
                                std::vector<std::string> vocabulary = {});

    std::size_t dense_arity() const { return dense.size(); }
};

struct FeatureVector {
    std::string question_id;
    std::vector<double> dense;
    std::map<std::size_t, double> unigram;  // word index -> count
    bool label = false;
};

// Three marker classes, one phrase per line per file. Phrases are matched as
// consecutive token runs, case-insensitively.
struct PolitenessLexicons {
    std::vector<std::vector<std::string>> greetings;
    std::vector<std::vector<std::string>> apologies;
    std::vector<std::vector<std::string>> hedges;

    static PolitenessLexicons load(const std::string& greetings_path,
                                   const std::string& apologies_path,
                                   const std::string& hedges_path);
};

using SimFn = std::function<double(const TokenSet&, const TokenSet&)>;

double length_feature(const Question& q);

// frac_answered_before counts strictly earlier answered questions over all
// answered questions in the thread; frac_time_elapsed is anchored to the last
// answered question's timestamp unless use_thread_end is set. Both in [0,1].
std::pair<double, double> temporal_features(const Question& q, const Thread& t,
                                            bool use_thread_end = false);

double politeness_score(const Question& q, const PolitenessLexicons& lex);

// Aggregates per-sentence statistics: avg/max/min of depth, vp_count,
// max_vp_depth, vp_ratio (12), then sentence count, total vp_count, global
// max depth, global max vp_ratio (4). Empty input yields all zeros.
std::array<double, 16> syntactic_features(
    const std::vector<SentenceSyntax>& sentences);

// Max similarity against strictly earlier questions of the same thread.
double redundancy_score(const Question& q, const Thread& t,
                        const StopwordSet& stopwords, const SimFn& sim);

double relevance_score(const Question& q, const Thread& t,
                       const StopwordSet& stopwords, const SimFn& sim);

std::map<std::size_t, double> unigram_features(
    const Question& q, const std::unordered_map<std::string, std::size_t>& vocab);

// All tokens of the given questions, sorted and deduplicated. Built from the
// training split only so held-out words never enter the schema.
std::vector<std::string> build_vocabulary(
    const std::vector<const Question*>& questions);

struct FeatureConfig {
    std::set<FeatureGroup> groups = {
        FeatureGroup::Length,     FeatureGroup::Temporal,
        FeatureGroup::Politeness, FeatureGroup::Syntactic,
        FeatureGroup::Redundancy, FeatureGroup::Relevance};
    std::size_t knn_k = 5;
    bool use_thread_end = false;
    std::set<std::string> vp_labels = {"VP"};
};

class FeatureExtractor {
public:
    // Null resources disable the clauses that need them: null embeddings or
    // synonyms reduce word matching to equality, a null parse map yields
    // all-zero syntactic features.
    FeatureExtractor(FeatureConfig config, const StopwordSet* stopwords,
                     const PolitenessLexicons* politeness,
                     const EmbeddingTable* embeddings,
                     const SynonymLexicon* synonyms,
                     const std::unordered_map<std::string,
                                              std::vector<ParseTree>>* parses,
                     std::vector<std::string> vocabulary = {});

    const FeatureSchema& schema() const { return schema_; }
    FeatureVector assemble(const Question& q, const Thread& t) const;

    double similarity(const TokenSet& a, const TokenSet& b) const;
    TokenSet tokens_of(const std::string& key, const std::string& text) const;

private:
    FeatureConfig config_;
    FeatureSchema schema_;
    const StopwordSet* stopwords_;
    const PolitenessLexicons* politeness_;
    const EmbeddingTable* embeddings_;
    const SynonymLexicon* synonyms_;
    const std::unordered_map<std::string, std::vector<ParseTree>>* parses_;
    std::unordered_map<std::string, std::size_t> vocab_index_;

    mutable std::mutex cache_mutex_;
    mutable std::unordered_map<std::string, TokenSet> token_cache_;
};

struct FeatureTable {
    FeatureSchema schema;  // dense part only; vocabulary not recovered
    std::vector<FeatureVector> rows;
};

// CSV layout: question_id, one column per dense feature, label. The sparse
// unigram part travels in a sidecar: question_id,word_index,count.
void write_feature_csv(const std::string& path, const FeatureSchema& schema,
                       const std::vector<FeatureVector>& rows);
FeatureTable read_feature_csv(const std::string& path);

void write_unigram_sidecar(const std::string& path,
                           const std::vector<FeatureVector>& rows);
std::unordered_map<std::string, std::map<std::size_t, double>>
read_unigram_sidecar(const std::string& path);

}  // namespace qfactor
