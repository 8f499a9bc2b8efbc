#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace qfactor {

// Lowercased tokens in text order, stop-words kept. Segmentation splits on
// non-alphanumeric boundaries; only ASCII letters are case-folded.
std::vector<std::string> tokenize_words(const std::string& text);

// Set semantics, matching the set formulation of the similarity measure.
using TokenSet = std::set<std::string>;

using StopwordSet = std::unordered_set<std::string>;

// One word per line; blank lines ignored.
StopwordSet load_stopwords(const std::string& path);

TokenSet tokenize(const std::string& text, const StopwordSet& stopwords);

class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(const EmbeddingTable& other);
    EmbeddingTable& operator=(const EmbeddingTable& other);

    // Text format, one line per word: `word v1 v2 ... vd`.
    static EmbeddingTable load(const std::string& path);
    static EmbeddingTable from_vectors(
        const std::vector<std::pair<std::string, std::vector<double>>>& entries);

    std::size_t dimension() const { return dim_; }
    std::size_t size() const { return words_.size(); }
    bool contains(const std::string& word) const;
    const std::vector<double>* vector_of(const std::string& word) const;

    // K nearest in-vocabulary words by cosine similarity, excluding w itself,
    // descending similarity with lexicographic tie-break. Out-of-vocabulary w
    // yields an empty list. K = 0 is an error.
    std::vector<std::string> knn_words(const std::string& w, std::size_t k) const;

private:
    std::size_t dim_ = 0;
    std::vector<std::string> words_;                    // sorted ascending
    std::vector<std::vector<double>> vectors_;          // parallel to words_
    std::vector<double> norms_;
    std::unordered_map<std::string, std::size_t> index_;

    // Memoized KNN; results are identical to the uncached computation.
    mutable std::mutex cache_mutex_;
    mutable std::map<std::pair<std::string, std::size_t>,
                     std::vector<std::string>>
        knn_cache_;
};

class SynonymLexicon {
public:
    // Text format: `word<TAB>syn1,syn2,...`. Symmetric closure applied.
    static SynonymLexicon load(const std::string& path);

    void add(const std::string& word, const std::string& synonym);
    bool are_synonyms(const std::string& a, const std::string& b) const;
    const std::set<std::string>* synonyms_of(const std::string& word) const;
    std::size_t size() const { return table_.size(); }

private:
    std::unordered_map<std::string, std::set<std::string>> table_;
};

// True iff w1 = w2, or the lexicon links them, or either word appears in the
// other's embedding top-K neighborhood. Symmetric by construction. Either
// resource may be null, disabling its clause.
bool words_match(const std::string& w1, const std::string& w2,
                 const EmbeddingTable* embeddings, const SynonymLexicon* synonyms,
                 std::size_t k);

struct WordMatcher {
    const EmbeddingTable* embeddings = nullptr;
    const SynonymLexicon* synonyms = nullptr;
    std::size_t k = 5;

    bool operator()(const std::string& w1, const std::string& w2) const {
        return words_match(w1, w2, embeddings, synonyms, k);
    }
};

using MatchFn = std::function<bool(const std::string&, const std::string&)>;

// Size of a maximum matching (Hopcroft-Karp); adj[l] lists right vertices.
std::size_t max_bipartite_matching(std::size_t n_left, std::size_t n_right,
                                   const std::vector<std::vector<std::size_t>>& adj);

// m / (|A| + |B| - m) with m the maximum-matching size under the matcher.
// Both sets empty yields 1. Reduces to classical Jaccard under equality.
double extended_jaccard(const TokenSet& a, const TokenSet& b, const MatchFn& match);

}  // namespace qfactor
