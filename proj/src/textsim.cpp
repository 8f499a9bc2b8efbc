#include "qfactor/textsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace qfactor {

namespace {

// Decodes one UTF-8 codepoint starting at i; advances i. Invalid bytes are
// consumed one at a time and reported as U+FFFD so they act as boundaries.
std::uint32_t next_codepoint(const std::string& s, std::size_t& i) {
    const auto byte = [&](std::size_t j) {
        return static_cast<unsigned char>(s[j]);
    };
    const unsigned char b0 = byte(i);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int len = 0;
    std::uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        return 0xFFFD;
    }
    if (i + static_cast<std::size_t>(len) > s.size()) {
        ++i;
        return 0xFFFD;
    }
    for (int j = 1; j < len; ++j) {
        const unsigned char bj = byte(i + static_cast<std::size_t>(j));
        if ((bj & 0xC0) != 0x80) {
            ++i;
            return 0xFFFD;
        }
        cp = (cp << 6) | (bj & 0x3F);
    }
    i += static_cast<std::size_t>(len);
    return cp;
}

bool is_word_codepoint(std::uint32_t cp) {
    if (cp < 0x80) {
        return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') ||
               (cp >= 'A' && cp <= 'Z');
    }
    if (cp == 0xFFFD) return false;
    // Common punctuation blocks; everything else non-ASCII counts as a word
    // character (no per-script tables here).
    if (cp >= 0x2000 && cp <= 0x206F) return false;  // general punctuation
    if (cp >= 0x3000 && cp <= 0x303F) return false;  // CJK punctuation
    if (cp >= 0xFF01 && cp <= 0xFF0F) return false;  // fullwidth ! .. /
    if (cp >= 0xFF1A && cp <= 0xFF20) return false;  // fullwidth : .. @
    if (cp >= 0xFF3B && cp <= 0xFF40) return false;  // fullwidth [ .. `
    if (cp >= 0xFF5B && cp <= 0xFF65) return false;  // fullwidth { .. halfwidth .
    return true;
}

void append_codepoint_lower(std::string& out, const std::string& src,
                            std::size_t begin, std::size_t end,
                            std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(
            cp >= 'A' && cp <= 'Z' ? cp - 'A' + 'a' : cp));
    } else {
        out.append(src, begin, end - begin);
    }
}

}  // namespace

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        const std::uint32_t cp = next_codepoint(text, i);
        if (is_word_codepoint(cp)) {
            append_codepoint_lower(current, text, start, i, cp);
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

StopwordSet load_stopwords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open stop-word file: " + path);
    StopwordSet set;
    std::string line;
    while (std::getline(in, line)) {
        std::string word;
        for (char c : line) {
            if (!std::isspace(static_cast<unsigned char>(c))) {
                word.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
            }
        }
        if (!word.empty()) set.insert(word);
    }
    return set;
}

TokenSet tokenize(const std::string& text, const StopwordSet& stopwords) {
    TokenSet set;
    for (auto& token : tokenize_words(text)) {
        if (!stopwords.count(token)) set.insert(std::move(token));
    }
    return set;
}

EmbeddingTable::EmbeddingTable(const EmbeddingTable& other)
    : dim_(other.dim_),
      words_(other.words_),
      vectors_(other.vectors_),
      norms_(other.norms_),
      index_(other.index_) {}

EmbeddingTable& EmbeddingTable::operator=(const EmbeddingTable& other) {
    if (this != &other) {
        dim_ = other.dim_;
        words_ = other.words_;
        vectors_ = other.vectors_;
        norms_ = other.norms_;
        index_ = other.index_;
        std::lock_guard<std::mutex> lock(cache_mutex_);
        knn_cache_.clear();
    }
    return *this;
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        std::vector<double> vec;
        double v = 0.0;
        while (ls >> v) vec.push_back(v);
        if (vec.empty()) {
            throw std::runtime_error("embedding line " + std::to_string(line_no) +
                                     " has no components");
        }
        entries.emplace_back(std::move(word), std::move(vec));
    }
    return from_vectors(entries);
}

EmbeddingTable EmbeddingTable::from_vectors(
    const std::vector<std::pair<std::string, std::vector<double>>>& entries) {
    EmbeddingTable table;
    if (entries.empty()) return table;
    table.dim_ = entries.front().second.size();
    std::vector<std::pair<std::string, std::vector<double>>> sorted = entries;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [word, vec] : sorted) {
        if (vec.size() != table.dim_) {
            throw std::invalid_argument("embedding dimension mismatch for word: " + word);
        }
        double sq = 0.0;
        for (double v : vec) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("non-finite embedding component in word: " + word);
            }
            sq += v * v;
        }
        if (table.index_.count(word)) {
            throw std::invalid_argument("duplicate embedding entry: " + word);
        }
        table.index_.emplace(word, table.words_.size());
        table.words_.push_back(std::move(word));
        table.vectors_.push_back(std::move(vec));
        table.norms_.push_back(std::sqrt(sq));
    }
    return table;
}

bool EmbeddingTable::contains(const std::string& word) const {
    return index_.count(word) > 0;
}

const std::vector<double>* EmbeddingTable::vector_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? nullptr : &vectors_[it->second];
}

std::vector<std::string> EmbeddingTable::knn_words(const std::string& w,
                                                   std::size_t k) const {
    if (k == 0) throw std::invalid_argument("knn_words requires k >= 1");
    auto it = index_.find(w);
    if (it == index_.end()) return {};
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        auto cached = knn_cache_.find({w, k});
        if (cached != knn_cache_.end()) return cached->second;
    }
    const std::size_t self = it->second;
    const std::vector<double>& wv = vectors_[self];
    const double wn = norms_[self];
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
        if (i == self) continue;
        double dot = 0.0;
        const std::vector<double>& v = vectors_[i];
        for (std::size_t d = 0; d < dim_; ++d) dot += wv[d] * v[d];
        const double denom = wn * norms_[i];
        scored.emplace_back(denom > 0.0 ? dot / denom : 0.0, i);
    }
    const std::size_t take = std::min(k, scored.size());
    // Descending similarity; words_ is sorted, so index order is the
    // lexicographic tie-break.
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                      scored.end(), [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<std::string> result;
    result.reserve(take);
    for (std::size_t i = 0; i < take; ++i) result.push_back(words_[scored[i].second]);
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        knn_cache_.emplace(std::make_pair(w, k), result);
    }
    return result;
}

SynonymLexicon SynonymLexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synonym file: " + path);
    SynonymLexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("synonym line missing tab separator: " + line);
        }
        const std::string word = line.substr(0, tab);
        std::string rest = line.substr(tab + 1);
        std::string syn;
        std::istringstream rs(rest);
        while (std::getline(rs, syn, ',')) {
            // Trim surrounding spaces.
            const auto b = syn.find_first_not_of(" \t\r");
            const auto e = syn.find_last_not_of(" \t\r");
            if (b == std::string::npos) continue;
            lex.add(word, syn.substr(b, e - b + 1));
        }
    }
    return lex;
}

void SynonymLexicon::add(const std::string& word, const std::string& synonym) {
    if (word.empty() || synonym.empty() || word == synonym) return;
    table_[word].insert(synonym);
    table_[synonym].insert(word);
}

bool SynonymLexicon::are_synonyms(const std::string& a, const std::string& b) const {
    auto it = table_.find(a);
    return it != table_.end() && it->second.count(b) > 0;
}

const std::set<std::string>* SynonymLexicon::synonyms_of(const std::string& word) const {
    auto it = table_.find(word);
    return it == table_.end() ? nullptr : &it->second;
}

bool words_match(const std::string& w1, const std::string& w2,
                 const EmbeddingTable* embeddings, const SynonymLexicon* synonyms,
                 std::size_t k) {
    if (w1 == w2) return true;
    if (synonyms && synonyms->are_synonyms(w1, w2)) return true;
    if (embeddings && k > 0) {
        const auto n1 = embeddings->knn_words(w1, k);
        if (std::find(n1.begin(), n1.end(), w2) != n1.end()) return true;
        const auto n2 = embeddings->knn_words(w2, k);
        if (std::find(n2.begin(), n2.end(), w1) != n2.end()) return true;
    }
    return false;
}

std::size_t max_bipartite_matching(std::size_t n_left, std::size_t n_right,
                                   const std::vector<std::vector<std::size_t>>& adj) {
    if (adj.size() != n_left) {
        throw std::invalid_argument("adjacency size does not match n_left");
    }
    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> match_l(n_left, kNone), match_r(n_right, kNone);
    std::vector<std::size_t> dist(n_left);

    const auto bfs = [&]() {
        std::queue<std::size_t> q;
        bool reachable_free = false;
        for (std::size_t u = 0; u < n_left; ++u) {
            if (match_l[u] == kNone) {
                dist[u] = 0;
                q.push(u);
            } else {
                dist[u] = kNone;
            }
        }
        while (!q.empty()) {
            const std::size_t u = q.front();
            q.pop();
            for (std::size_t v : adj[u]) {
                const std::size_t w = match_r[v];
                if (w == kNone) {
                    reachable_free = true;
                } else if (dist[w] == kNone) {
                    dist[w] = dist[u] + 1;
                    q.push(w);
                }
            }
        }
        return reachable_free;
    };

    const std::function<bool(std::size_t)> dfs = [&](std::size_t u) {
        for (std::size_t v : adj[u]) {
            const std::size_t w = match_r[v];
            if (w == kNone || (dist[w] == dist[u] + 1 && dfs(w))) {
                match_l[u] = v;
                match_r[v] = u;
                return true;
            }
        }
        dist[u] = kNone;
        return false;
    };

    std::size_t matched = 0;
    while (bfs()) {
        for (std::size_t u = 0; u < n_left; ++u) {
            if (match_l[u] == kNone && dfs(u)) ++matched;
        }
    }
    return matched;
}

double extended_jaccard(const TokenSet& a, const TokenSet& b, const MatchFn& match) {
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    const std::vector<std::string> left(a.begin(), a.end());
    const std::vector<std::string> right(b.begin(), b.end());
    std::vector<std::vector<std::size_t>> adj(left.size());
    for (std::size_t i = 0; i < left.size(); ++i) {
        for (std::size_t j = 0; j < right.size(); ++j) {
            if (match(left[i], right[j])) adj[i].push_back(j);
        }
    }
    const std::size_t m = max_bipartite_matching(left.size(), right.size(), adj);
    return static_cast<double>(m) /
           static_cast<double>(left.size() + right.size() - m);
}

}  // namespace qfactor
