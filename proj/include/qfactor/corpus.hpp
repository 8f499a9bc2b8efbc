#ifndef QFACTOR_CORPUS_HPP
#define QFACTOR_CORPUS_HPP

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfactor {

enum class Domain { Actor, Author, Politician, Director, Other };

const char* domain_name(Domain d);
// Unknown tags map to Domain::Other (the caller counts the warning).
std::optional<Domain> domain_from_name(const std::string& name);

struct Question {
    std::string id;
    std::string thread_id;
    std::string author;
    std::int64_t posted_at = 0;
    std::string text;
    bool answered = false;
    bool top_level = true;
};

struct Thread {
    std::string id;
    Domain domain = Domain::Other;
    std::string description;
    std::int64_t started_at = 0;
    std::int64_t ended_at = 0;
    std::vector<Question> questions;  // sorted by posted_at ascending
};

struct CorpusError : std::runtime_error {
    explicit CorpusError(const std::string& msg, std::size_t line = 0)
        : std::runtime_error(msg), line_number(line) {}
    std::size_t line_number;  // 1-based; 0 when not tied to a line
};

struct Corpus {
    std::vector<Thread> threads;
    std::size_t unknown_domain_warnings = 0;

    std::size_t question_count() const;
};

struct DomainCounts {
    std::size_t asked = 0;
    std::size_t replied = 0;
    // Percent, truncated at two decimals; 0 when nothing was asked.
    double response_rate() const;
};

struct CorpusStats {
    std::map<Domain, DomainCounts> per_domain;
    DomainCounts total;
};

// One JSON object per line; see the corpus format notes in the README.
// Questions are re-sorted by posted_at; duplicate question ids and malformed
// lines raise CorpusError with the offending line number.
Corpus parse_corpus(std::istream& in);
Corpus parse_corpus_file(const std::string& path);

// Keeps questions that are top-level, contain a question mark ('?' or the
// full-width '？'), and are not later than the last answered question among
// those. A thread with no answered question keeps zero questions.
Thread filter_questions(const Thread& thread);
Corpus filter_corpus(const Corpus& corpus);

bool has_question_mark(const std::string& text);

struct SplitRatios {
    double train = 0.6;
    double dev = 0.2;
    double test = 0.2;
};

struct CorpusSplit {
    // Question ids per part; every retained question lands in exactly one.
    std::vector<std::string> train;
    std::vector<std::string> dev;
    std::vector<std::string> test;
};

// Question-level partition, stratified per thread so each thread contributes
// proportionally to every part. Deterministic for a given seed.
CorpusSplit split_corpus(const std::vector<Thread>& threads,
                         const SplitRatios& ratios, std::uint64_t seed);

CorpusStats corpus_stats(const std::vector<Thread>& threads);

// Binary corpus container (CBOR) used by the CLI between stages.
std::string serialize_corpus(const Corpus& corpus);
Corpus deserialize_corpus(const std::string& bytes);

std::string stats_to_json(const CorpusStats& stats);

}  // namespace qfactor

#endif  // QFACTOR_CORPUS_HPP
