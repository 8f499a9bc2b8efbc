#pragma once

#include <cstddef>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace qfactor {

struct ParseTree {
    std::string label;  // nonterminal, or token text on leaves; may be empty
                        // on anonymous wrapper nodes like "( (S ...))"
    std::vector<ParseTree> children;

    bool is_leaf() const { return children.empty(); }
};

struct TreeError : std::runtime_error {
    TreeError(const std::string& msg, std::size_t at)
        : std::runtime_error(msg + " at offset " + std::to_string(at)),
          offset(at) {}
    std::size_t offset;
};

// Penn-style bracketed expression; round-trips through serialize_tree up to
// whitespace normalization. Unbalanced input reports the offending offset
// (end of input for an unclosed node).
ParseTree parse_bracketed(const std::string& s);
std::string serialize_tree(const ParseTree& t);

struct SentenceSyntax {
    int depth = 0;         // edges from the parse root to the deepest
                           // preterminal: leaf distance minus the root and
                           // token levels, floored at 0
    int vp_count = 0;
    int max_vp_depth = 0;  // edges from the parse root to the deepest node
                           // whose label is in vp_labels, capped at depth
    double vp_ratio = 0.0;  // max_vp_depth / depth, 0 unless both positive
};

SentenceSyntax sentence_syntax(const ParseTree& t,
                               const std::set<std::string>& vp_labels = {"VP"});

// Sidecar JSONL: {"question_id": str, "sentences": ["(ROOT ...)", ...]}.
// Questions absent from the sidecar simply have no trees.
std::unordered_map<std::string, std::vector<ParseTree>> load_parse_sidecar(
    const std::string& path);

}  // namespace qfactor
