#include "qfactor/parsetree.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace qfactor {

namespace {

bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
}

void skip_ws(const std::string& s, std::size_t& i) {
    while (i < s.size() && is_ws(s[i])) ++i;
}

std::string read_atom(const std::string& s, std::size_t& i) {
    const std::size_t start = i;
    while (i < s.size() && !is_ws(s[i]) && s[i] != '(' && s[i] != ')') ++i;
    return s.substr(start, i - start);
}

ParseTree parse_node(const std::string& s, std::size_t& i) {
    // s[i] == '('; the label may be empty (anonymous wrappers are common).
    ++i;
    skip_ws(s, i);
    ParseTree node;
    node.label = read_atom(s, i);
    while (true) {
        skip_ws(s, i);
        if (i >= s.size()) throw TreeError("unclosed '('", s.size());
        if (s[i] == ')') {
            ++i;
            break;
        }
        if (s[i] == '(') {
            node.children.push_back(parse_node(s, i));
        } else {
            ParseTree leaf;
            leaf.label = read_atom(s, i);
            node.children.push_back(std::move(leaf));
        }
    }
    if (node.children.empty()) {
        throw TreeError("node \"" + node.label + "\" has no children", i);
    }
    return node;
}

}  // namespace

ParseTree parse_bracketed(const std::string& s) {
    std::size_t i = 0;
    skip_ws(s, i);
    if (i >= s.size()) throw TreeError("empty parse string", i);
    if (s[i] != '(') throw TreeError("expected '('", i);
    ParseTree t = parse_node(s, i);
    skip_ws(s, i);
    if (i != s.size()) throw TreeError("trailing characters", i);
    return t;
}

std::string serialize_tree(const ParseTree& t) {
    if (t.is_leaf()) return t.label;
    std::string out = "(" + t.label;
    for (const ParseTree& c : t.children) {
        out += ' ';
        out += serialize_tree(c);
    }
    out += ')';
    return out;
}

namespace {

void scan_tree(const ParseTree& node, int dist,
               const std::set<std::string>& vp_labels, int& max_leaf,
               int& vp_count, int& max_vp) {
    if (node.is_leaf()) {
        max_leaf = std::max(max_leaf, dist);
        return;
    }
    if (vp_labels.count(node.label)) {
        ++vp_count;
        max_vp = std::max(max_vp, dist);
    }
    for (const ParseTree& c : node.children) {
        scan_tree(c, dist + 1, vp_labels, max_leaf, vp_count, max_vp);
    }
}

}  // namespace

SentenceSyntax sentence_syntax(const ParseTree& t,
                               const std::set<std::string>& vp_labels) {
    int max_leaf = 0, vp_count = 0, max_vp = 0;
    scan_tree(t, 0, vp_labels, max_leaf, vp_count, max_vp);
    SentenceSyntax s;
    s.depth = std::max(max_leaf - 2, 0);
    s.vp_count = vp_count;
    s.max_vp_depth = std::min(max_vp, s.depth);
    s.vp_ratio = (s.depth > 0 && s.vp_count > 0)
                     ? static_cast<double>(s.max_vp_depth) / s.depth
                     : 0.0;
    return s;
}

std::unordered_map<std::string, std::vector<ParseTree>> load_parse_sidecar(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open parse sidecar: " + path);
    std::unordered_map<std::string, std::vector<ParseTree>> result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (std::all_of(line.begin(), line.end(),
                        [](unsigned char c) { return std::isspace(c); })) {
            continue;
        }
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("question_id") ||
            !j.contains("sentences")) {
            throw std::runtime_error("malformed sidecar line " +
                                     std::to_string(line_no));
        }
        const auto id = j.at("question_id").get<std::string>();
        std::vector<ParseTree> trees;
        for (const auto& js : j.at("sentences")) {
            trees.push_back(parse_bracketed(js.get<std::string>()));
        }
        result[id] = std::move(trees);
    }
    return result;
}

}  // namespace qfactor
