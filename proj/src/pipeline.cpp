#include "qfactor/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "qfactor/parsetree.hpp"
#include "qfactor/textsim.hpp"
#include "qfactor/util.hpp"

namespace qfactor {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kPipelineVersion = "1.0.0";

std::vector<std::string> group_names(const std::set<FeatureGroup>& groups) {
    std::vector<std::string> names;
    for (FeatureGroup g : groups) names.emplace_back(group_name(g));
    return names;
}

std::set<FeatureGroup> groups_from_names(const std::vector<std::string>& names) {
    std::set<FeatureGroup> groups;
    for (const auto& name : names) {
        auto g = group_from_name(name);
        if (!g) throw ValidationError("unknown feature group: " + name);
        groups.insert(*g);
    }
    return groups;
}

std::string combination_name(const std::vector<FeatureGroup>& combo) {
    std::vector<std::string> names;
    for (FeatureGroup g : combo) names.emplace_back(group_name(g));
    return join_strings(names, "+");
}

// Artifacts are staged as .partial files and renamed only when the whole
// stage has produced its outputs, so a failed stage leaves .partial files
// behind instead of half-written artifacts.
class StagedWrites {
public:
    void add(const std::string& path, const std::string& content) {
        write_file(path + ".partial", content);
        staged_.push_back(path);
    }
    // Registers a path whose .partial file a writer produced directly.
    void stage(const std::string& path) { staged_.push_back(path); }
    void commit() {
        for (const auto& path : staged_) {
            fs::rename(path + ".partial", path);
        }
        staged_.clear();
    }

private:
    std::vector<std::string> staged_;
};

std::string hash_file(const std::string& path) {
    return hex64(fnv1a64(read_file(path)));
}

std::string truncate_utf8(const std::string& text, std::size_t limit) {
    if (text.size() <= limit) return text;
    std::size_t end = limit;
    // Do not cut a multi-byte sequence in half.
    while (end > 0 && (static_cast<unsigned char>(text[end]) & 0xC0) == 0x80) {
        --end;
    }
    return text.substr(0, end) + "...";
}

struct QuestionRef {
    const Question* question = nullptr;
    const Thread* thread = nullptr;
};

std::unordered_map<std::string, QuestionRef> index_questions(const Corpus& corpus) {
    std::unordered_map<std::string, QuestionRef> index;
    for (const Thread& t : corpus.threads) {
        for (const Question& q : t.questions) index[q.id] = {&q, &t};
    }
    return index;
}

}  // namespace

PipelineConfig config_from_json(const json& j) {
    PipelineConfig c;
    const auto str = [&](const char* key, std::string& out) {
        if (j.contains(key)) out = j.at(key).get<std::string>();
    };
    str("corpus", c.corpus_path);
    str("stopwords", c.stopwords_path);
    str("greetings", c.greetings_path);
    str("apologies", c.apologies_path);
    str("hedges", c.hedges_path);
    str("embeddings", c.embeddings_path);
    str("synsets", c.synsets_path);
    str("parses", c.parses_path);
    str("out_dir", c.out_dir);
    if (j.contains("feature_groups")) {
        c.feature_groups =
            groups_from_names(j.at("feature_groups").get<std::vector<std::string>>());
    }
    if (j.contains("eval_combinations")) {
        c.eval_combinations.clear();
        for (const auto& combo : j.at("eval_combinations")) {
            const auto set =
                groups_from_names(combo.get<std::vector<std::string>>());
            c.eval_combinations.emplace_back(set.begin(), set.end());
        }
    }
    if (j.contains("run_factorization")) {
        c.run_factorization = j.at("run_factorization").get<bool>();
    }
    if (j.contains("knn_k")) c.knn_k = j.at("knn_k").get<std::size_t>();
    if (j.contains("use_thread_end")) {
        c.use_thread_end = j.at("use_thread_end").get<bool>();
    }
    if (j.contains("vp_labels")) {
        const auto labels = j.at("vp_labels").get<std::vector<std::string>>();
        c.vp_labels = {labels.begin(), labels.end()};
    }
    if (j.contains("ratios")) {
        const auto& r = j.at("ratios");
        c.ratios.train = r.at("train").get<double>();
        c.ratios.dev = r.at("dev").get<double>();
        c.ratios.test = r.at("test").get<double>();
    }
    if (j.contains("nnse_k")) c.nnse_k = j.at("nnse_k").get<std::size_t>();
    if (j.contains("lambda1")) c.lambda1 = j.at("lambda1").get<double>();
    if (j.contains("nnse_tol")) c.nnse_tol = j.at("nnse_tol").get<double>();
    if (j.contains("nnse_max_iters")) {
        c.nnse_max_iters = j.at("nnse_max_iters").get<std::size_t>();
    }
    if (j.contains("svd_rank_max")) {
        c.svd_rank_max = j.at("svd_rank_max").get<std::size_t>();
    }
    if (j.contains("membership_threshold")) {
        c.membership_threshold = j.at("membership_threshold").get<double>();
    }
    if (j.contains("factor_top_m")) {
        c.factor_top_m = j.at("factor_top_m").get<std::size_t>();
    }
    if (j.contains("ngram_min")) c.ngram_min = j.at("ngram_min").get<int>();
    if (j.contains("ngram_max")) c.ngram_max = j.at("ngram_max").get<int>();
    if (j.contains("ap_trials")) c.ap_trials = j.at("ap_trials").get<std::size_t>();
    if (j.contains("grid")) {
        c.grid.clear();
        for (const auto& cell : j.at("grid")) {
            c.grid.emplace_back(cell.at(0).get<double>(), cell.at(1).get<double>());
        }
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ValidationError("config file is not valid JSON: " + path);
    }
    return config_from_json(j);
}

json config_to_json(const PipelineConfig& c) {
    // out_dir is deliberately omitted: the same inputs and seed must hash
    // identically no matter where the artifacts land.
    json combos = json::array();
    for (const auto& combo : c.eval_combinations) {
        json names = json::array();
        for (FeatureGroup g : combo) names.push_back(group_name(g));
        combos.push_back(std::move(names));
    }
    json grid = json::array();
    for (const auto& [l1, l2] : c.grid) grid.push_back({l1, l2});
    return json{{"corpus", c.corpus_path},
                {"stopwords", c.stopwords_path},
                {"greetings", c.greetings_path},
                {"apologies", c.apologies_path},
                {"hedges", c.hedges_path},
                {"embeddings", c.embeddings_path},
                {"synsets", c.synsets_path},
                {"parses", c.parses_path},
                {"feature_groups", group_names(c.feature_groups)},
                {"eval_combinations", std::move(combos)},
                {"run_factorization", c.run_factorization},
                {"knn_k", c.knn_k},
                {"use_thread_end", c.use_thread_end},
                {"vp_labels", std::vector<std::string>(c.vp_labels.begin(),
                                                       c.vp_labels.end())},
                {"ratios",
                 {{"train", c.ratios.train},
                  {"dev", c.ratios.dev},
                  {"test", c.ratios.test}}},
                {"nnse_k", c.nnse_k},
                {"lambda1", c.lambda1},
                {"nnse_tol", c.nnse_tol},
                {"nnse_max_iters", c.nnse_max_iters},
                {"svd_rank_max", c.svd_rank_max},
                {"membership_threshold", c.membership_threshold},
                {"factor_top_m", c.factor_top_m},
                {"ngram_min", c.ngram_min},
                {"ngram_max", c.ngram_max},
                {"ap_trials", c.ap_trials},
                {"grid", std::move(grid)},
                {"seed", c.seed}};
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {}

std::string Pipeline::artifact_path(const std::string& name) const {
    return (fs::path(config_.out_dir) / name).string();
}

void Pipeline::validate_inputs() const {
    const auto require = [](const std::string& path, const char* what) {
        if (path.empty()) {
            throw ValidationError(std::string("missing required path: ") + what);
        }
        if (!file_exists(path)) {
            throw ValidationError(std::string(what) + " file not found: " + path);
        }
    };
    require(config_.corpus_path, "corpus");
    require(config_.stopwords_path, "stopwords");
    if (config_.feature_groups.count(FeatureGroup::Politeness)) {
        require(config_.greetings_path, "greetings lexicon");
        require(config_.apologies_path, "apologies lexicon");
        require(config_.hedges_path, "hedges lexicon");
    }
    for (const auto& [path, what] :
         {std::pair<const std::string&, const char*>{config_.embeddings_path,
                                                     "embeddings"},
          {config_.synsets_path, "synsets"},
          {config_.parses_path, "parse sidecar"}}) {
        if (!path.empty() && !file_exists(path)) {
            throw ValidationError(std::string(what) + " file not found: " + path);
        }
    }
    for (double p : {config_.ratios.train, config_.ratios.dev, config_.ratios.test}) {
        if (!(p > 0.0 && p < 1.0)) {
            throw ValidationError("split ratios must each lie in (0,1)");
        }
    }
    if (std::abs(config_.ratios.train + config_.ratios.dev + config_.ratios.test -
                 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1");
    }
    if (config_.knn_k == 0) throw ValidationError("knn_k must be >= 1");
    if (config_.nnse_k == 0) throw ValidationError("nnse_k must be >= 1");
    if (config_.lambda1 <= 0.0) throw ValidationError("lambda1 must be positive");
    if (config_.ngram_min < 1 || config_.ngram_max < config_.ngram_min) {
        throw ValidationError("ngram range is invalid");
    }
    if (config_.ap_trials == 0) throw ValidationError("ap_trials must be >= 1");
    for (const auto& combo : config_.eval_combinations) {
        if (combo.empty()) {
            throw ValidationError("eval combination must name at least one group");
        }
        for (FeatureGroup g : combo) {
            if (!config_.feature_groups.count(g)) {
                throw ValidationError(
                    std::string("eval combination uses disabled group: ") +
                    group_name(g));
            }
        }
    }
}

json Pipeline::ingest() {
    fs::create_directories(config_.out_dir);
    const Corpus raw = parse_corpus_file(config_.corpus_path);
    const Corpus filtered = filter_corpus(raw);
    const CorpusStats stats = corpus_stats(filtered.threads);
    StagedWrites writes;
    writes.add(artifact_path("corpus.bin"), serialize_corpus(filtered));
    writes.add(artifact_path("stats.json"), stats_to_json(stats));
    writes.commit();
    return json{{"questions", filtered.question_count()},
                {"threads", filtered.threads.size()},
                {"unknown_domain_warnings", filtered.unknown_domain_warnings}};
}

std::vector<std::vector<FeatureGroup>> Pipeline::combinations() const {
    if (!config_.eval_combinations.empty()) return config_.eval_combinations;
    std::vector<std::vector<FeatureGroup>> combos;
    std::vector<FeatureGroup> dense;
    for (FeatureGroup g : config_.feature_groups) {
        if (g != FeatureGroup::Unigram) dense.push_back(g);
    }
    for (FeatureGroup g : dense) combos.push_back({g});
    if (dense.size() > 1) combos.push_back(dense);
    return combos;
}

json Pipeline::featurize() {
    const Corpus corpus =
        deserialize_corpus(read_file(artifact_path("corpus.bin")));
    const StopwordSet stopwords = load_stopwords(config_.stopwords_path);

    PolitenessLexicons politeness;
    const bool want_politeness =
        config_.feature_groups.count(FeatureGroup::Politeness) > 0;
    if (want_politeness) {
        politeness = PolitenessLexicons::load(
            config_.greetings_path, config_.apologies_path, config_.hedges_path);
    }
    EmbeddingTable embeddings;
    if (!config_.embeddings_path.empty()) {
        embeddings = EmbeddingTable::load(config_.embeddings_path);
    }
    SynonymLexicon synonyms;
    if (!config_.synsets_path.empty()) {
        synonyms = SynonymLexicon::load(config_.synsets_path);
    }
    std::unordered_map<std::string, std::vector<ParseTree>> parses;
    if (!config_.parses_path.empty()) {
        parses = load_parse_sidecar(config_.parses_path);
    }

    const CorpusSplit split =
        split_corpus(corpus.threads, config_.ratios, config_.seed);
    const std::unordered_set<std::string> train_ids(split.train.begin(),
                                                    split.train.end());
    const std::unordered_set<std::string> dev_ids(split.dev.begin(),
                                                  split.dev.end());

    std::vector<std::string> vocabulary;
    if (config_.feature_groups.count(FeatureGroup::Unigram)) {
        std::vector<const Question*> train_questions;
        for (const Thread& t : corpus.threads) {
            for (const Question& q : t.questions) {
                if (train_ids.count(q.id)) train_questions.push_back(&q);
            }
        }
        vocabulary = build_vocabulary(train_questions);
    }

    FeatureConfig fconfig;
    fconfig.groups = config_.feature_groups;
    fconfig.knn_k = config_.knn_k;
    fconfig.use_thread_end = config_.use_thread_end;
    fconfig.vp_labels = config_.vp_labels;
    const FeatureExtractor extractor(
        fconfig, &stopwords, want_politeness ? &politeness : nullptr,
        config_.embeddings_path.empty() ? nullptr : &embeddings,
        config_.synsets_path.empty() ? nullptr : &synonyms,
        config_.parses_path.empty() ? nullptr : &parses, vocabulary);

    std::vector<FeatureVector> train_rows, dev_rows, test_rows;
    for (const Thread& t : corpus.threads) {
        for (const Question& q : t.questions) {
            FeatureVector fv = extractor.assemble(q, t);
            if (train_ids.count(q.id)) {
                train_rows.push_back(std::move(fv));
            } else if (dev_ids.count(q.id)) {
                dev_rows.push_back(std::move(fv));
            } else {
                test_rows.push_back(std::move(fv));
            }
        }
    }

    const json split_json{{"train", split.train},
                          {"dev", split.dev},
                          {"test", split.test}};
    StagedWrites writes;
    writes.add(artifact_path("split.json"), split_json.dump(2) + "\n");

    const auto stage_csv = [&](const char* name,
                               const std::vector<FeatureVector>& rows) {
        const std::string path = artifact_path(name);
        write_feature_csv(path + ".partial", extractor.schema(), rows);
        writes.stage(path);
    };
    const auto stage_sidecar = [&](const char* name,
                                   const std::vector<FeatureVector>& rows) {
        const std::string path = artifact_path(name);
        write_unigram_sidecar(path + ".partial", rows);
        writes.stage(path);
    };
    stage_csv("features_train.csv", train_rows);
    stage_csv("features_dev.csv", dev_rows);
    stage_csv("features_test.csv", test_rows);
    if (config_.feature_groups.count(FeatureGroup::Unigram)) {
        writes.add(artifact_path("vocabulary.txt"),
                   join_strings(vocabulary, "\n") + (vocabulary.empty() ? "" : "\n"));
        stage_sidecar("unigrams_train.csv", train_rows);
        stage_sidecar("unigrams_dev.csv", dev_rows);
        stage_sidecar("unigrams_test.csv", test_rows);
    }
    writes.commit();
    return json{{"train_rows", train_rows.size()},
                {"dev_rows", dev_rows.size()},
                {"test_rows", test_rows.size()},
                {"dense_features", extractor.schema().dense_arity()},
                {"vocabulary_size", vocabulary.size()}};
}

json Pipeline::factorize() {
    const Corpus corpus =
        deserialize_corpus(read_file(artifact_path("corpus.bin")));
    std::vector<const Question*> questions;
    for (const Thread& t : corpus.threads) {
        for (const Question& q : t.questions) questions.push_back(&q);
    }
    SynonymLexicon synsets;
    const bool with_synsets = !config_.synsets_path.empty();
    if (with_synsets) synsets = SynonymLexicon::load(config_.synsets_path);

    const auto vocab =
        build_cooccurrence_vocab(questions, with_synsets ? &synsets : nullptr);
    const CooccurrenceResult cooc =
        build_cooccurrence(questions, vocab, with_synsets ? &synsets : nullptr);

    const std::size_t limit =
        std::min(cooc.matrix.n_rows, cooc.matrix.n_cols);
    if (limit < 3) {
        throw std::runtime_error("corpus too small for rank selection");
    }
    const std::size_t r_max = std::min(config_.svd_rank_max, limit);
    SvdOptions svd_opts;
    svd_opts.seed = config_.seed;
    const SvdResult svd = truncated_svd(cooc.matrix, r_max, svd_opts);
    std::vector<double> spectrum(svd.s.data(), svd.s.data() + svd.s.size());
    const std::size_t rank = knee_rank(spectrum, r_max);

    const Eigen::MatrixXd xr =
        svd.u.leftCols(static_cast<Eigen::Index>(rank)) *
        svd.s.head(static_cast<Eigen::Index>(rank)).asDiagonal();
    NnseOptions nnse_opts;
    nnse_opts.tol = config_.nnse_tol;
    nnse_opts.max_iters = config_.nnse_max_iters;
    nnse_opts.seed = config_.seed;
    FactorModelFile file;
    file.model = nnse_fit(xr, config_.nnse_k, config_.lambda1, nnse_opts);
    for (const Question* q : questions) file.question_ids.push_back(q->id);
    file.vocabulary = vocab;
    file.svd_v = svd.v.leftCols(static_cast<Eigen::Index>(rank));
    file.svd_s.assign(spectrum.begin(), spectrum.begin() + static_cast<long>(rank));

    const json info{{"base_entries", cooc.base_entries},
                    {"extended_entries", cooc.extended_entries},
                    {"inflation_factor", cooc.inflation_factor},
                    {"inflation_factor_2dp", floor2(cooc.inflation_factor)},
                    {"vocabulary_size", vocab.size()},
                    {"singular_values", spectrum},
                    {"rank", rank},
                    {"nnse_iterations", file.model.iterations},
                    {"nnse_converged", file.model.converged},
                    {"objective_first", file.model.objective_trace.front()},
                    {"objective_last", file.model.objective_trace.back()}};
    StagedWrites writes;
    writes.add(artifact_path("model.nnse"), serialize_model(file));
    writes.add(artifact_path("factorization.json"), info.dump(2) + "\n");
    writes.commit();
    return info;
}

namespace {

struct LoadedFeatures {
    std::vector<std::string> header;  // dense names, CSV order
    std::vector<FeatureGroup> header_groups;
    std::vector<FeatureVector> rows;
};

LoadedFeatures load_features(const std::string& csv_path) {
    FeatureTable table = read_feature_csv(csv_path);
    LoadedFeatures out;
    for (const auto& [name, group] : table.schema.dense) {
        out.header.push_back(name);
        out.header_groups.push_back(group);
    }
    out.rows = std::move(table.rows);
    return out;
}

// Column selection for a combination: dense columns whose group is enabled
// plus, when the combination includes unigrams, one densified column per
// vocabulary word (named "unigram.<word>").
std::vector<std::string> combo_feature_names(
    const LoadedFeatures& features, const std::vector<FeatureGroup>& combo,
    const std::vector<std::string>& vocabulary) {
    const std::set<FeatureGroup> wanted(combo.begin(), combo.end());
    std::vector<std::string> names;
    for (std::size_t i = 0; i < features.header.size(); ++i) {
        if (wanted.count(features.header_groups[i])) {
            names.push_back(features.header[i]);
        }
    }
    if (wanted.count(FeatureGroup::Unigram)) {
        for (const auto& word : vocabulary) names.push_back("unigram." + word);
    }
    return names;
}

Eigen::MatrixXd build_matrix(
    const LoadedFeatures& features, const std::vector<std::string>& names,
    const std::unordered_map<std::string, std::map<std::size_t, double>>* unigrams,
    const std::vector<std::string>& vocabulary) {
    std::unordered_map<std::string, std::size_t> dense_index;
    for (std::size_t i = 0; i < features.header.size(); ++i) {
        dense_index.emplace(features.header[i], i);
    }
    std::unordered_map<std::string, std::size_t> vocab_index;
    for (std::size_t i = 0; i < vocabulary.size(); ++i) {
        vocab_index.emplace(vocabulary[i], i);
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(features.rows.size()),
                      static_cast<Eigen::Index>(names.size()));
    for (std::size_t r = 0; r < features.rows.size(); ++r) {
        const FeatureVector& row = features.rows[r];
        for (std::size_t c = 0; c < names.size(); ++c) {
            const std::string& name = names[c];
            double value = 0.0;
            if (auto it = dense_index.find(name); it != dense_index.end()) {
                value = row.dense[it->second];
            } else if (name.rfind("unigram.", 0) == 0) {
                if (!unigrams) {
                    throw std::runtime_error(
                        "unigram features requested but no sidecar loaded");
                }
                const std::string word = name.substr(8);
                const auto wit = vocab_index.find(word);
                if (wit == vocab_index.end()) {
                    throw std::runtime_error("word missing from vocabulary: " + word);
                }
                if (auto uit = unigrams->find(row.question_id);
                    uit != unigrams->end()) {
                    if (auto cit = uit->second.find(wit->second);
                        cit != uit->second.end()) {
                        value = cit->second;
                    }
                }
            } else {
                throw std::runtime_error("unknown feature column: " + name);
            }
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = value;
        }
    }
    return x;
}

std::vector<int> labels_of(const LoadedFeatures& features) {
    std::vector<int> y;
    y.reserve(features.rows.size());
    for (const auto& row : features.rows) y.push_back(row.label ? 1 : 0);
    return y;
}

std::vector<std::string> load_vocabulary_file(const std::string& path) {
    if (!file_exists(path)) return {};
    std::vector<std::string> vocab;
    for (const auto& line : split_string(read_file(path), '\n')) {
        if (!line.empty()) vocab.push_back(line);
    }
    return vocab;
}

}  // namespace

json Pipeline::train() {
    const LoadedFeatures train_features =
        load_features(artifact_path("features_train.csv"));
    const LoadedFeatures dev_features =
        load_features(artifact_path("features_dev.csv"));
    const auto combos = combinations();
    const bool any_unigram = std::any_of(
        combos.begin(), combos.end(), [](const auto& combo) {
            return std::find(combo.begin(), combo.end(), FeatureGroup::Unigram) !=
                   combo.end();
        });
    std::vector<std::string> vocabulary;
    std::unordered_map<std::string, std::map<std::size_t, double>> train_unigrams,
        dev_unigrams;
    if (any_unigram) {
        vocabulary = load_vocabulary_file(artifact_path("vocabulary.txt"));
        train_unigrams = read_unigram_sidecar(artifact_path("unigrams_train.csv"));
        dev_unigrams = read_unigram_sidecar(artifact_path("unigrams_dev.csv"));
    }
    const std::vector<int> train_y = labels_of(train_features);
    const std::vector<int> dev_y = labels_of(dev_features);
    const auto grid = config_.grid.empty() ? default_grid() : config_.grid;

    json models = json::array();
    for (const auto& combo : combos) {
        const auto names = combo_feature_names(train_features, combo, vocabulary);
        const Eigen::MatrixXd x_train = build_matrix(
            train_features, names, any_unigram ? &train_unigrams : nullptr,
            vocabulary);
        const Eigen::MatrixXd x_dev = build_matrix(
            dev_features, names, any_unigram ? &dev_unigrams : nullptr, vocabulary);
        const auto [l1, l2] = grid_search(x_train, train_y, x_dev, dev_y, grid);
        const ElasticNetModel fitted = qfactor::train(x_train, train_y, l1, l2);
        const double dev_auc = roc_auc(decision_scores(fitted, x_dev), dev_y);
        models.push_back(json{{"combination", combination_name(combo)},
                              {"groups", [&combo] {
                                   json names = json::array();
                                   for (FeatureGroup g : combo) {
                                       names.push_back(group_name(g));
                                   }
                                   return names;
                               }()},
                              {"feature_names", names},
                              {"l1", l1},
                              {"l2", l2},
                              {"dev_auc", dev_auc},
                              {"weights", fitted.weights},
                              {"bias", fitted.bias},
                              {"mean", fitted.mean},
                              {"stddev", fitted.stddev},
                              {"dropped", fitted.dropped},
                              {"iterations", fitted.iterations},
                              {"converged", fitted.converged}});
    }
    const json out{{"format", "qfactor-models-v1"}, {"models", std::move(models)}};
    StagedWrites writes;
    writes.add(artifact_path("models.json"), out.dump(2) + "\n");
    writes.commit();
    return json{{"model_count", out.at("models").size()}};
}

json Pipeline::evaluate() {
    const json models_file =
        json::parse(read_file(artifact_path("models.json")));
    const LoadedFeatures test_features =
        load_features(artifact_path("features_test.csv"));
    const Corpus corpus =
        deserialize_corpus(read_file(artifact_path("corpus.bin")));
    const auto question_index = index_questions(corpus);
    const std::vector<int> test_y = labels_of(test_features);

    std::vector<std::string> vocabulary =
        load_vocabulary_file(artifact_path("vocabulary.txt"));
    std::unordered_map<std::string, std::map<std::size_t, double>> test_unigrams;
    if (file_exists(artifact_path("unigrams_test.csv"))) {
        test_unigrams = read_unigram_sidecar(artifact_path("unigrams_test.csv"));
    }

    json combinations_json = json::array();
    for (const auto& jmodel : models_file.at("models")) {
        ElasticNetModel model;
        model.weights = jmodel.at("weights").get<std::vector<double>>();
        model.bias = jmodel.at("bias").get<double>();
        model.l1 = jmodel.at("l1").get<double>();
        model.l2 = jmodel.at("l2").get<double>();
        model.mean = jmodel.at("mean").get<std::vector<double>>();
        model.stddev = jmodel.at("stddev").get<std::vector<double>>();
        model.dropped = jmodel.at("dropped").get<std::vector<bool>>();
        const auto names =
            jmodel.at("feature_names").get<std::vector<std::string>>();
        const Eigen::MatrixXd x = build_matrix(
            test_features, names,
            test_unigrams.empty() ? nullptr : &test_unigrams, vocabulary);
        const std::vector<double> scores = decision_scores(model, x);

        const double auc = roc_auc(scores, test_y);
        std::vector<std::size_t> order(scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) {
                             return scores[a] > scores[b];
                         });
        std::vector<int> ranked;
        ranked.reserve(order.size());
        for (std::size_t i : order) ranked.push_back(test_y[i]);
        const double ap = average_precision(ranked);
        const double gain = ap_gain(scores, test_y, config_.ap_trials, config_.seed);

        std::size_t n_pos = 0, n_neg = 0;
        for (int v : test_y) (v != 0 ? n_pos : n_neg) += 1;

        // Per-domain AUC over test questions; a domain needs both classes.
        std::map<std::string, std::pair<std::vector<double>, std::vector<int>>>
            by_domain;
        for (std::size_t i = 0; i < test_features.rows.size(); ++i) {
            const auto it = question_index.find(test_features.rows[i].question_id);
            if (it == question_index.end()) continue;
            auto& bucket = by_domain[domain_name(it->second.thread->domain)];
            bucket.first.push_back(scores[i]);
            bucket.second.push_back(test_y[i]);
        }
        json domain_auc = json::object();
        double auc_sum = 0.0;
        std::size_t auc_count = 0;
        for (const auto& [domain, bucket] : by_domain) {
            const bool has_pos =
                std::any_of(bucket.second.begin(), bucket.second.end(),
                            [](int v) { return v != 0; });
            const bool has_neg =
                std::any_of(bucket.second.begin(), bucket.second.end(),
                            [](int v) { return v == 0; });
            if (!has_pos || !has_neg) continue;
            const double d_auc = roc_auc(bucket.first, bucket.second);
            domain_auc[domain] = d_auc;
            auc_sum += d_auc;
            ++auc_count;
        }
        combinations_json.push_back(
            json{{"combination", jmodel.at("combination")},
                 {"groups", jmodel.at("groups")},
                 {"auc", auc},
                 {"ap", ap},
                 {"ap_gain_pct", gain},
                 {"n_pos", n_pos},
                 {"n_neg", n_neg},
                 {"dev_auc", jmodel.at("dev_auc")},
                 {"l1", jmodel.at("l1")},
                 {"l2", jmodel.at("l2")},
                 {"domain_auc", std::move(domain_auc)},
                 {"average_auc", auc_count ? auc_sum / double(auc_count) : 0.0}});
    }
    const json report{{"format", "qfactor-eval-v1"},
                      {"combinations", std::move(combinations_json)}};
    StagedWrites writes;
    writes.add(artifact_path("report.json"), report.dump(2) + "\n");
    writes.commit();
    return json{{"combinations", report.at("combinations").size()}};
}

json Pipeline::factors() {
    const FactorModelFile file =
        deserialize_model(read_file(artifact_path("model.nnse")));
    const Corpus corpus =
        deserialize_corpus(read_file(artifact_path("corpus.bin")));
    const StopwordSet stopwords = load_stopwords(config_.stopwords_path);

    std::vector<const Question*> questions;
    for (const Thread& t : corpus.threads) {
        for (const Question& q : t.questions) questions.push_back(&q);
    }
    if (questions.size() != file.question_ids.size()) {
        throw std::runtime_error("model was fitted on a different corpus");
    }
    std::unordered_map<std::string, const Question*> by_id;
    for (const Question* q : questions) by_id[q->id] = q;
    std::vector<const Question*> ordered;
    for (const auto& id : file.question_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::runtime_error("model question missing from corpus: " + id);
        }
        ordered.push_back(it->second);
    }

    json reports = json::array();
    for (std::size_t j = 0; j < file.model.k; ++j) {
        const FactorReport r = factor_report(
            file.model, ordered, j, config_.membership_threshold,
            config_.factor_top_m, {config_.ngram_min, config_.ngram_max},
            stopwords);
        json top = json::array();
        for (const auto& [id, weight] : r.top_questions) {
            top.push_back(json{{"id", id},
                               {"weight", weight},
                               {"text", truncate_utf8(by_id.at(id)->text, 200)}});
        }
        json ngrams = json::array();
        for (const auto& [gram, count] : r.frequent_ngrams) {
            ngrams.push_back(json{{"ngram", gram}, {"count", count}});
        }
        json entry{{"factor", r.factor},
                   {"member_count", r.member_count},
                   {"answered_count", r.answered_count},
                   {"top_questions", std::move(top)},
                   {"frequent_ngrams", std::move(ngrams)}};
        entry["response_rate"] =
            r.response_rate ? json(*r.response_rate) : json(nullptr);
        reports.push_back(std::move(entry));
    }
    const json out{{"format", "qfactor-factors-v1"},
                   {"reports", std::move(reports)}};
    StagedWrites writes;
    writes.add(artifact_path("factor_reports.json"), out.dump(2) + "\n");
    writes.commit();
    return json{{"factor_count", file.model.k}};
}

json Pipeline::report() {
    const json eval = json::parse(read_file(artifact_path("report.json")));
    json factors_json = json::object();
    if (file_exists(artifact_path("factor_reports.json"))) {
        factors_json = json::parse(read_file(artifact_path("factor_reports.json")));
    }
    StagedWrites writes;
    writes.add(artifact_path("report.md"), report_tables(eval, factors_json));
    writes.commit();
    return json{{"written", "report.md"}};
}

json Pipeline::stage_params(const std::string& stage) const {
    const json cfg = config_to_json(config_);
    json p = json::object();
    if (stage == "ingest") {
        p["corpus"] = cfg.at("corpus");
    } else if (stage == "featurize") {
        for (const char* key : {"feature_groups", "knn_k", "use_thread_end",
                                "vp_labels", "ratios", "seed", "stopwords",
                                "greetings", "apologies", "hedges", "embeddings",
                                "synsets", "parses"}) {
            p[key] = cfg.at(key);
        }
    } else if (stage == "factorize") {
        for (const char* key : {"nnse_k", "lambda1", "nnse_tol", "nnse_max_iters",
                                "svd_rank_max", "seed", "synsets"}) {
            p[key] = cfg.at(key);
        }
    } else if (stage == "train") {
        for (const char* key : {"eval_combinations", "feature_groups", "grid"}) {
            p[key] = cfg.at(key);
        }
    } else if (stage == "evaluate") {
        p["ap_trials"] = cfg.at("ap_trials");
        p["seed"] = cfg.at("seed");
    } else if (stage == "factors") {
        for (const char* key : {"membership_threshold", "factor_top_m",
                                "ngram_min", "ngram_max", "stopwords"}) {
            p[key] = cfg.at(key);
        }
    }
    return p;
}

std::map<std::string, std::string> Pipeline::stage_input_paths(
    const std::string& stage) const {
    std::map<std::string, std::string> inputs;
    const auto opt = [&](const char* name, const std::string& path) {
        if (!path.empty()) inputs[name] = path;
    };
    if (stage == "ingest") {
        inputs["corpus"] = config_.corpus_path;
    } else if (stage == "featurize") {
        inputs["corpus.bin"] = artifact_path("corpus.bin");
        inputs["stopwords"] = config_.stopwords_path;
        if (config_.feature_groups.count(FeatureGroup::Politeness)) {
            inputs["greetings"] = config_.greetings_path;
            inputs["apologies"] = config_.apologies_path;
            inputs["hedges"] = config_.hedges_path;
        }
        opt("embeddings", config_.embeddings_path);
        opt("synsets", config_.synsets_path);
        opt("parses", config_.parses_path);
    } else if (stage == "factorize") {
        inputs["corpus.bin"] = artifact_path("corpus.bin");
        opt("synsets", config_.synsets_path);
    } else if (stage == "train") {
        inputs["features_train.csv"] = artifact_path("features_train.csv");
        inputs["features_dev.csv"] = artifact_path("features_dev.csv");
        if (file_exists(artifact_path("vocabulary.txt"))) {
            inputs["vocabulary.txt"] = artifact_path("vocabulary.txt");
        }
    } else if (stage == "evaluate") {
        inputs["models.json"] = artifact_path("models.json");
        inputs["features_test.csv"] = artifact_path("features_test.csv");
        inputs["corpus.bin"] = artifact_path("corpus.bin");
    } else if (stage == "factors") {
        inputs["model.nnse"] = artifact_path("model.nnse");
        inputs["corpus.bin"] = artifact_path("corpus.bin");
        inputs["stopwords"] = config_.stopwords_path;
    } else if (stage == "report") {
        inputs["report.json"] = artifact_path("report.json");
        if (file_exists(artifact_path("factor_reports.json"))) {
            inputs["factor_reports.json"] = artifact_path("factor_reports.json");
        }
    }
    return inputs;
}

json Pipeline::run_stage(const std::string& stage) {
    if (stage == "ingest") return ingest();
    if (stage == "featurize") return featurize();
    if (stage == "factorize") return factorize();
    if (stage == "train") return train();
    if (stage == "evaluate") return evaluate();
    if (stage == "factors") return factors();
    if (stage == "report") return report();
    throw std::logic_error("unknown stage: " + stage);
}

void Pipeline::run() {
    validate_inputs();
    fs::create_directories(config_.out_dir);

    json previous = json::object();
    const std::string manifest_path = artifact_path("manifest.json");
    if (file_exists(manifest_path)) {
        previous = json::parse(read_file(manifest_path), nullptr, false);
        if (previous.is_discarded()) previous = json::object();
    }

    static const std::map<std::string, std::vector<std::string>> kOutputs = {
        {"ingest", {"corpus.bin", "stats.json"}},
        {"featurize",
         {"split.json", "features_train.csv", "features_dev.csv",
          "features_test.csv"}},
        {"factorize", {"model.nnse", "factorization.json"}},
        {"train", {"models.json"}},
        {"evaluate", {"report.json"}},
        {"factors", {"factor_reports.json"}},
        {"report", {"report.md"}}};

    std::vector<std::string> stages = {"ingest", "featurize"};
    if (config_.run_factorization) stages.push_back("factorize");
    stages.push_back("train");
    stages.push_back("evaluate");
    if (config_.run_factorization) stages.push_back("factors");
    stages.push_back("report");

    json manifest_stages = json::object();
    for (const std::string& stage : stages) {
        json inputs = json::object();
        for (const auto& [name, path] : stage_input_paths(stage)) {
            if (!file_exists(path)) {
                // Produced by an earlier stage in this run; hash below after
                // the cache decision forces a rerun.
                inputs[name] = json(nullptr);
            } else {
                inputs[name] = hash_file(path);
            }
        }
        const json params = stage_params(stage);
        const std::string params_hash = hex64(fnv1a64(params.dump()));

        bool cached = false;
        if (previous.contains("stages") && previous.at("stages").contains(stage)) {
            const json& prev = previous.at("stages").at(stage);
            cached = prev.value("params_hash", "") == params_hash &&
                     prev.value("inputs", json::object()) == inputs;
            if (cached) {
                const json prev_outputs = prev.value("outputs", json::object());
                for (const auto& [name, hash] : prev_outputs.items()) {
                    const std::string path = artifact_path(name);
                    if (!file_exists(path) || hash_file(path) != hash.get<std::string>()) {
                        cached = false;
                        break;
                    }
                }
            }
        }

        json entry;
        if (cached) {
            entry = previous.at("stages").at(stage);
        } else {
            try {
                run_stage(stage);
            } catch (const ValidationError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(stage, e.what());
            }
            // Inputs that are artifacts of earlier stages exist now.
            for (auto& [name, hash] : inputs.items()) {
                if (hash.is_null()) {
                    const auto paths = stage_input_paths(stage);
                    hash = hash_file(paths.at(name));
                }
            }
            json outputs = json::object();
            for (const auto& name : kOutputs.at(stage)) {
                outputs[name] = hash_file(artifact_path(name));
            }
            // Optional extras produced by featurize.
            if (stage == "featurize") {
                for (const char* name : {"vocabulary.txt", "unigrams_train.csv",
                                         "unigrams_dev.csv", "unigrams_test.csv"}) {
                    if (file_exists(artifact_path(name))) {
                        outputs[name] = hash_file(artifact_path(name));
                    }
                }
            }
            entry = json{{"inputs", inputs},
                         {"params_hash", params_hash},
                         {"outputs", outputs}};
        }
        manifest_stages[stage] = std::move(entry);
    }

    const json cfg = config_to_json(config_);
    const json manifest{{"format", "qfactor-manifest-v1"},
                        {"version", kPipelineVersion},
                        {"seed", config_.seed},
                        {"config", cfg},
                        {"config_hash", hex64(fnv1a64(cfg.dump()))},
                        {"stages", std::move(manifest_stages)}};
    StagedWrites writes;
    writes.add(manifest_path, manifest.dump(2) + "\n");
    writes.commit();
}

std::string report_tables(const json& eval_report, const json& factor_reports) {
    std::ostringstream md;
    md << "# Evaluation report\n\n";

    const json& combos = eval_report.at("combinations");
    std::set<std::string> domains;
    for (const auto& combo : combos) {
        for (const auto& [domain, value] : combo.at("domain_auc").items()) {
            domains.insert(domain);
        }
    }

    md << "## ROC AUC by feature combination\n\n";
    md << "| Combination |";
    for (const auto& d : domains) md << ' ' << d << " |";
    md << " Average |\n";
    md << "|---|";
    for (std::size_t i = 0; i < domains.size(); ++i) md << "---|";
    md << "---|\n";
    for (const auto& combo : combos) {
        md << "| " << combo.at("combination").get<std::string>() << " |";
        for (const auto& d : domains) {
            if (combo.at("domain_auc").contains(d)) {
                md << ' ' << format_fixed(combo.at("domain_auc").at(d).get<double>(), 2)
                   << " |";
            } else {
                md << " - |";
            }
        }
        md << ' ' << format_fixed(combo.at("average_auc").get<double>(), 2)
           << " |\n";
    }

    md << "\n## Ranking quality\n\n";
    md << "| Combination | AP | AP gain % |\n|---|---|---|\n";
    for (const auto& combo : combos) {
        md << "| " << combo.at("combination").get<std::string>() << " | "
           << format_fixed(combo.at("ap").get<double>(), 4) << " | "
           << format_fixed(combo.at("ap_gain_pct").get<double>(), 2) << " |\n";
    }

    md << "\n## Latent factors\n\n";
    if (!factor_reports.contains("reports") ||
        factor_reports.at("reports").empty()) {
        md << "_No factor reports available._\n";
        return md.str();
    }
    for (const auto& r : factor_reports.at("reports")) {
        md << "### Factor " << r.at("factor").get<std::size_t>() << "\n\n";
        if (r.at("response_rate").is_null()) {
            md << "- members: 0 (no response rate)\n";
        } else {
            md << "- members: " << r.at("member_count").get<std::size_t>()
               << ", response rate "
               << format_fixed(r.at("response_rate").get<double>(), 2) << "%\n";
        }
        md << "- frequent n-grams:";
        if (r.at("frequent_ngrams").empty()) {
            md << " (none)";
        } else {
            bool first = true;
            for (const auto& g : r.at("frequent_ngrams")) {
                md << (first ? " " : ", ") << '`'
                   << g.at("ngram").get<std::string>() << "` ("
                   << g.at("count").get<std::size_t>() << ')';
                first = false;
            }
        }
        md << "\n";
        if (!r.at("top_questions").empty()) {
            md << "- top questions:\n";
            for (const auto& q : r.at("top_questions")) {
                md << "  - " << q.at("id").get<std::string>() << " (weight "
                   << format_fixed(q.at("weight").get<double>(), 6) << "): "
                   << q.at("text").get<std::string>() << "\n";
            }
        }
        md << "\n";
    }
    return md.str();
}

}  // namespace qfactor
