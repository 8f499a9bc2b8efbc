#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qfactor/classify.hpp"
#include "qfactor/corpus.hpp"
#include "qfactor/factorization.hpp"
#include "qfactor/features.hpp"

namespace qfactor {

struct PipelineConfig {
    // Inputs. Empty optional paths disable the resource.
    std::string corpus_path;
    std::string stopwords_path;
    std::string greetings_path;
    std::string apologies_path;
    std::string hedges_path;
    std::string embeddings_path;
    std::string synsets_path;
    std::string parses_path;
    std::string out_dir = "out";

    std::set<FeatureGroup> feature_groups = {
        FeatureGroup::Length,     FeatureGroup::Temporal,
        FeatureGroup::Politeness, FeatureGroup::Syntactic,
        FeatureGroup::Redundancy, FeatureGroup::Relevance,
        FeatureGroup::Unigram};
    // Feature-group combinations evaluated by train/evaluate; empty means
    // every enabled dense group alone plus all of them together.
    std::vector<std::vector<FeatureGroup>> eval_combinations;
    bool run_factorization = true;

    std::size_t knn_k = 5;
    bool use_thread_end = false;
    std::set<std::string> vp_labels = {"VP"};
    SplitRatios ratios;

    std::size_t nnse_k = 1000;
    double lambda1 = 1.0;
    double nnse_tol = 1e-4;
    std::size_t nnse_max_iters = 100;
    std::size_t svd_rank_max = 50;
    double membership_threshold = 0.0;
    std::size_t factor_top_m = 10;
    int ngram_min = 2;
    int ngram_max = 3;
    std::size_t ap_trials = 1000;
    std::vector<std::pair<double, double>> grid;  // empty -> default_grid()

    std::uint64_t seed = 12345;
};

PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);
nlohmann::json config_to_json(const PipelineConfig& config);

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StageError : std::runtime_error {
    StageError(const std::string& stage_name, const std::string& cause)
        : std::runtime_error("stage " + stage_name + " failed: " + cause),
          stage(stage_name) {}
    std::string stage;
};

class Pipeline {
public:
    explicit Pipeline(PipelineConfig config);

    const PipelineConfig& config() const { return config_; }

    // Throws ValidationError before any compute when a referenced input file
    // is missing or the configuration is inconsistent.
    void validate_inputs() const;

    nlohmann::json ingest();
    nlohmann::json featurize();
    nlohmann::json factorize();
    nlohmann::json train();
    nlohmann::json evaluate();
    nlohmann::json factors();
    nlohmann::json report();

    // All stages in order with input-hash caching; writes manifest.json.
    // The manifest holds versions, seed, and per-stage input/output hashes,
    // and is byte-identical across reruns with the same config and seed.
    void run();

    std::string artifact_path(const std::string& name) const;

private:
    PipelineConfig config_;

    std::vector<std::vector<FeatureGroup>> combinations() const;
    nlohmann::json stage_params(const std::string& stage) const;
    std::map<std::string, std::string> stage_input_paths(
        const std::string& stage) const;
    nlohmann::json run_stage(const std::string& stage);
};

// Markdown rendering of the evaluation and factor artifacts: an AUC table
// (rows = combinations, columns = domains + average), a ranking table, and
// one section per factor (top questions truncated to 200 characters).
std::string report_tables(const nlohmann::json& eval_report,
                          const nlohmann::json& factor_reports);

}  // namespace qfactor
