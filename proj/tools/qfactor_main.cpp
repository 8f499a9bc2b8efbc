#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qfactor/pipeline.hpp"
#include "qfactor/util.hpp"

namespace fs = std::filesystem;
using qfactor::Pipeline;
using qfactor::PipelineConfig;
using qfactor::StageError;
using qfactor::ValidationError;

namespace {

void require_file(const std::string& path, const char* what) {
    if (path.empty()) {
        throw ValidationError(std::string("missing required path: ") + what);
    }
    if (!qfactor::file_exists(path)) {
        throw ValidationError(std::string(what) + " file not found: " + path);
    }
}

void copy_over(const std::string& from, const std::string& to) {
    if (fs::weakly_canonical(from) == fs::weakly_canonical(to)) return;
    fs::create_directories(fs::path(to).parent_path());
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

std::pair<double, double> parse_grid_cell(const std::string& cell) {
    const auto parts = qfactor::split_string(cell, ',');
    if (parts.size() != 2) {
        throw ValidationError("grid entry must be 'l1,l2': " + cell);
    }
    return {std::stod(parts[0]), std::stod(parts[1])};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"question factor analysis pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "random seed override");
    app.add_option("--out-dir", out_dir, "artifact directory override");

    auto* ingest = app.add_subcommand("ingest", "parse, filter and summarize a corpus");
    std::string ingest_in, ingest_out, ingest_stats;
    ingest->add_option("--in", ingest_in, "corpus JSONL file");
    ingest->add_option("--out", ingest_out, "destination for the corpus artifact");
    ingest->add_option("--stats", ingest_stats, "destination for the stats JSON");

    auto* featurize = app.add_subcommand("featurize", "split the corpus and extract features");

    auto* factorize = app.add_subcommand("factorize", "fit the latent factor model");
    std::string fz_corpus, fz_embeddings, fz_synsets, fz_out;
    std::optional<std::size_t> fz_k;
    std::optional<double> fz_lambda1;
    factorize->add_option("--corpus", fz_corpus, "corpus file (JSONL or ingest artifact)");
    factorize->add_option("--embeddings", fz_embeddings, "word embedding table");
    factorize->add_option("--synsets", fz_synsets, "synonym lexicon");
    factorize->add_option("--k", fz_k, "number of latent factors");
    factorize->add_option("--lambda1", fz_lambda1, "row L1 budget for memberships");
    factorize->add_option("--out", fz_out, "destination for the model file");

    auto* train = app.add_subcommand("train", "grid-search and fit classifiers");
    std::vector<std::string> grid_cells;
    train->add_option("--grid", grid_cells, "l1,l2 pair (repeatable)");

    auto* evaluate = app.add_subcommand("evaluate", "score classifiers on the test split");

    auto* factors = app.add_subcommand("factors", "summarize latent factors");
    std::string fc_model, fc_ngrams;
    std::optional<std::size_t> fc_top;
    factors->add_option("--model", fc_model, "model file from factorize");
    factors->add_option("--top", fc_top, "questions listed per factor");
    factors->add_option("--ngrams", fc_ngrams, "n-gram length range, e.g. 2,3");

    auto* report = app.add_subcommand("report", "render Markdown tables");
    auto* run = app.add_subcommand("run", "all stages in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        PipelineConfig config =
            config_path.empty() ? PipelineConfig{} : qfactor::load_config(config_path);
        if (seed) config.seed = *seed;
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (!ingest_in.empty()) config.corpus_path = ingest_in;
        if (!fz_embeddings.empty()) config.embeddings_path = fz_embeddings;
        if (!fz_synsets.empty()) config.synsets_path = fz_synsets;
        if (fz_k) config.nnse_k = *fz_k;
        if (fz_lambda1) config.lambda1 = *fz_lambda1;
        if (fc_top) config.factor_top_m = *fc_top;
        if (!fc_ngrams.empty()) {
            const auto parts = qfactor::split_string(fc_ngrams, ',');
            if (parts.size() != 2) {
                throw ValidationError("--ngrams expects 'min,max': " + fc_ngrams);
            }
            config.ngram_min = std::stoi(parts[0]);
            config.ngram_max = std::stoi(parts[1]);
        }
        for (const auto& cell : grid_cells) {
            config.grid.push_back(parse_grid_cell(cell));
        }

        Pipeline pipeline(config);
        const auto run_one = [&](const char* name, auto&& fn) {
            try {
                const nlohmann::json summary = fn();
                std::cout << summary.dump(2) << "\n";
            } catch (const ValidationError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(name, e.what());
            }
        };

        if (*ingest) {
            require_file(config.corpus_path, "corpus");
            run_one("ingest", [&] { return pipeline.ingest(); });
            if (!ingest_out.empty()) {
                copy_over(pipeline.artifact_path("corpus.bin"), ingest_out);
            }
            if (!ingest_stats.empty()) {
                copy_over(pipeline.artifact_path("stats.json"), ingest_stats);
            }
        } else if (*featurize) {
            require_file(pipeline.artifact_path("corpus.bin"), "ingest artifact");
            require_file(config.stopwords_path, "stopwords");
            run_one("featurize", [&] { return pipeline.featurize(); });
        } else if (*factorize) {
            if (!fz_corpus.empty()) {
                require_file(fz_corpus, "corpus");
                // A JSONL corpus starts with '{'; the ingest artifact is CBOR.
                const std::string head = qfactor::read_file(fz_corpus).substr(0, 1);
                if (head == "{") {
                    config.corpus_path = fz_corpus;
                    Pipeline fresh(config);
                    fresh.ingest();
                    pipeline = Pipeline(config);
                } else {
                    fs::create_directories(config.out_dir);
                    copy_over(fz_corpus, pipeline.artifact_path("corpus.bin"));
                }
            }
            require_file(pipeline.artifact_path("corpus.bin"), "ingest artifact");
            if (!config.synsets_path.empty()) {
                require_file(config.synsets_path, "synsets");
            }
            run_one("factorize", [&] { return pipeline.factorize(); });
            if (!fz_out.empty()) {
                copy_over(pipeline.artifact_path("model.nnse"), fz_out);
            }
        } else if (*train) {
            require_file(pipeline.artifact_path("features_train.csv"),
                         "train features");
            require_file(pipeline.artifact_path("features_dev.csv"),
                         "dev features");
            run_one("train", [&] { return pipeline.train(); });
        } else if (*evaluate) {
            require_file(pipeline.artifact_path("models.json"), "models");
            require_file(pipeline.artifact_path("features_test.csv"),
                         "test features");
            require_file(pipeline.artifact_path("corpus.bin"), "ingest artifact");
            run_one("evaluate", [&] { return pipeline.evaluate(); });
        } else if (*factors) {
            if (!fc_model.empty()) {
                require_file(fc_model, "model");
                fs::create_directories(config.out_dir);
                copy_over(fc_model, pipeline.artifact_path("model.nnse"));
            }
            require_file(pipeline.artifact_path("model.nnse"), "model");
            require_file(pipeline.artifact_path("corpus.bin"), "ingest artifact");
            require_file(config.stopwords_path, "stopwords");
            run_one("factors", [&] { return pipeline.factors(); });
        } else if (*report) {
            require_file(pipeline.artifact_path("report.json"), "evaluation report");
            run_one("report", [&] { return pipeline.report(); });
        } else if (*run) {
            pipeline.run();
            std::cout << "wrote " << pipeline.artifact_path("manifest.json") << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const StageError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
