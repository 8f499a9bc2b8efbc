#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qfactor/pipeline.hpp"

#include "helpers.hpp"

using namespace qfactor;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

PipelineConfig toy_config(const std::string& out_dir) {
    PipelineConfig c;
    c.corpus_path = testutil::fixture_path("toy_corpus.jsonl");
    c.stopwords_path = testutil::data_path("stopwords.txt");
    c.greetings_path = testutil::data_path("greetings.txt");
    c.apologies_path = testutil::data_path("apologies.txt");
    c.hedges_path = testutil::data_path("hedges.txt");
    c.embeddings_path = testutil::fixture_path("embeddings.txt");
    c.synsets_path = testutil::fixture_path("synsets.tsv");
    c.out_dir = out_dir;
    c.nnse_k = 4;
    c.svd_rank_max = 10;
    c.ap_trials = 50;
    c.factor_top_m = 5;
    c.grid = {{0.0, 1e-3}, {1e-2, 1e-2}};
    c.seed = 4242;
    return c;
}

const std::vector<std::string> kArtifacts = {
    "corpus.bin",        "stats.json",         "split.json",
    "features_train.csv", "features_dev.csv",  "features_test.csv",
    "vocabulary.txt",    "model.nnse",         "factorization.json",
    "models.json",       "report.json",        "factor_reports.json",
    "report.md",         "manifest.json"};

}  // namespace

TEST_CASE("config json round trips") {
    const json j = {
        {"corpus", "c.jsonl"},
        {"stopwords", "s.txt"},
        {"out_dir", "somewhere"},
        {"feature_groups", {"length", "temporal", "redundancy"}},
        {"eval_combinations", {{"length"}, {"length", "redundancy"}}},
        {"run_factorization", false},
        {"knn_k", 7},
        {"use_thread_end", true},
        {"vp_labels", {"VP", "SQ"}},
        {"ratios", {{"train", 0.7}, {"dev", 0.1}, {"test", 0.2}}},
        {"nnse_k", 12},
        {"lambda1", 0.5},
        {"ap_trials", 10},
        {"grid", {{0.0, 0.1}, {1.0, 1.0}}},
        {"seed", 99}};
    const PipelineConfig c = config_from_json(j);
    CHECK(c.corpus_path == "c.jsonl");
    CHECK(c.feature_groups.size() == 3);
    CHECK(c.eval_combinations.size() == 2);
    CHECK(!c.run_factorization);
    CHECK(c.knn_k == 7);
    CHECK(c.use_thread_end);
    CHECK(c.vp_labels.count("SQ") == 1);
    CHECK(c.ratios.train == 0.7);
    CHECK(c.nnse_k == 12);
    CHECK(c.lambda1 == 0.5);
    CHECK(c.grid.size() == 2);
    CHECK(c.seed == 99);

    const PipelineConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back).dump(2) == config_to_json(c).dump(2));
}

TEST_CASE("config files load and bad json is a validation error") {
    const std::string dir = testutil::temp_dir("cfg");
    const std::string path = dir + "/config.json";
    spit(path, R"({"corpus":"x.jsonl","seed":7})");
    const PipelineConfig c = load_config(path);
    CHECK(c.corpus_path == "x.jsonl");
    CHECK(c.seed == 7);

    spit(path, "{broken");
    CHECK_THROWS_AS(load_config(path), ValidationError);
    CHECK_THROWS_AS(load_config(dir + "/missing.json"), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("the output directory is not part of the config fingerprint") {
    PipelineConfig a = toy_config("/tmp/somewhere");
    PipelineConfig b = toy_config("/tmp/elsewhere");
    CHECK(config_to_json(a).dump(2) == config_to_json(b).dump(2));
    b.seed += 1;
    CHECK(config_to_json(a).dump(2) != config_to_json(b).dump(2));
}

TEST_CASE("validation names the missing resource before any compute") {
    const std::string dir = testutil::temp_dir("val");
    PipelineConfig c = toy_config(dir);
    c.embeddings_path = dir + "/absent_vectors.txt";
    const Pipeline p(c);
    CHECK_THROWS_WITH_AS(p.validate_inputs(),
                         doctest::Contains("absent_vectors.txt"),
                         ValidationError);

    PipelineConfig bad_ratios = toy_config(dir);
    bad_ratios.ratios = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(Pipeline(bad_ratios).validate_inputs(), ValidationError);

    PipelineConfig bad_combo = toy_config(dir);
    bad_combo.feature_groups = {FeatureGroup::Length};
    bad_combo.eval_combinations = {{FeatureGroup::Temporal}};
    CHECK_THROWS_WITH_AS(Pipeline(bad_combo).validate_inputs(),
                         doctest::Contains("temporal"), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("a full run produces every artifact") {
    const std::string dir = testutil::temp_dir("run");
    Pipeline pipeline(toy_config(dir));
    pipeline.run();
    for (const auto& name : kArtifacts) {
        CHECK_MESSAGE(fs::exists(dir + "/" + name), name);
    }
    const json stats = json::parse(slurp(dir + "/stats.json"));
    CHECK(stats.at("total").at("asked") == 50);
    CHECK(stats.at("total").at("replied") == 25);

    const json manifest = json::parse(slurp(dir + "/manifest.json"));
    CHECK(manifest.at("format") == "qfactor-manifest-v1");
    CHECK(manifest.at("seed") == 4242);
    CHECK(manifest.at("stages").contains("ingest"));
    CHECK(manifest.at("stages").contains("report"));
    CHECK(!manifest.at("config").contains("out_dir"));

    const std::string md = slurp(dir + "/report.md");
    CHECK(md.find("## ROC AUC by feature combination") != std::string::npos);
    CHECK(md.find("## Ranking quality") != std::string::npos);
    CHECK(md.find("## Latent factors") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("reruns and relocated runs are byte-identical") {
    const std::string dir_a = testutil::temp_dir("det_a");
    const std::string dir_b = testutil::temp_dir("det_b");
    Pipeline first(toy_config(dir_a));
    first.run();
    const std::string manifest_once = slurp(dir_a + "/manifest.json");
    const std::string report_once = slurp(dir_a + "/report.md");

    first.run();  // warm rerun, everything cached
    CHECK(slurp(dir_a + "/manifest.json") == manifest_once);
    CHECK(slurp(dir_a + "/report.md") == report_once);

    Pipeline second(toy_config(dir_b));
    second.run();
    CHECK(slurp(dir_b + "/manifest.json") == manifest_once);
    CHECK(slurp(dir_b + "/report.md") == report_once);
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("corpus edits invalidate the cache by content") {
    const std::string dir = testutil::temp_dir("cache");
    const std::string corpus_copy = dir + "/corpus.jsonl";
    fs::create_directories(dir);
    spit(corpus_copy, slurp(testutil::fixture_path("toy_corpus.jsonl")));

    PipelineConfig c = toy_config(dir + "/out");
    c.corpus_path = corpus_copy;
    Pipeline pipeline(c);
    pipeline.run();
    const std::string manifest_before = slurp(dir + "/out/manifest.json");

    // Same bytes rewritten: nothing to redo, the manifest does not move.
    spit(corpus_copy, slurp(testutil::fixture_path("toy_corpus.jsonl")));
    pipeline.run();
    CHECK(slurp(dir + "/out/manifest.json") == manifest_before);

    std::string extended = slurp(testutil::fixture_path("toy_corpus.jsonl"));
    extended +=
        R"({"id":"ama-chef-1","domain":"other","description":"I cook.",)"
        R"("started_at":1360000000,"ended_at":1360001000,"questions":[)"
        R"({"id":"q051","author":"late_fan","posted_at":1360000100,)"
        R"("text":"Did I make the cut?","answered":true,"top_level":true}]})"
        "\n";
    spit(corpus_copy, extended);
    pipeline.run();
    const std::string manifest_after = slurp(dir + "/out/manifest.json");
    CHECK(manifest_after != manifest_before);
    const json stats = json::parse(slurp(dir + "/out/stats.json"));
    CHECK(stats.at("total").at("asked") == 51);
    fs::remove_all(dir);
}

TEST_CASE("stage failures carry the stage name") {
    const std::string dir = testutil::temp_dir("fail");
    fs::create_directories(dir);
    const std::string tiny = dir + "/tiny.jsonl";
    spit(tiny,
         R"({"id":"t1","domain":"actor","description":"d",)"
         R"("started_at":0,"ended_at":100,"questions":[)"
         R"({"id":"a1","author":"u1","posted_at":10,"text":"First one?",)"
         R"("answered":true,"top_level":true},)"
         R"({"id":"a2","author":"u2","posted_at":20,"text":"Second one?",)"
         R"("answered":true,"top_level":true}]})"
         "\n");
    PipelineConfig c = toy_config(dir + "/out");
    c.corpus_path = tiny;
    Pipeline pipeline(c);
    try {
        pipeline.run();
        FAIL("expected a stage failure");
    } catch (const StageError& e) {
        CHECK(e.stage == "featurize");
        CHECK(std::string(e.what()).find("featurize") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("report tables lay out domains, averages, and gaps") {
    const json eval = {
        {"format", "qfactor-eval-v1"},
        {"combinations",
         {{{"combination", "length"},
           {"auc", 0.81},
           {"ap", 0.1234},
           {"ap_gain_pct", 12.34},
           {"domain_auc", {{"actor", 0.9}, {"politician", 0.7}}},
           {"average_auc", 0.8}},
          {{"combination", "length+temporal"},
           {"auc", 0.5},
           {"ap", 0.5},
           {"ap_gain_pct", -3.0},
           {"domain_auc", {{"actor", 0.55}}},
           {"average_auc", 0.55}}}}};

    const std::string md = report_tables(eval, json::object());
    CHECK(md.find("| Combination | actor | politician | Average |") !=
          std::string::npos);
    CHECK(md.find("| length | 0.90 | 0.70 | 0.80 |") != std::string::npos);
    // Missing domain renders as a gap, not a zero.
    CHECK(md.find("| length+temporal | 0.55 | - | 0.55 |") != std::string::npos);
    CHECK(md.find("| length | 0.1234 | 12.34 |") != std::string::npos);
    CHECK(md.find("| length+temporal | 0.5000 | -3.00 |") != std::string::npos);
    CHECK(md.find("_No factor reports available._") != std::string::npos);

    const json factors = {
        {"format", "qfactor-factors-v1"},
        {"reports",
         {{{"factor", 0},
           {"member_count", 3},
           {"answered_count", 2},
           {"response_rate", 66.66},
           {"top_questions",
            {{{"id", "q1"}, {"weight", 0.625}, {"text", "What gives?"}}}},
           {"frequent_ngrams", {{{"ngram", "deep sea"}, {"count", 3}}}}},
          {{"factor", 1},
           {"member_count", 0},
           {"answered_count", 0},
           {"response_rate", nullptr},
           {"top_questions", json::array()},
           {"frequent_ngrams", json::array()}}}}};
    const std::string full = report_tables(eval, factors);
    CHECK(full.find("### Factor 0") != std::string::npos);
    CHECK(full.find("- members: 3, response rate 66.66%") != std::string::npos);
    CHECK(full.find("`deep sea` (3)") != std::string::npos);
    CHECK(full.find("q1 (weight 0.625000): What gives?") != std::string::npos);
    CHECK(full.find("### Factor 1") != std::string::npos);
    CHECK(full.find("- members: 0 (no response rate)") != std::string::npos);
    CHECK(full.find("- frequent n-grams: (none)") != std::string::npos);
}
