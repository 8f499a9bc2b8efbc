#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qfactor/corpus.hpp"
#include "qfactor/textsim.hpp"

namespace qfactor {

struct SparseMatrix {
    struct Entry {
        std::size_t row = 0;
        std::size_t col = 0;
        double value = 0.0;
    };

    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<Entry> entries;  // row-major, unique (row, col), finite

    static SparseMatrix from_triplets(std::size_t n_rows, std::size_t n_cols,
                                      std::vector<Entry> entries);
    static SparseMatrix from_dense(const Eigen::MatrixXd& m,
                                   double prune_below = 0.0);

    Eigen::MatrixXd dense() const;
    Eigen::MatrixXd multiply(const Eigen::MatrixXd& m) const;            // X * m
    Eigen::MatrixXd transpose_multiply(const Eigen::MatrixXd& m) const;  // X^T * m
    std::size_t entry_count() const { return entries.size(); }
};

// Question-word count matrix. Every token increments its own column and the
// columns of its synset partners; the inflation factor compares nonzero entry
// counts with and without that extension.
struct CooccurrenceResult {
    SparseMatrix matrix;
    std::size_t base_entries = 0;      // nonzeros without synset extension
    std::size_t extended_entries = 0;  // nonzeros in the returned matrix
    double inflation_factor = 1.0;
};

// Sorted union of all question tokens and their synset partners.
std::vector<std::string> build_cooccurrence_vocab(
    const std::vector<const Question*>& questions, const SynonymLexicon* synsets);

CooccurrenceResult build_cooccurrence(
    const std::vector<const Question*>& questions,
    const std::vector<std::string>& vocab, const SynonymLexicon* synsets);

struct SvdOptions {
    std::size_t oversampling = 10;
    std::size_t power_iterations = 2;
    std::uint64_t seed = 12345;
};

struct SvdResult {
    Eigen::MatrixXd u;  // n x r, orthonormal columns
    Eigen::VectorXd s;  // descending, non-negative
    Eigen::MatrixXd v;  // cols x r, orthonormal columns
};

// Randomized-projection truncated SVD (Gaussian sketch, QR re-orthonormalized
// power iterations, exact SVD of the small projected matrix).
SvdResult truncated_svd(const SparseMatrix& x, std::size_t rank,
                        const SvdOptions& opts = {});

// One-sided Jacobi SVD, exact up to sweep tolerance; used on the projected
// matrix inside truncated_svd and directly on small dense inputs.
SvdResult dense_svd(const Eigen::MatrixXd& m);

// Index (1-based) of the singular value farthest from the chord joining the
// first and last points of the scree plot, clamped to [2, r_max].
std::size_t knee_rank(const std::vector<double>& s, std::size_t r_max);

struct NnseModel {
    std::size_t n = 0;
    std::size_t k = 0;
    std::size_t r = 0;
    double lambda1 = 1.0;
    Eigen::MatrixXd a;  // n x k, entries >= 0, row L1 norms <= lambda1
    Eigen::MatrixXd d;  // k x r, row L2 norms <= 1
    std::vector<double> objective_trace;  // after every half-step
    std::size_t iterations = 0;
    bool converged = false;
};

struct NnseOptions {
    double tol = 1e-4;  // relative objective decrease
    std::size_t max_iters = 100;
    std::uint64_t seed = 12345;
};

// Alternating minimization: non-negative, L1-budgeted least squares per row
// of A (coordinate descent with bisection on the budget multiplier), then
// projected gradient on D with rows kept in the unit ball. The objective is
// non-increasing after every half-step.
NnseModel nnse_fit(const Eigen::MatrixXd& xr, std::size_t k, double lambda1,
                   const NnseOptions& opts = {});

// 0.5 * sum_i ||X_i - A_i D||^2. The L1 budget enters as a constraint, not a
// penalty, so it does not appear here.
double reconstruction_objective(const Eigen::MatrixXd& xr,
                                const Eigen::MatrixXd& a,
                                const Eigen::MatrixXd& d);

// argmin_a 0.5 a^T G a - b^T a  s.t.  a >= 0, ||a||_1 <= lambda1, where
// G = D D^T and b = D x. mu_out receives the budget multiplier (0 when the
// budget is slack), so callers can verify the stationarity conditions.
Eigen::VectorXd nn_l1_least_squares(const Eigen::MatrixXd& g,
                                    const Eigen::VectorXd& b, double lambda1,
                                    double* mu_out = nullptr);

struct FactorReport {
    std::size_t factor = 0;
    std::size_t member_count = 0;
    std::size_t answered_count = 0;
    // Percent over members, truncated at two decimals; empty factor -> null.
    std::optional<double> response_rate;
    std::vector<std::pair<std::string, double>> top_questions;  // id, weight
    std::vector<std::pair<std::string, std::size_t>> frequent_ngrams;
};

// membership_threshold = 0 means any support (weight > 0); a positive value
// means weight >= threshold. Ties on weight break toward the smaller id.
FactorReport factor_report(const NnseModel& model,
                           const std::vector<const Question*>& questions,
                           std::size_t factor, double membership_threshold,
                           std::size_t top_m, std::pair<int, int> ngram_range,
                           const StopwordSet& stopwords,
                           std::size_t max_ngrams = 10);

// Everything needed to inspect factors and embed new questions.
struct FactorModelFile {
    NnseModel model;
    std::vector<std::string> question_ids;  // row order of A
    std::vector<std::string> vocabulary;    // column order of the count matrix
    Eigen::MatrixXd svd_v;                  // vocab x r
    std::vector<double> svd_s;
};

std::string serialize_model(const FactorModelFile& file);
FactorModelFile deserialize_model(const std::string& text);

}  // namespace qfactor
