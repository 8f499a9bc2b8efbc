#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace qfactor {

struct ElasticNetModel {
    std::vector<double> weights;  // per feature, in standardized space
    double bias = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    std::vector<double> mean;    // train-split statistics
    std::vector<double> stddev;  // 1.0 for dropped columns
    std::vector<bool> dropped;   // constant features, weight pinned to 0
    std::size_t iterations = 0;
    bool converged = false;

    double margin(const Eigen::VectorXd& x) const;   // raw feature row
    double predict(const Eigen::VectorXd& x) const;  // sigmoid(margin)
};

struct TrainOptions {
    double tol = 1e-9;  // relative objective decrease
    std::size_t max_iters = 10000;
};

// Proximal gradient on mean logistic loss + l2/2 ||w||^2 + l1 ||w||_1 over
// standardized features (statistics from this input only; the bias is not
// penalized). The objective is non-increasing per accepted step.
ElasticNetModel train(const Eigen::MatrixXd& x, const std::vector<int>& y,
                      double l1, double l2, const TrainOptions& opts = {});

std::vector<double> decision_scores(const ElasticNetModel& model,
                                    const Eigen::MatrixXd& x);

// l1, l2 pairs; {0, 1e-4, 1e-3, 1e-2, 1e-1, 1} squared by default.
std::vector<std::pair<double, double>> default_grid();

// Exhaustive dev-AUC search; ties go to the larger l1 + l2.
std::pair<double, double> grid_search(
    const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
    const Eigen::MatrixXd& dev_x, const std::vector<int>& dev_y,
    const std::vector<std::pair<double, double>>& grid,
    const TrainOptions& opts = {});

// Mann-Whitney form: P(score_pos > score_neg) with ties counted half, via
// average ranks in O(m log m). Requires both classes.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// labels[i] is the label of the item ranked at position i (best first).
// Mean of precision-at-i over positive positions. Requires a positive.
double average_precision(const std::vector<int>& labels_in_rank_order);

// 100 * (AP of sort-by-value-descending - mean AP of seeded random orders)
// / mean AP of random orders. Ties keep input order.
double ap_gain(const std::vector<double>& values, const std::vector<int>& labels,
               std::size_t trials, std::uint64_t seed);

struct EvalEntry {
    std::string combination;  // "+"-joined feature group names
    double auc = 0.0;
    double ap = 0.0;
    double ap_gain_pct = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
};

}  // namespace qfactor
