#include "qfactor/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qfactor/rng.hpp"

namespace qfactor {

namespace {

double log1pexp(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                    : std::exp(z) / (1.0 + std::exp(z));
}

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

void check_labels(const std::vector<int>& y) {
    bool pos = false, neg = false;
    for (int v : y) (v != 0 ? pos : neg) = true;
    if (!pos || !neg) {
        throw std::invalid_argument("training labels must contain both classes");
    }
}

}  // namespace

double ElasticNetModel::margin(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != weights.size()) {
        throw std::invalid_argument("feature arity does not match the model");
    }
    double z = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (dropped[j]) continue;
        z += weights[j] * (x(static_cast<Eigen::Index>(j)) - mean[j]) / stddev[j];
    }
    return z;
}

double ElasticNetModel::predict(const Eigen::VectorXd& x) const {
    return sigmoid(margin(x));
}

ElasticNetModel train(const Eigen::MatrixXd& x, const std::vector<int>& y,
                      double l1, double l2, const TrainOptions& opts) {
    const Eigen::Index n = x.rows(), p = x.cols();
    if (static_cast<std::size_t>(n) != y.size()) {
        throw std::invalid_argument("label count does not match row count");
    }
    if (!x.allFinite()) throw std::invalid_argument("features must be finite");
    if (l1 < 0.0 || l2 < 0.0) {
        throw std::invalid_argument("regularization strengths must be >= 0");
    }
    check_labels(y);

    ElasticNetModel model;
    model.l1 = l1;
    model.l2 = l2;
    model.mean.resize(static_cast<std::size_t>(p));
    model.stddev.resize(static_cast<std::size_t>(p));
    model.dropped.resize(static_cast<std::size_t>(p));
    Eigen::MatrixXd xs(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double mu = x.col(j).mean();
        const double var = (x.col(j).array() - mu).square().sum() /
                           static_cast<double>(n);
        const double sd = std::sqrt(var);
        model.mean[static_cast<std::size_t>(j)] = mu;
        if (sd <= 0.0) {
            model.dropped[static_cast<std::size_t>(j)] = true;
            model.stddev[static_cast<std::size_t>(j)] = 1.0;
            xs.col(j).setZero();
        } else {
            model.stddev[static_cast<std::size_t>(j)] = sd;
            xs.col(j) = (x.col(j).array() - mu) / sd;
        }
    }

    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv(i) = y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    double b = 0.0;
    const auto smooth = [&](const Eigen::VectorXd& wv, double bv) {
        const Eigen::VectorXd z = xs * wv + Eigen::VectorXd::Constant(n, bv);
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            loss += log1pexp(z(i)) - yv(i) * z(i);
        }
        return loss / static_cast<double>(n) + 0.5 * l2 * wv.squaredNorm();
    };
    const auto full = [&](const Eigen::VectorXd& wv, double bv) {
        return smooth(wv, bv) + l1 * wv.lpNorm<1>();
    };

    double objective = full(w, b);
    double eta = 1.0;
    for (std::size_t iter = 1; iter <= opts.max_iters; ++iter) {
        model.iterations = iter;
        const Eigen::VectorXd z = xs * w + Eigen::VectorXd::Constant(n, b);
        Eigen::VectorXd prob(n);
        for (Eigen::Index i = 0; i < n; ++i) prob(i) = sigmoid(z(i));
        const Eigen::VectorXd residual = prob - yv;
        const Eigen::VectorXd grad_w =
            xs.transpose() * residual / static_cast<double>(n) + l2 * w;
        const double grad_b = residual.mean();
        const double g0 = smooth(w, b);

        double trial = eta * 2.0;
        Eigen::VectorXd w_next = w;
        double b_next = b;
        for (int tries = 0; tries < 100; ++tries) {
            w_next = w - trial * grad_w;
            for (Eigen::Index j = 0; j < p; ++j) {
                w_next(j) = soft_threshold(w_next(j), trial * l1);
            }
            b_next = b - trial * grad_b;
            const Eigen::VectorXd dw = w_next - w;
            const double db = b_next - b;
            const double quad = g0 + grad_w.dot(dw) + grad_b * db +
                                (dw.squaredNorm() + db * db) / (2.0 * trial);
            if (smooth(w_next, b_next) <= quad + 1e-12 * std::abs(quad)) break;
            trial *= 0.5;
        }
        eta = trial;
        w = w_next;
        b = b_next;
        const double next_objective = full(w, b);
        const double decrease = objective - next_objective;
        objective = std::min(objective, next_objective);
        if (decrease >= 0.0 && decrease <= opts.tol * std::max(objective, 1e-12)) {
            model.converged = true;
            break;
        }
    }
    model.weights.assign(w.data(), w.data() + w.size());
    model.bias = b;
    return model;
}

std::vector<double> decision_scores(const ElasticNetModel& model,
                                    const Eigen::MatrixXd& x) {
    std::vector<double> scores;
    scores.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        scores.push_back(model.margin(x.row(i).transpose()));
    }
    return scores;
}

std::vector<std::pair<double, double>> default_grid() {
    static const double values[] = {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
    std::vector<std::pair<double, double>> grid;
    for (double a : values) {
        for (double b : values) grid.emplace_back(a, b);
    }
    return grid;
}

std::pair<double, double> grid_search(
    const Eigen::MatrixXd& train_x, const std::vector<int>& train_y,
    const Eigen::MatrixXd& dev_x, const std::vector<int>& dev_y,
    const std::vector<std::pair<double, double>>& grid,
    const TrainOptions& opts) {
    if (grid.empty()) throw std::invalid_argument("grid must not be empty");
    std::pair<double, double> best = grid.front();
    double best_auc = -1.0;
    for (const auto& [l1, l2] : grid) {
        const ElasticNetModel model = train(train_x, train_y, l1, l2, opts);
        const double auc = roc_auc(decision_scores(model, dev_x), dev_y);
        const bool better =
            auc > best_auc ||
            (auc == best_auc && l1 + l2 > best.first + best.second);
        if (better) {
            best_auc = auc;
            best = {l1, l2};
        }
    }
    return best;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("scores and labels differ in length");
    }
    std::size_t n_pos = 0, n_neg = 0;
    for (int v : labels) (v != 0 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("roc_auc needs both classes");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });
    // Average ranks over tie groups keep the pairwise half-credit exact.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] != 0) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double average_precision(const std::vector<int>& labels_in_rank_order) {
    std::size_t positives = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < labels_in_rank_order.size(); ++i) {
        if (labels_in_rank_order[i] != 0) {
            ++positives;
            sum += static_cast<double>(positives) / static_cast<double>(i + 1);
        }
    }
    if (positives == 0) {
        throw std::invalid_argument("average precision needs a positive label");
    }
    return sum / static_cast<double>(positives);
}

double ap_gain(const std::vector<double>& values, const std::vector<int>& labels,
               std::size_t trials, std::uint64_t seed) {
    if (values.size() != labels.size()) {
        throw std::invalid_argument("values and labels differ in length");
    }
    if (trials == 0) throw std::invalid_argument("trials must be >= 1");
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return values[a] > values[b];
    });
    std::vector<int> ranked(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = labels[order[i]];
    const double ap_feature = average_precision(ranked);

    Rng rng(seed);
    std::vector<std::size_t> shuffled(values.size());
    std::iota(shuffled.begin(), shuffled.end(), 0);
    double ap_random_sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        rng.shuffle(shuffled);
        for (std::size_t i = 0; i < shuffled.size(); ++i) {
            ranked[i] = labels[shuffled[i]];
        }
        ap_random_sum += average_precision(ranked);
    }
    const double ap_random = ap_random_sum / static_cast<double>(trials);
    return 100.0 * (ap_feature - ap_random) / ap_random;
}

}  // namespace qfactor
