#include "qfactor/factorization.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "qfactor/rng.hpp"
#include "qfactor/util.hpp"

namespace qfactor {

using nlohmann::json;

SparseMatrix SparseMatrix::from_triplets(std::size_t n_rows, std::size_t n_cols,
                                         std::vector<Entry> entries) {
    SparseMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Entry& e = entries[i];
        if (e.row >= n_rows || e.col >= n_cols) {
            throw std::invalid_argument("sparse entry out of bounds");
        }
        if (!std::isfinite(e.value)) {
            throw std::invalid_argument("sparse entry is not finite");
        }
        if (i > 0 && entries[i - 1].row == e.row && entries[i - 1].col == e.col) {
            throw std::invalid_argument("duplicate sparse entry");
        }
    }
    m.entries = std::move(entries);
    return m;
}

SparseMatrix SparseMatrix::from_dense(const Eigen::MatrixXd& d, double prune_below) {
    std::vector<Entry> entries;
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        for (Eigen::Index j = 0; j < d.cols(); ++j) {
            if (std::abs(d(i, j)) > prune_below) {
                entries.push_back({static_cast<std::size_t>(i),
                                   static_cast<std::size_t>(j), d(i, j)});
            }
        }
    }
    return from_triplets(static_cast<std::size_t>(d.rows()),
                         static_cast<std::size_t>(d.cols()), std::move(entries));
}

Eigen::MatrixXd SparseMatrix::dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows),
                                              static_cast<Eigen::Index>(n_cols));
    for (const Entry& e : entries) {
        d(static_cast<Eigen::Index>(e.row), static_cast<Eigen::Index>(e.col)) =
            e.value;
    }
    return d;
}

Eigen::MatrixXd SparseMatrix::multiply(const Eigen::MatrixXd& m) const {
    if (static_cast<std::size_t>(m.rows()) != n_cols) {
        throw std::invalid_argument("sparse multiply shape mismatch");
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(n_rows), m.cols());
    for (const Entry& e : entries) {
        out.row(static_cast<Eigen::Index>(e.row)) +=
            e.value * m.row(static_cast<Eigen::Index>(e.col));
    }
    return out;
}

Eigen::MatrixXd SparseMatrix::transpose_multiply(const Eigen::MatrixXd& m) const {
    if (static_cast<std::size_t>(m.rows()) != n_rows) {
        throw std::invalid_argument("sparse transpose multiply shape mismatch");
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(n_cols), m.cols());
    for (const Entry& e : entries) {
        out.row(static_cast<Eigen::Index>(e.col)) +=
            e.value * m.row(static_cast<Eigen::Index>(e.row));
    }
    return out;
}

std::vector<std::string> build_cooccurrence_vocab(
    const std::vector<const Question*>& questions, const SynonymLexicon* synsets) {
    std::set<std::string> words;
    for (const Question* q : questions) {
        for (auto& token : tokenize_words(q->text)) {
            if (synsets) {
                if (const auto* partners = synsets->synonyms_of(token)) {
                    words.insert(partners->begin(), partners->end());
                }
            }
            words.insert(std::move(token));
        }
    }
    return {words.begin(), words.end()};
}

CooccurrenceResult build_cooccurrence(
    const std::vector<const Question*>& questions,
    const std::vector<std::string>& vocab, const SynonymLexicon* synsets) {
    if (questions.empty()) {
        throw std::invalid_argument("cannot build a co-occurrence matrix from an empty corpus");
    }
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], i);

    std::map<std::pair<std::size_t, std::size_t>, double> cells;
    std::size_t base_entries = 0;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        std::set<std::size_t> base_cols;
        for (const auto& token : tokenize_words(questions[i]->text)) {
            auto it = index.find(token);
            if (it == index.end()) {
                throw std::invalid_argument("token outside vocabulary: " + token);
            }
            cells[{i, it->second}] += 1.0;
            base_cols.insert(it->second);
            if (!synsets) continue;
            if (const auto* partners = synsets->synonyms_of(token)) {
                for (const auto& partner : *partners) {
                    auto pit = index.find(partner);
                    if (pit == index.end()) {
                        throw std::invalid_argument(
                            "synset word outside vocabulary: " + partner);
                    }
                    cells[{i, pit->second}] += 1.0;
                }
            }
        }
        base_entries += base_cols.size();
    }

    std::vector<SparseMatrix::Entry> entries;
    entries.reserve(cells.size());
    for (const auto& [key, value] : cells) {
        entries.push_back({key.first, key.second, value});
    }
    CooccurrenceResult result;
    result.matrix =
        SparseMatrix::from_triplets(questions.size(), vocab.size(), std::move(entries));
    result.base_entries = base_entries;
    result.extended_entries = result.matrix.entry_count();
    result.inflation_factor =
        base_entries == 0 ? 1.0
                          : static_cast<double>(result.extended_entries) /
                                static_cast<double>(base_entries);
    return result;
}

namespace {

// One-sided Jacobi on an a x b matrix with a >= b: returns U (a x b),
// singular values (b, descending), V (b x b) with M = U diag(s) V^T.
void jacobi_tall(Eigen::MatrixXd g, Eigen::MatrixXd& u, Eigen::VectorXd& s,
                 Eigen::MatrixXd& v) {
    const Eigen::Index b = g.cols();
    v = Eigen::MatrixXd::Identity(b, b);
    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < b; ++p) {
            for (Eigen::Index q = p + 1; q < b; ++q) {
                const double alpha = g.col(p).squaredNorm();
                const double beta = g.col(q).squaredNorm();
                const double gamma = g.col(p).dot(g.col(q));
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta) ||
                    gamma == 0.0) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) /
                    (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = c * t;
                const Eigen::VectorXd gp = g.col(p);
                g.col(p) = c * gp - sn * g.col(q);
                g.col(q) = sn * gp + c * g.col(q);
                const Eigen::VectorXd vp = v.col(p);
                v.col(p) = c * vp - sn * v.col(q);
                v.col(q) = sn * vp + c * v.col(q);
            }
        }
        if (!rotated) break;
    }
    s.resize(b);
    u.resize(g.rows(), b);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(b));
    std::iota(order.begin(), order.end(), 0);
    Eigen::VectorXd norms(b);
    for (Eigen::Index j = 0; j < b; ++j) norms(j) = g.col(j).norm();
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) {
                         return norms(x) > norms(y);
                     });
    Eigen::MatrixXd v_sorted(b, b);
    for (Eigen::Index j = 0; j < b; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(j)];
        s(j) = norms(src);
        u.col(j) = s(j) > 0.0 ? (g.col(src) / s(j)).eval()
                              : Eigen::VectorXd::Zero(g.rows()).eval();
        v_sorted.col(j) = v.col(src);
    }
    v = std::move(v_sorted);
}

Eigen::MatrixXd thin_q(const Eigen::MatrixXd& y) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(y);
    return qr.householderQ() * Eigen::MatrixXd::Identity(y.rows(), y.cols());
}

}  // namespace

SvdResult dense_svd(const Eigen::MatrixXd& m) {
    SvdResult r;
    if (m.rows() >= m.cols()) {
        jacobi_tall(m, r.u, r.s, r.v);
    } else {
        Eigen::MatrixXd ut, vt;
        Eigen::VectorXd s;
        jacobi_tall(m.transpose(), ut, s, vt);
        r.u = vt;
        r.s = s;
        r.v = ut;
    }
    return r;
}

SvdResult truncated_svd(const SparseMatrix& x, std::size_t rank,
                        const SvdOptions& opts) {
    const std::size_t n = x.n_rows, m = x.n_cols;
    const std::size_t limit = std::min(n, m);
    if (rank < 1 || rank > limit) {
        throw std::invalid_argument("svd rank out of range");
    }
    const std::size_t l = std::min(rank + opts.oversampling, limit);
    Rng rng(opts.seed);
    Eigen::MatrixXd omega(static_cast<Eigen::Index>(m),
                          static_cast<Eigen::Index>(l));
    for (Eigen::Index i = 0; i < omega.rows(); ++i) {
        for (Eigen::Index j = 0; j < omega.cols(); ++j) {
            omega(i, j) = rng.normal();
        }
    }
    Eigen::MatrixXd q = thin_q(x.multiply(omega));
    for (std::size_t it = 0; it < opts.power_iterations; ++it) {
        const Eigen::MatrixXd z = thin_q(x.transpose_multiply(q));
        q = thin_q(x.multiply(z));
    }
    const Eigen::MatrixXd b = x.transpose_multiply(q).transpose();  // l x m
    SvdResult small = dense_svd(b);
    SvdResult out;
    const Eigen::Index r = static_cast<Eigen::Index>(rank);
    out.u = q * small.u.leftCols(r);
    out.s = small.s.head(r);
    out.v = small.v.leftCols(r);
    return out;
}

std::size_t knee_rank(const std::vector<double>& s, std::size_t r_max) {
    if (s.size() < 3) {
        throw std::invalid_argument("knee detection needs at least 3 singular values");
    }
    if (r_max < 2) throw std::invalid_argument("r_max must be at least 2");
    const double x1 = 1.0, y1 = s.front();
    const double xn = static_cast<double>(s.size()), yn = s.back();
    const double dx = xn - x1, dy = yn - y1;
    const double norm = std::sqrt(dx * dx + dy * dy);
    std::size_t best_index = 1;
    double best_dist = -1.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double xi = static_cast<double>(i + 1), yi = s[i];
        const double dist =
            norm > 0.0 ? std::abs(dy * xi - dx * yi + xn * y1 - yn * x1) / norm
                       : 0.0;
        if (dist > best_dist) {
            best_dist = dist;
            best_index = i + 1;
        }
    }
    return std::clamp<std::size_t>(best_index, 2, r_max);
}

namespace {

// Coordinate descent for 0.5 a^T G a - (b - mu)^T a with a >= 0.
void nn_descent(const Eigen::MatrixXd& g, const Eigen::VectorXd& b, double mu,
                Eigen::VectorXd& a) {
    const Eigen::Index k = b.size();
    for (int sweep = 0; sweep < 5000; ++sweep) {
        double max_change = 0.0;
        double scale = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double gjj = g(j, j);
            if (gjj <= 0.0) {
                a(j) = 0.0;
                continue;
            }
            const double old = a(j);
            const double grad_rest = g.col(j).dot(a) - gjj * old;
            const double next = std::max(0.0, (b(j) - mu - grad_rest) / gjj);
            a(j) = next;
            max_change = std::max(max_change, std::abs(next - old));
            scale = std::max(scale, std::abs(next));
        }
        if (max_change <= 1e-13 * (1.0 + scale)) break;
    }
}

}  // namespace

Eigen::VectorXd nn_l1_least_squares(const Eigen::MatrixXd& g,
                                    const Eigen::VectorXd& b, double lambda1,
                                    double* mu_out) {
    if (g.rows() != g.cols() || g.rows() != b.size()) {
        throw std::invalid_argument("nn_l1_least_squares shape mismatch");
    }
    if (lambda1 <= 0.0) {
        throw std::invalid_argument("lambda1 must be positive");
    }
    Eigen::VectorXd a = Eigen::VectorXd::Zero(b.size());
    nn_descent(g, b, 0.0, a);
    if (a.sum() <= lambda1 * (1.0 + 1e-12)) {
        if (mu_out) *mu_out = 0.0;
        return a;
    }
    // The budget is active: bisect the multiplier. ||a(mu)||_1 is
    // non-increasing in mu and reaches 0 at mu = max_j b_j.
    double lo = 0.0, hi = std::max(b.maxCoeff(), 0.0);
    for (int it = 0; it < 100 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        nn_descent(g, b, mid, a);
        if (a.sum() > lambda1) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    nn_descent(g, b, hi, a);
    if (mu_out) *mu_out = hi;
    return a;
}

double reconstruction_objective(const Eigen::MatrixXd& xr,
                                const Eigen::MatrixXd& a,
                                const Eigen::MatrixXd& d) {
    if (a.rows() != xr.rows() || a.cols() != d.rows() || d.cols() != xr.cols()) {
        throw std::invalid_argument("objective shape mismatch");
    }
    return 0.5 * (xr - a * d).squaredNorm();
}

NnseModel nnse_fit(const Eigen::MatrixXd& xr, std::size_t k, double lambda1,
                   const NnseOptions& opts) {
    const std::size_t n = static_cast<std::size_t>(xr.rows());
    const std::size_t r = static_cast<std::size_t>(xr.cols());
    if (!xr.allFinite()) throw std::invalid_argument("input matrix is not finite");
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (k > n) throw std::invalid_argument("k may not exceed the row count");
    if (lambda1 <= 0.0) throw std::invalid_argument("lambda1 must be positive");

    Rng rng(opts.seed);
    NnseModel model;
    model.n = n;
    model.k = k;
    model.r = r;
    model.lambda1 = lambda1;

    // Dictionary init: k distinct sampled rows of the input, unit-normalized.
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    rng.shuffle(rows);
    model.d.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::VectorXd row = xr.row(static_cast<Eigen::Index>(rows[i]));
        double nrm = row.norm();
        if (nrm < 1e-12) {
            for (Eigen::Index j = 0; j < row.size(); ++j) row(j) = rng.normal();
            nrm = row.norm();
        }
        model.d.row(static_cast<Eigen::Index>(i)) = row / nrm;
    }
    model.a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n),
                                    static_cast<Eigen::Index>(k));

    double obj = reconstruction_objective(xr, model.a, model.d);
    model.objective_trace.push_back(obj);
    double step = 1.0;
    for (std::size_t iter = 1; iter <= opts.max_iters; ++iter) {
        model.iterations = iter;

        // A half-step: row-separable constrained least squares.
        const Eigen::MatrixXd g = model.d * model.d.transpose();
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
            const Eigen::VectorXd b = model.d * xr.row(i).transpose();
            const Eigen::VectorXd old = model.a.row(i).transpose();
            const Eigen::VectorXd fresh = nn_l1_least_squares(g, b, lambda1);
            // Keep the better of old and fresh so rounding can never raise
            // the objective.
            const auto cost = [&](const Eigen::VectorXd& v) {
                return 0.5 * v.dot(g * v) - b.dot(v);
            };
            if (cost(fresh) <= cost(old)) {
                model.a.row(i) = fresh.transpose();
            }
        }
        const double after_a = reconstruction_objective(xr, model.a, model.d);
        model.objective_trace.push_back(after_a);

        // D half-step: projected gradient with backtracking.
        const Eigen::MatrixXd grad =
            model.a.transpose() * (model.a * model.d - xr);
        double trial = step * 2.0;
        bool accepted = false;
        for (int tries = 0; tries < 60; ++tries) {
            Eigen::MatrixXd candidate = model.d - trial * grad;
            for (Eigen::Index i = 0; i < candidate.rows(); ++i) {
                const double nrm = candidate.row(i).norm();
                if (nrm > 1.0) candidate.row(i) /= nrm;
            }
            const double cand_obj = reconstruction_objective(xr, model.a, candidate);
            if (cand_obj <= after_a) {
                model.d = std::move(candidate);
                obj = cand_obj;
                step = trial;
                accepted = true;
                break;
            }
            trial *= 0.5;
        }
        if (!accepted) obj = after_a;
        model.objective_trace.push_back(obj);

        const double prev = model.objective_trace[model.objective_trace.size() - 3];
        if (prev - obj <= opts.tol * std::max(prev, 1e-12)) {
            model.converged = true;
            break;
        }
    }
    return model;
}

FactorReport factor_report(const NnseModel& model,
                           const std::vector<const Question*>& questions,
                           std::size_t factor, double membership_threshold,
                           std::size_t top_m, std::pair<int, int> ngram_range,
                           const StopwordSet& stopwords, std::size_t max_ngrams) {
    if (factor >= model.k) throw std::out_of_range("factor index out of range");
    if (questions.size() != model.n) {
        throw std::invalid_argument("question list does not match model rows");
    }
    FactorReport report;
    report.factor = factor;
    const Eigen::Index j = static_cast<Eigen::Index>(factor);

    std::vector<std::pair<double, std::size_t>> members;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        const double w = model.a(static_cast<Eigen::Index>(i), j);
        const bool in = membership_threshold == 0.0 ? w > 0.0
                                                    : w >= membership_threshold;
        if (in) members.emplace_back(w, i);
    }
    report.member_count = members.size();
    for (const auto& [w, i] : members) {
        if (questions[i]->answered) ++report.answered_count;
    }
    if (!members.empty()) {
        report.response_rate = floor2(100.0 * static_cast<double>(report.answered_count) /
                                      static_cast<double>(members.size()));
    }

    std::sort(members.begin(), members.end(),
              [&](const auto& a, const auto& b) {
                  if (a.first != b.first) return a.first > b.first;
                  return questions[a.second]->id < questions[b.second]->id;
              });
    for (std::size_t i = 0; i < members.size() && i < top_m; ++i) {
        report.top_questions.emplace_back(questions[members[i].second]->id,
                                          members[i].first);
    }

    std::map<std::string, std::size_t> counts;
    for (const auto& [w, i] : members) {
        std::vector<std::string> tokens;
        for (auto& t : tokenize_words(questions[i]->text)) {
            if (!stopwords.count(t)) tokens.push_back(std::move(t));
        }
        for (int len = ngram_range.first; len <= ngram_range.second; ++len) {
            if (len < 1 || tokens.size() < static_cast<std::size_t>(len)) continue;
            for (std::size_t s = 0; s + static_cast<std::size_t>(len) <= tokens.size(); ++s) {
                std::string gram = tokens[s];
                for (int o = 1; o < len; ++o) {
                    gram += ' ';
                    gram += tokens[s + static_cast<std::size_t>(o)];
                }
                ++counts[gram];
            }
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                            counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > max_ngrams) ranked.resize(max_ngrams);
    report.frequent_ngrams = std::move(ranked);
    return report;
}

std::string serialize_model(const FactorModelFile& file) {
    json a_entries = json::array();
    for (Eigen::Index i = 0; i < file.model.a.rows(); ++i) {
        for (Eigen::Index j = 0; j < file.model.a.cols(); ++j) {
            const double v = file.model.a(i, j);
            if (v != 0.0) a_entries.push_back({i, j, v});
        }
    }
    json d_rows = json::array();
    for (Eigen::Index i = 0; i < file.model.d.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < file.model.d.cols(); ++j) {
            row.push_back(file.model.d(i, j));
        }
        d_rows.push_back(std::move(row));
    }
    json v_rows = json::array();
    for (Eigen::Index i = 0; i < file.svd_v.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < file.svd_v.cols(); ++j) {
            row.push_back(file.svd_v(i, j));
        }
        v_rows.push_back(std::move(row));
    }
    const json j{{"format", "qfactor-nnse-v1"},
                 {"n", file.model.n},
                 {"k", file.model.k},
                 {"r", file.model.r},
                 {"lambda1", file.model.lambda1},
                 {"iterations", file.model.iterations},
                 {"converged", file.model.converged},
                 {"a", std::move(a_entries)},
                 {"d", std::move(d_rows)},
                 {"question_ids", file.question_ids},
                 {"vocabulary", file.vocabulary},
                 {"svd_v", std::move(v_rows)},
                 {"svd_s", file.svd_s}};
    return j.dump(2) + "\n";
}

FactorModelFile deserialize_model(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || j.value("format", "") != "qfactor-nnse-v1") {
        throw std::runtime_error("not a qfactor model file");
    }
    FactorModelFile file;
    file.model.n = j.at("n").get<std::size_t>();
    file.model.k = j.at("k").get<std::size_t>();
    file.model.r = j.at("r").get<std::size_t>();
    file.model.lambda1 = j.at("lambda1").get<double>();
    file.model.iterations = j.at("iterations").get<std::size_t>();
    file.model.converged = j.at("converged").get<bool>();
    file.model.a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(file.model.n),
                                         static_cast<Eigen::Index>(file.model.k));
    for (const auto& e : j.at("a")) {
        file.model.a(e.at(0).get<Eigen::Index>(), e.at(1).get<Eigen::Index>()) =
            e.at(2).get<double>();
    }
    file.model.d.resize(static_cast<Eigen::Index>(file.model.k),
                        static_cast<Eigen::Index>(file.model.r));
    const auto& d_rows = j.at("d");
    for (Eigen::Index i = 0; i < file.model.d.rows(); ++i) {
        const auto& row = d_rows.at(static_cast<std::size_t>(i));
        for (Eigen::Index c = 0; c < file.model.d.cols(); ++c) {
            file.model.d(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    file.question_ids = j.at("question_ids").get<std::vector<std::string>>();
    file.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    const auto& v_rows = j.at("svd_v");
    file.svd_v.resize(static_cast<Eigen::Index>(v_rows.size()),
                      static_cast<Eigen::Index>(file.model.r));
    for (Eigen::Index i = 0; i < file.svd_v.rows(); ++i) {
        const auto& row = v_rows.at(static_cast<std::size_t>(i));
        for (Eigen::Index c = 0; c < file.svd_v.cols(); ++c) {
            file.svd_v(i, c) = row.at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    file.svd_s = j.at("svd_s").get<std::vector<double>>();
    return file;
}

}  // namespace qfactor
