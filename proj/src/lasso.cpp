#include "qdb/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "qdb/normal.hpp"

namespace qdb {

namespace {

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

// Cyclic coordinate descent for
//   0.5 * sum_i W_i (z_i - b0 - x_i'beta)^2 + lambda * ||beta||_1,
// intercept optional and unpenalized. Returns max coefficient change of the
// final sweep; beta/b0 updated in place.
struct QuadCd {
    const Eigen::MatrixXd& x;   // rows already restricted to the fitting units
    const Eigen::VectorXd& z;
    const Eigen::VectorXd& w;
    double lambda;
    bool with_intercept;

    int run(Eigen::VectorXd& beta, double& b0, double tol, int max_sweeps,
            double coef_bound, bool& hit_bound) {
        const Eigen::Index p = x.cols();
        Eigen::VectorXd colsq(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            colsq(j) = x.col(j).cwiseAbs2().dot(w);
        }
        double wsum = w.sum();
        Eigen::VectorXd r = z - x * beta;
        if (with_intercept) r.array() -= b0;
        int sweep = 0;
        for (; sweep < max_sweeps; ++sweep) {
            double max_change = 0.0;
            if (with_intercept) {
                double step = r.dot(w) / wsum;
                double nb0 = std::clamp(b0 + step, -coef_bound, coef_bound);
                if (nb0 != b0 + step) hit_bound = true;
                r.array() -= (nb0 - b0);
                max_change = std::max(max_change, std::abs(nb0 - b0));
                b0 = nb0;
            }
            for (Eigen::Index j = 0; j < p; ++j) {
                if (colsq(j) <= 0.0) continue;
                double g = x.col(j).cwiseProduct(w).dot(r);
                double rho = g + colsq(j) * beta(j);
                double nb = soft_threshold(rho, lambda) / colsq(j);
                double cb = std::clamp(nb, -coef_bound, coef_bound);
                if (cb != nb) hit_bound = true;
                if (cb != beta(j)) {
                    r -= x.col(j) * (cb - beta(j));
                    max_change = std::max(max_change, std::abs(cb - beta(j)));
                    beta(j) = cb;
                }
            }
            if (max_change <= tol) {
                ++sweep;
                break;
            }
        }
        return sweep;
    }
};

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
    return out;
}

Eigen::VectorXd entries_of(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(idx[k]);
    return out;
}

double penalized_nll(const Eigen::MatrixXd& xo, const Eigen::VectorXd& yo,
                     const ConditionalModel& model, const Eigen::VectorXd& beta, double lambda) {
    Eigen::VectorXd u = xo * beta;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < yo.size(); ++i) nll += model.neg_log_density(yo(i), u(i));
    return nll + lambda * beta.lpNorm<1>();
}

// Core fit on materialized complete-case rows; warm start via opts.
LassoFit fit_lasso_cc(const Eigen::MatrixXd& xo, const Eigen::VectorXd& yo,
                      const ConditionalModel& model, double lambda, const LassoOptions& opts) {
    const Eigen::Index p = xo.cols();
    LassoFit fit;
    fit.lambda = lambda;
    fit.beta = opts.warm_start.size() == p ? opts.warm_start : Eigen::VectorXd::Zero(p);

    const bool quad = model.quadratic_index_loss();
    const int max_outer = quad ? 1 : 200;
    double b0 = 0.0;
    bool hit_bound = false;
    int total_sweeps = 0;
    bool converged = false;
    for (int outer = 0; outer < max_outer; ++outer) {
        Eigen::VectorXd u = xo * fit.beta;
        Eigen::VectorXd w(yo.size()), z(yo.size());
        for (Eigen::Index i = 0; i < yo.size(); ++i) {
            double curv = std::max(model.nld_index_curv(yo(i), u(i)), 1e-6);
            w(i) = curv;
            z(i) = u(i) - model.nld_index_grad(yo(i), u(i)) / curv;
        }
        QuadCd cd{xo, z, w, lambda, false};
        Eigen::VectorXd before = fit.beta;
        int sweeps_left = std::max(1, opts.max_sweeps - total_sweeps);
        int used;
        if (opts.record_sweep_objectives && quad) {
            // Sweep-at-a-time so the objective trace can be recorded.
            used = 0;
            fit.sweep_objectives.push_back(penalized_nll(xo, yo, model, fit.beta, lambda));
            for (int s = 0; s < sweeps_left; ++s) {
                Eigen::VectorXd prev = fit.beta;
                cd.run(fit.beta, b0, 0.0, 1, 1e18, hit_bound);
                ++used;
                fit.sweep_objectives.push_back(penalized_nll(xo, yo, model, fit.beta, lambda));
                if ((fit.beta - prev).cwiseAbs().maxCoeff() <= opts.tol) break;
            }
        } else {
            used = cd.run(fit.beta, b0, opts.tol, sweeps_left, 1e18, hit_bound);
        }
        total_sweeps += used;
        if (quad) {
            converged = used < sweeps_left || (xo * (fit.beta - before)).norm() == 0.0;
            if (opts.record_sweep_objectives) converged = true;
            break;
        }
        if ((fit.beta - before).cwiseAbs().maxCoeff() <= 10 * opts.tol) {
            converged = true;
            break;
        }
        if (total_sweeps >= opts.max_sweeps) break;
    }
    fit.n_iter = total_sweeps;
    fit.converged = converged || total_sweeps < opts.max_sweeps;
    fit.objective = penalized_nll(xo, yo, model, fit.beta, lambda);
    return fit;
}

std::vector<std::vector<Eigen::Index>> make_folds(const std::vector<Eigen::Index>& units,
                                                  int folds, std::uint64_t seed) {
    std::vector<Eigen::Index> shuffled = units;
    std::mt19937_64 rng(seed);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(folds));
    for (std::size_t k = 0; k < shuffled.size(); ++k) {
        out[k % static_cast<std::size_t>(folds)].push_back(shuffled[k]);
    }
    return out;
}

}  // namespace

LassoFit fit_lasso(const Dataset& data, const ConditionalModel& model, double lambda,
                   const LassoOptions& opts) {
    data.validate();
    if (!(lambda > 0.0)) throw std::invalid_argument("fit_lasso: lambda must be positive");
    auto obs = data.observed_indices();
    Eigen::MatrixXd xo = rows_of(data.x, obs);
    Eigen::VectorXd yo = entries_of(data.y, obs);
    return fit_lasso_cc(xo, yo, model, lambda, opts);
}

std::vector<double> default_lambda_grid(const Dataset& data, const ConditionalModel& model,
                                        int size) {
    auto obs = data.observed_indices();
    Eigen::MatrixXd xo = rows_of(data.x, obs);
    Eigen::VectorXd yo = entries_of(data.y, obs);
    // Gradient of the unpenalized loss at beta = 0.
    Eigen::VectorXd g(xo.cols());
    Eigen::VectorXd grad0(yo.size());
    for (Eigen::Index i = 0; i < yo.size(); ++i) grad0(i) = model.nld_index_grad(yo(i), 0.0);
    g = xo.transpose() * grad0;
    double lmax = g.cwiseAbs().maxCoeff();
    if (!(lmax > 0.0)) lmax = 1.0;
    std::vector<double> grid(static_cast<std::size_t>(size));
    double lo = std::log(1e-3 * lmax), hi = std::log(lmax);
    for (int k = 0; k < size; ++k) {
        double t = size == 1 ? 1.0 : static_cast<double>(k) / (size - 1);
        grid[static_cast<std::size_t>(k)] = std::exp(lo + t * (hi - lo));
    }
    return grid;
}

CvResult cross_validate_lambda(const Dataset& data, const ConditionalModel& model,
                               const std::vector<double>& grid, int folds, std::uint64_t seed) {
    data.validate();
    if (folds < 2) throw std::invalid_argument("cross_validate_lambda: folds must be >= 2");
    if (grid.empty()) throw std::invalid_argument("cross_validate_lambda: empty grid");
    for (double l : grid) {
        if (!(l > 0.0)) throw std::invalid_argument("cross_validate_lambda: grid values must be > 0");
    }
    auto obs = data.observed_indices();
    auto fold_units = make_folds(obs, folds, seed);

    std::vector<double> sorted(grid);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    CvResult res;
    std::vector<double> loss_sum(sorted.size(), 0.0);
    std::vector<Eigen::Index> loss_count(sorted.size(), 0);
    for (int k = 0; k < folds; ++k) {
        const auto& held = fold_units[static_cast<std::size_t>(k)];
        if (held.empty()) {
            ++res.skipped_folds;
            continue;
        }
        std::vector<Eigen::Index> train;
        for (int k2 = 0; k2 < folds; ++k2) {
            if (k2 == k) continue;
            const auto& f = fold_units[static_cast<std::size_t>(k2)];
            train.insert(train.end(), f.begin(), f.end());
        }
        if (train.empty()) {
            ++res.skipped_folds;
            continue;
        }
        Eigen::MatrixXd xt = rows_of(data.x, train);
        Eigen::VectorXd yt = entries_of(data.y, train);
        Eigen::MatrixXd xh = rows_of(data.x, held);
        Eigen::VectorXd yh = entries_of(data.y, held);
        LassoOptions o;
        for (std::size_t gi = 0; gi < sorted.size(); ++gi) {
            LassoFit f = fit_lasso_cc(xt, yt, model, sorted[gi], o);
            o.warm_start = f.beta;
            Eigen::VectorXd uh = xh * f.beta;
            for (Eigen::Index i = 0; i < yh.size(); ++i) {
                loss_sum[gi] += model.neg_log_density(yh(i), uh(i));
            }
            loss_count[gi] += yh.size();
        }
    }
    if (loss_count.empty() || loss_count[0] == 0) {
        throw std::runtime_error("cross_validate_lambda: no usable folds");
    }
    double best = std::numeric_limits<double>::infinity();
    double best_lambda = sorted.front();
    for (std::size_t gi = 0; gi < sorted.size(); ++gi) {
        double mean_loss = loss_sum[gi] / static_cast<double>(loss_count[gi]);
        res.curve.emplace_back(sorted[gi], mean_loss);
        if (mean_loss < best) {  // descending grid: ties keep the larger lambda
            best = mean_loss;
            best_lambda = sorted[gi];
        }
    }
    res.lambda = best_lambda;
    return res;
}

LassoFit fit_logistic_lasso(const Dataset& data, double lambda, const LassoOptions& opts) {
    // delta is the outcome here, so an all-zero delta is a legal (if
    // degenerate) input; only shapes and finiteness are checked.
    if (data.n() < 2 || data.p() < 1 || data.delta.size() != data.n() || !data.x.allFinite()) {
        throw std::invalid_argument("fit_logistic_lasso: invalid dataset");
    }
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        if (data.delta(i) != 0 && data.delta(i) != 1) {
            throw std::invalid_argument("fit_logistic_lasso: delta entries must be 0 or 1");
        }
    }
    if (!(lambda > 0.0)) throw std::invalid_argument("fit_logistic_lasso: lambda must be positive");
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    Eigen::VectorXd d = data.delta.cast<double>();

    LassoFit fit;
    fit.lambda = lambda;
    fit.beta = opts.warm_start.size() == p ? opts.warm_start : Eigen::VectorXd::Zero(p);
    const bool degenerate_outcome = d.mean() <= 0.0 || d.mean() >= 1.0;
    double dbar = std::clamp(d.mean(), 1e-12, 1.0 - 1e-12);
    fit.intercept = std::clamp(std::log(dbar / (1.0 - dbar)), -kLogisticCoefBound, kLogisticCoefBound);

    bool hit_bound = false;
    int total_sweeps = 0;
    const int max_outer = 200;
    for (int outer = 0; outer < max_outer; ++outer) {
        Eigen::VectorXd m = (data.x * fit.beta).array() + fit.intercept;
        Eigen::VectorXd w(n), z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double pi = expit(m(i));
            double wi = std::max(pi * (1.0 - pi), 1e-6);
            w(i) = wi;
            z(i) = m(i) + (d(i) - pi) / wi;
        }
        QuadCd cd{data.x, z, w, lambda, true};
        Eigen::VectorXd before = fit.beta;
        double b0_before = fit.intercept;
        total_sweeps += cd.run(fit.beta, fit.intercept, opts.tol, 1000, kLogisticCoefBound, hit_bound);
        double change = std::max((fit.beta - before).cwiseAbs().maxCoeff(),
                                 std::abs(fit.intercept - b0_before));
        if (change <= 10 * opts.tol) {
            fit.converged = true;
            break;
        }
    }
    fit.n_iter = total_sweeps;
    fit.separation = degenerate_outcome || hit_bound ||
                     std::abs(fit.intercept) >= kLogisticCoefBound - 1e-9 ||
                     (p > 0 && fit.beta.cwiseAbs().maxCoeff() >= kLogisticCoefBound - 1e-9);
    Eigen::VectorXd m = (data.x * fit.beta).array() + fit.intercept;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) nll += log1pexp(m(i)) - d(i) * m(i);
    fit.objective = nll + lambda * fit.beta.lpNorm<1>();
    return fit;
}

std::vector<double> default_logistic_lambda_grid(const Dataset& data, int size) {
    Eigen::VectorXd d = data.delta.cast<double>();
    Eigen::VectorXd centered = d.array() - d.mean();
    double lmax = (data.x.transpose() * centered).cwiseAbs().maxCoeff();
    if (!(lmax > 0.0)) lmax = 1.0;
    std::vector<double> grid(static_cast<std::size_t>(size));
    double lo = std::log(1e-3 * lmax), hi = std::log(lmax);
    for (int k = 0; k < size; ++k) {
        double t = size == 1 ? 1.0 : static_cast<double>(k) / (size - 1);
        grid[static_cast<std::size_t>(k)] = std::exp(lo + t * (hi - lo));
    }
    return grid;
}

CvResult cross_validate_logistic_lambda(const Dataset& data, const std::vector<double>& grid,
                                        int folds, std::uint64_t seed) {
    data.validate();
    if (folds < 2) throw std::invalid_argument("cross_validate_logistic_lambda: folds must be >= 2");
    if (grid.empty()) throw std::invalid_argument("cross_validate_logistic_lambda: empty grid");
    std::vector<Eigen::Index> all(static_cast<std::size_t>(data.n()));
    std::iota(all.begin(), all.end(), 0);
    auto fold_units = make_folds(all, folds, seed);

    std::vector<double> sorted(grid);
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());

    CvResult res;
    std::vector<double> loss_sum(sorted.size(), 0.0);
    std::vector<Eigen::Index> loss_count(sorted.size(), 0);
    for (int k = 0; k < folds; ++k) {
        const auto& held = fold_units[static_cast<std::size_t>(k)];
        if (held.empty()) {
            ++res.skipped_folds;
            continue;
        }
        std::vector<Eigen::Index> train;
        for (int k2 = 0; k2 < folds; ++k2) {
            if (k2 == k) continue;
            const auto& f = fold_units[static_cast<std::size_t>(k2)];
            train.insert(train.end(), f.begin(), f.end());
        }
        Dataset sub;
        sub.x = rows_of(data.x, train);
        sub.y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(train.size()));
        sub.delta = Eigen::VectorXi(static_cast<Eigen::Index>(train.size()));
        for (std::size_t i = 0; i < train.size(); ++i) {
            sub.delta(static_cast<Eigen::Index>(i)) = data.delta(train[i]);
        }
        LassoOptions o;
        for (std::size_t gi = 0; gi < sorted.size(); ++gi) {
            LassoFit f = fit_logistic_lasso(sub, sorted[gi], o);
            o.warm_start = f.beta;
            for (Eigen::Index hi_i = 0; hi_i < static_cast<Eigen::Index>(held.size()); ++hi_i) {
                Eigen::Index i = held[static_cast<std::size_t>(hi_i)];
                double m = data.x.row(i).dot(f.beta) + f.intercept;
                loss_sum[gi] += log1pexp(m) - static_cast<double>(data.delta(i)) * m;
            }
            loss_count[gi] += static_cast<Eigen::Index>(held.size());
        }
    }
    double best = std::numeric_limits<double>::infinity();
    double best_lambda = sorted.front();
    for (std::size_t gi = 0; gi < sorted.size(); ++gi) {
        double mean_loss = loss_sum[gi] / static_cast<double>(std::max<Eigen::Index>(loss_count[gi], 1));
        res.curve.emplace_back(sorted[gi], mean_loss);
        if (mean_loss < best) {
            best = mean_loss;
            best_lambda = sorted[gi];
        }
    }
    res.lambda = best_lambda;
    return res;
}

}  // namespace qdb
