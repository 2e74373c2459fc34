#include "qdb/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "qdb/normal.hpp"

namespace qdb {

namespace {

template <typename F>
auto run_stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const SolverError& e) {
        throw StageError(name, e.what(), true);
    } catch (const std::exception& e) {
        throw StageError(name, e.what(), false);
    }
}

// Smooth part of the adjusted equation at q:
//   S(q) = (1/n) sum_i h(q, u_i) - sum_obs w_k h(q, u_{obs_k}).
struct SmoothPart {
    const ConditionalModel& model;
    const Eigen::VectorXd& u;
    const std::vector<Eigen::Index>& obs;
    const Eigen::VectorXd& w;

    double operator()(double q) const {
        double full = 0.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) full += model.cdf(q, u(i));
        full /= static_cast<double>(u.size());
        double weighted = 0.0;
        for (std::size_t k = 0; k < obs.size(); ++k) {
            weighted += w(static_cast<Eigen::Index>(k)) * model.cdf(q, u(obs[k]));
        }
        return full - weighted;
    }
};

}  // namespace

double pilot_quantile(const Dataset& data, const ConditionalModel& model,
                      const Eigen::VectorXd& beta, double tau_level) {
    data.validate();
    if (!(tau_level > 0.0 && tau_level < 1.0)) {
        throw std::invalid_argument("pilot_quantile: tau must lie in (0,1)");
    }
    if (beta.size() != data.p()) {
        throw std::invalid_argument("pilot_quantile: beta length mismatch");
    }
    Eigen::VectorXd u = data.x * beta;
    auto value = [&](double q) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) s += model.cdf(q, u(i));
        return s / static_cast<double>(u.size()) - tau_level;
    };

    double lo, hi;
    auto obs = data.observed_indices();
    if (!obs.empty()) {
        double ymin = data.y(obs[0]), ymax = data.y(obs[0]);
        for (Eigen::Index i : obs) {
            ymin = std::min(ymin, data.y(i));
            ymax = std::max(ymax, data.y(i));
        }
        lo = ymin - 1.0;
        hi = ymax + 1.0;
    } else {
        lo = u.minCoeff() - 1.0;
        hi = u.maxCoeff() + 1.0;
    }
    double step = std::max(1.0, hi - lo);
    int doublings = 0;
    while (value(lo) > 0.0) {
        lo -= step;
        step *= 2.0;
        if (++doublings > 60) {
            throw std::runtime_error("pilot_quantile: bracket expansion failed (lower)");
        }
    }
    step = std::max(1.0, hi - lo);
    doublings = 0;
    while (value(hi) < 0.0) {
        hi += step;
        step *= 2.0;
        if (++doublings > 60) {
            throw std::runtime_error("pilot_quantile: bracket expansion failed (upper)");
        }
    }
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        mid = 0.5 * (lo + hi);
        double v = value(mid);
        if (std::abs(v) <= 1e-10) break;
        if (v < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return mid;
}

AdjustedRoot adjusted_solve(const Dataset& data, const ConditionalModel& model,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd& weights,
                            double tau_level) {
    data.validate();
    if (!(tau_level > 0.0 && tau_level < 1.0)) {
        throw std::invalid_argument("adjusted_solve: tau must lie in (0,1)");
    }
    auto obs = data.observed_indices();
    if (weights.size() != static_cast<Eigen::Index>(obs.size())) {
        throw std::invalid_argument("adjusted_solve: weights length must match observed units");
    }
    Eigen::VectorXd u = data.x * beta;
    SmoothPart smooth{model, u, obs, weights};

    // Breakpoints: unique observed Y with accumulated jump weights.
    std::map<double, double> jumps;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        jumps[data.y(obs[k])] += weights(static_cast<Eigen::Index>(k));
    }
    std::vector<double> bp;
    std::vector<double> cum;  // weight of I[Y_i <= q] for q in [bp_k, bp_{k+1})
    bp.reserve(jumps.size());
    cum.reserve(jumps.size());
    double running = 0.0;
    for (const auto& [yv, jw] : jumps) {
        running += jw;
        bp.push_back(yv);
        cum.push_back(running);
    }

    // Window wide enough that every conditional CDF is numerically 0/1
    // outside it, making G flat at tau / |1 - tau| in the tails.
    double lo = std::min(bp.front(), u.minCoeff()) - 1.0;
    double hi = std::max(bp.back(), u.maxCoeff()) + 1.0;
    {
        double step = std::max(1.0, hi - lo);
        int guard = 0;
        auto max_h = [&](double q) {
            double m = 0.0;
            for (Eigen::Index i = 0; i < u.size(); ++i) m = std::max(m, model.cdf(q, u(i)));
            return m;
        };
        auto min_h = [&](double q) {
            double m = 1.0;
            for (Eigen::Index i = 0; i < u.size(); ++i) m = std::min(m, model.cdf(q, u(i)));
            return m;
        };
        while (max_h(lo) > 1e-12 && guard++ < 60) {
            lo -= step;
            step *= 2.0;
        }
        step = std::max(1.0, hi - lo);
        guard = 0;
        while (min_h(hi) < 1.0 - 1e-12 && guard++ < 60) {
            hi += step;
            step *= 2.0;
        }
    }

    struct Candidate {
        double q;
        double g;
    };
    std::vector<Candidate> cands;
    auto add = [&](double q, double g) { cands.push_back({q, std::abs(g)}); };

    // One segment per open interval between breakpoints plus the two tails.
    std::vector<double> edges;
    edges.push_back(lo);
    for (double t : bp) {
        if (t > lo && t < hi) edges.push_back(t);
    }
    edges.push_back(hi);

    auto jump_before = [&](double q) {
        // total jump weight of breakpoints <= q
        auto it = std::upper_bound(bp.begin(), bp.end(), q);
        if (it == bp.begin()) return 0.0;
        return cum[static_cast<std::size_t>(std::distance(bp.begin(), it)) - 1];
    };

    for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
        double L = edges[s];
        double R = edges[s + 1];
        double J = jump_before(L);  // constant on [L, R)
        auto m_of = [&](double q) { return smooth(q) + J - tau_level; };

        double len = R - L;
        int nsub = static_cast<int>(std::clamp(std::ceil(len / 0.25), 2.0, 32.0));
        std::vector<double> qs(static_cast<std::size_t>(nsub) + 1);
        std::vector<double> ms(qs.size());
        for (int k = 0; k <= nsub; ++k) {
            double q = L + len * static_cast<double>(k) / nsub;
            qs[static_cast<std::size_t>(k)] = q;
            ms[static_cast<std::size_t>(k)] = m_of(q);
        }
        add(L, ms.front());      // right value at L
        add(R, ms.back());       // left limit at R, reported at the breakpoint
        for (std::size_t k = 0; k + 1 < qs.size(); ++k) {
            double m0 = ms[k], m1 = ms[k + 1];
            if ((m0 < 0.0 && m1 > 0.0) || (m0 > 0.0 && m1 < 0.0)) {
                double a = qs[k], b = qs[k + 1];
                double fa = m0;
                for (int it = 0; it < 100; ++it) {
                    double mid = 0.5 * (a + b);
                    double fm = m_of(mid);
                    if (std::abs(fm) <= 1e-15 || b - a <= 1e-15 * std::max(1.0, std::abs(mid))) {
                        add(mid, fm);
                        break;
                    }
                    if ((fa < 0.0) == (fm < 0.0)) {
                        a = mid;
                        fa = fm;
                    } else {
                        b = mid;
                    }
                    if (it == 99) add(0.5 * (a + b), m_of(0.5 * (a + b)));
                }
            }
        }
        // interior dip of |m| without a sign change: golden-section refine
        for (std::size_t k = 1; k + 1 < qs.size(); ++k) {
            if (std::abs(ms[k]) < std::abs(ms[k - 1]) && std::abs(ms[k]) < std::abs(ms[k + 1])) {
                double a = qs[k - 1], b = qs[k + 1];
                const double gr = 0.6180339887498949;
                double x1 = b - gr * (b - a);
                double x2 = a + gr * (b - a);
                double f1 = std::abs(m_of(x1));
                double f2 = std::abs(m_of(x2));
                for (int it = 0; it < 80 && (b - a) > 1e-12; ++it) {
                    if (f1 <= f2) {
                        b = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = b - gr * (b - a);
                        f1 = std::abs(m_of(x1));
                    } else {
                        a = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = a + gr * (b - a);
                        f2 = std::abs(m_of(x2));
                    }
                }
                double qm = 0.5 * (a + b);
                add(qm, m_of(qm));
            }
        }
    }

    AdjustedRoot best{cands.front().q, cands.front().g};
    for (const Candidate& c : cands) {
        if (c.g < best.residual - 1e-12 ||
            (std::abs(c.g - best.residual) <= 1e-12 && c.q < best.q)) {
            best = {c.q, c.g};
        }
    }
    return best;
}

VarianceParts variance_estimate(const Dataset& data, const ConditionalModel& model,
                                const Eigen::VectorXd& beta, double q_pilot,
                                const Eigen::VectorXd& weights) {
    data.validate();
    auto obs = data.observed_indices();
    if (weights.size() != static_cast<Eigen::Index>(obs.size())) {
        throw std::invalid_argument("variance_estimate: weights length must match observed units");
    }
    Eigen::VectorXd u = data.x * beta;
    const double n = static_cast<double>(data.n());
    VarianceParts out;
    double hsum = 0.0, h2sum = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        out.t += model.density(q_pilot, u(i));
        double h = model.cdf(q_pilot, u(i));
        hsum += h;
        h2sum += h * h;
    }
    out.t /= n;
    if (out.t <= 1e-12) {
        throw std::runtime_error("variance_estimate: density mass vanishes at the pilot quantile");
    }
    out.v2 = std::max(h2sum / n - (hsum / n) * (hsum / n), 0.0);
    for (std::size_t k = 0; k < obs.size(); ++k) {
        double h = model.cdf(q_pilot, u(obs[k]));
        double wk = weights(static_cast<Eigen::Index>(k));
        out.v1 += wk * wk * h * (1.0 - h);
    }
    out.v1 *= n;
    out.sigma2 = (out.v1 + out.v2) / (out.t * out.t);
    return out;
}

std::pair<double, double> confidence_interval(double q_hat, double sigma2, Eigen::Index n,
                                              double alpha) {
    if (!(sigma2 >= 0.0)) throw std::invalid_argument("confidence_interval: sigma2 must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("confidence_interval: alpha must lie in (0,1)");
    }
    double z = normal_quantile(1.0 - alpha / 2.0);
    double half = z * std::sqrt(sigma2 / static_cast<double>(n));
    return {q_hat - half, q_hat + half};
}

QuantileEstimate estimate(const Dataset& data_in, const ConditionalModel& model,
                          const RunConfig& config) {
    config.validate();
    data_in.validate();
    Dataset data = data_in;
    double y_loc = 0.0, y_scale = 1.0;
    if (config.standardize_response) {
        auto obs = data.observed_indices();
        double mean = 0.0;
        for (Eigen::Index i : obs) mean += data.y(i);
        mean /= static_cast<double>(obs.size());
        double ss = 0.0;
        for (Eigen::Index i : obs) ss += (data.y(i) - mean) * (data.y(i) - mean);
        double sd = obs.size() > 1 ? std::sqrt(ss / static_cast<double>(obs.size() - 1)) : 1.0;
        if (!(sd > 0.0)) sd = 1.0;
        for (Eigen::Index i : obs) data.y(i) = (data.y(i) - mean) / sd;
        y_loc = mean;
        y_scale = sd;
    }

    QuantileEstimate est;
    est.tau_level = config.tau_level;
    est.alpha = config.alpha;
    est.response_center = y_loc;
    est.response_scale = y_scale;

    est.lasso = run_stage("lasso", [&] {
        std::vector<double> grid =
            config.lambda_grid.empty() ? default_lambda_grid(data, model) : config.lambda_grid;
        CvResult cv = cross_validate_lambda(data, model, grid, config.cv_folds, config.seed);
        LassoFit fit = fit_lasso(data, model, cv.lambda);
        fit.cv_curve = cv.curve;
        return fit;
    });
    est.q_pilot = run_stage("pilot", [&] {
        return pilot_quantile(data, model, est.lasso.beta, config.tau_level);
    });
    est.weights = run_stage("weights", [&] {
        return compute_weights(data, model, est.lasso.beta, est.q_pilot, config.c0);
    });
    AdjustedRoot root = run_stage("solve", [&] {
        return adjusted_solve(data, model, est.lasso.beta, est.weights.w, config.tau_level);
    });
    est.q_hat = root.q;
    est.eq_residual = root.residual;
    VarianceParts var = run_stage("variance", [&] {
        return variance_estimate(data, model, est.lasso.beta, est.q_pilot, est.weights.w);
    });
    est.t_hat = var.t;
    est.v1_hat = var.v1;
    est.v2_hat = var.v2;
    est.sigma2_hat = var.sigma2;
    auto ci = confidence_interval(est.q_hat, est.sigma2_hat, data.n(), config.alpha);
    est.ci_lower = ci.first;
    est.ci_upper = ci.second;

    if (config.standardize_response) {
        est.q_hat = est.q_hat * y_scale + y_loc;
        est.q_pilot = est.q_pilot * y_scale + y_loc;
        est.ci_lower = est.ci_lower * y_scale + y_loc;
        est.ci_upper = est.ci_upper * y_scale + y_loc;
        est.sigma2_hat *= y_scale * y_scale;
        est.t_hat /= y_scale;  // density transforms with 1/scale
    }
    return est;
}

ContrastEstimate contrast(const Dataset& data0, const Dataset& data1,
                          const ConditionalModel& model, const RunConfig& config) {
    ContrastEstimate out;
    out.group0 = estimate(data0, model, config);
    out.group1 = estimate(data1, model, config);
    out.m_hat = out.group1.q_hat - out.group0.q_hat;
    double z = normal_quantile(1.0 - config.alpha / 2.0);
    double se = std::sqrt(out.group1.sigma2_hat / static_cast<double>(data1.n()) +
                          out.group0.sigma2_hat / static_cast<double>(data0.n()));
    out.ci_lower = out.m_hat - z * se;
    out.ci_upper = out.m_hat + z * se;
    return out;
}

}  // namespace qdb
