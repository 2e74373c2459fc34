#include "qdb/aipw.hpp"

#include <cmath>

#include "qdb/normal.hpp"

namespace qdb {

AipwEstimate estimate_aipw(const Dataset& data, const ConditionalModel& model,
                           const RunConfig& config,
                           const std::optional<Eigen::VectorXd>& oracle_probs) {
    config.validate();
    data.validate();
    const Eigen::Index n = data.n();
    AipwEstimate est;
    est.tau_level = config.tau_level;
    est.alpha = config.alpha;

    {
        std::vector<double> grid =
            config.lambda_grid.empty() ? default_lambda_grid(data, model) : config.lambda_grid;
        CvResult cv = cross_validate_lambda(data, model, grid, config.cv_folds, config.seed);
        est.lasso = fit_lasso(data, model, cv.lambda);
        est.lasso.cv_curve = cv.curve;
    }

    if (oracle_probs.has_value()) {
        if (oracle_probs->size() != n) {
            throw std::invalid_argument("estimate_aipw: oracle probabilities length mismatch");
        }
        est.fitted_probs = *oracle_probs;
        est.gamma = Eigen::VectorXd::Zero(data.p());
        est.gamma_intercept = 0.0;
    } else {
        CvResult cv = cross_validate_logistic_lambda(data, default_logistic_lambda_grid(data),
                                                     config.cv_folds, config.seed);
        est.logistic = fit_logistic_lasso(data, cv.lambda);
        est.logistic.cv_curve = cv.curve;
        est.gamma = est.logistic.beta;
        est.gamma_intercept = est.logistic.intercept;
        est.fitted_probs.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            est.fitted_probs(i) = expit(est.gamma_intercept + data.x.row(i).dot(est.gamma));
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (est.fitted_probs(i) < kPropensityFloor) {
            est.fitted_probs(i) = kPropensityFloor;
            ++est.clamp_count;
        }
        est.fitted_probs(i) = std::min(est.fitted_probs(i), 1.0);
    }
    est.heavy_clamping = est.clamp_count > n / 10;

    auto obs = data.observed_indices();
    Eigen::VectorXd w(static_cast<Eigen::Index>(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) {
        w(static_cast<Eigen::Index>(k)) = 1.0 / (static_cast<double>(n) * est.fitted_probs(obs[k]));
    }
    if (config.normalized_aipw) {
        w /= w.sum();
    }

    est.q_pilot = pilot_quantile(data, model, est.lasso.beta, config.tau_level);
    AdjustedRoot root = adjusted_solve(data, model, est.lasso.beta, w, config.tau_level);
    est.q_hat = root.q;
    est.eq_residual = root.residual;
    VarianceParts var = variance_estimate(data, model, est.lasso.beta, est.q_pilot, w);
    est.t_hat = var.t;
    est.v1_hat = var.v1;
    est.v2_hat = var.v2;
    est.sigma2_hat = var.sigma2;
    auto ci = confidence_interval(est.q_hat, est.sigma2_hat, n, config.alpha);
    est.ci_lower = ci.first;
    est.ci_upper = ci.second;
    return est;
}

}  // namespace qdb
