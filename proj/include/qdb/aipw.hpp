#pragma once

#include <Eigen/Dense>
#include <optional>

#include "qdb/config.hpp"
#include "qdb/data.hpp"
#include "qdb/estimator.hpp"
#include "qdb/lasso.hpp"
#include "qdb/model.hpp"

namespace qdb {

inline constexpr double kPropensityFloor = 0.01;

struct AipwEstimate {
    double q_hat = 0.0;
    double q_pilot = 0.0;
    double tau_level = 0.5;
    double sigma2_hat = 0.0;
    double t_hat = 0.0;
    double v1_hat = 0.0;
    double v2_hat = 0.0;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    double alpha = 0.05;
    double eq_residual = 0.0;

    Eigen::VectorXd gamma;        // logistic slopes
    double gamma_intercept = 0.0;
    Eigen::VectorXd fitted_probs; // per unit, clamped below at kPropensityFloor
    int clamp_count = 0;
    bool heavy_clamping = false;

    LassoFit lasso;
    LassoFit logistic;
};

// Augmented inverse probability weighted benchmark: beta by the complete-case
// lasso, gamma by the logistic lasso (own 10-fold CV on deviance), weights
// w_i = 1 / (n ghat_i) on observed units (normalized variant behind the
// config flag), then the same breakpoint solve of the adjusted equation.
// oracle_probs, when given, replaces the fitted selection probabilities.
AipwEstimate estimate_aipw(const Dataset& data, const ConditionalModel& model,
                           const RunConfig& config,
                           const std::optional<Eigen::VectorXd>& oracle_probs = std::nullopt);

}  // namespace qdb
