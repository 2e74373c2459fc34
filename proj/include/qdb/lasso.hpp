#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "qdb/data.hpp"
#include "qdb/model.hpp"

namespace qdb {

struct LassoFit {
    Eigen::VectorXd beta;
    double intercept = 0.0;  // used by the logistic fit only
    double lambda = 0.0;
    double objective = 0.0;
    int n_iter = 0;
    bool converged = false;
    bool separation = false;
    std::vector<std::pair<double, double>> cv_curve;    // (lambda, mean CV loss)
    std::vector<double> sweep_objectives;               // filled on request
};

struct LassoOptions {
    double tol = 1e-7;       // max coefficient change per sweep
    int max_sweeps = 10000;
    bool record_sweep_objectives = false;
    Eigen::VectorXd warm_start;  // empty = start from zero
};

struct CvResult {
    double lambda = 0.0;
    std::vector<std::pair<double, double>> curve;
    int skipped_folds = 0;
};

// Complete-case penalized maximum likelihood:
//   argmin_beta  -sum_{delta_i=1} log f(Y_i, X_i'beta) + lambda * ||beta||_1
// by cyclic coordinate descent (exact soft-threshold steps when the model's
// index loss is quadratic, outer reweighting otherwise).
LassoFit fit_lasso(const Dataset& data, const ConditionalModel& model, double lambda,
                   const LassoOptions& opts = {});

// Fifty log-spaced values from lambda_max (smallest lambda with beta = 0)
// down to 1e-3 * lambda_max.
std::vector<double> default_lambda_grid(const Dataset& data, const ConditionalModel& model,
                                        int size = 50);

// Chooses lambda by K-fold cross validation on held-out complete-case
// negative log-likelihood. Folds partition the observed units; assignment is
// a deterministic function of seed. Ties go to the larger lambda.
CvResult cross_validate_lambda(const Dataset& data, const ConditionalModel& model,
                               const std::vector<double>& grid, int folds, std::uint64_t seed);

// L1-penalized logistic regression of delta on x over all n units, with an
// unpenalized intercept. Coefficients are clamped at +-kLogisticCoefBound
// and the fit is flagged when the bound is hit (complete separation).
inline constexpr double kLogisticCoefBound = 30.0;
LassoFit fit_logistic_lasso(const Dataset& data, double lambda, const LassoOptions& opts = {});

std::vector<double> default_logistic_lambda_grid(const Dataset& data, int size = 50);

// K-fold CV for the logistic fit on held-out deviance, folds over all units.
CvResult cross_validate_logistic_lambda(const Dataset& data, const std::vector<double>& grid,
                                        int folds, std::uint64_t seed);

}  // namespace qdb
