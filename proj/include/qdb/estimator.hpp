#pragma once

#include <Eigen/Dense>
#include <string>

#include "qdb/config.hpp"
#include "qdb/data.hpp"
#include "qdb/lasso.hpp"
#include "qdb/model.hpp"
#include "qdb/weights.hpp"

namespace qdb {

struct StageError : std::runtime_error {
    std::string stage;
    bool solver_failure = false;
    StageError(std::string stage_name, const std::string& msg, bool solver)
        : std::runtime_error("estimate[" + stage_name + "]: " + msg),
          stage(std::move(stage_name)),
          solver_failure(solver) {}
};

struct QuantileEstimate {
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

    LassoFit lasso;
    WeightSolution weights;
    double response_center = 0.0;  // applied when the response was standardized
    double response_scale = 1.0;
};

struct ContrastEstimate {
    double m_hat = 0.0;
    QuantileEstimate group0, group1;
    double ci_lower = 0.0;
    double ci_upper = 0.0;
};

struct VarianceParts {
    double sigma2 = 0.0;
    double t = 0.0;
    double v1 = 0.0;
    double v2 = 0.0;
};

struct AdjustedRoot {
    double q = 0.0;
    double residual = 0.0;
};

// Root of q -> (1/n) sum_i h(q, x_i'beta) - tau by bracketed bisection.
double pilot_quantile(const Dataset& data, const ConditionalModel& model,
                      const Eigen::VectorXd& beta, double tau_level);

// Global minimizer of
//   G(q) = | (1/n) sum_i h(q, x_i'beta)
//           + sum_{delta=1} w_i { I[Y_i <= q] - h(q, x_i'beta) } - tau |
// over the real line. weights align with data.observed_indices(). Breakpoint
// enumeration with per-interval root search; the smallest minimizer wins
// ties within 1e-12.
AdjustedRoot adjusted_solve(const Dataset& data, const ConditionalModel& model,
                            const Eigen::VectorXd& beta, const Eigen::VectorXd& weights,
                            double tau_level);

// Plug-in variance pieces evaluated at the pilot quantile:
//   T = (1/n) sum f(q~, x_i'beta)
//   V1 = n sum_{delta=1} w_i^2 h(q~,.){1 - h(q~,.)}
//   V2 = (1/n) sum h(q~,.)^2 - ((1/n) sum h(q~,.))^2
//   sigma2 = (V1 + V2) / T^2.
VarianceParts variance_estimate(const Dataset& data, const ConditionalModel& model,
                                const Eigen::VectorXd& beta, double q_pilot,
                                const Eigen::VectorXd& weights);

std::pair<double, double> confidence_interval(double q_hat, double sigma2, Eigen::Index n,
                                              double alpha = 0.05);

// The full three-step pipeline: CV lasso -> pilot -> weights -> adjusted
// solve -> variance -> interval.
QuantileEstimate estimate(const Dataset& data, const ConditionalModel& model,
                          const RunConfig& config);

// Two-sample quantile contrast with independent groups.
ContrastEstimate contrast(const Dataset& data0, const Dataset& data1,
                          const ConditionalModel& model, const RunConfig& config);

}  // namespace qdb
