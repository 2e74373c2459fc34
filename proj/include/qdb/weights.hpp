#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdb/data.hpp"
#include "qdb/model.hpp"

namespace qdb {

// Moments of the balance program built from the pilot estimates. tau holds
// h(1-h) per observed unit (clamped away from zero), b the per-observed-unit
// balance rows hdot_u(q~, x_i'bhat) x_i, and a the full-sample average of
// those rows.
struct BalanceProblem {
    Eigen::VectorXd tau;   // n1
    Eigen::MatrixXd b;     // n1 x p
    Eigen::VectorXd a;     // p
    double delta_cap = 0.0;
    Eigen::Index n = 0;
    Eigen::Index n1 = 0;
    int clamped_tau_count = 0;

    void validate() const;
    double imbalance(const Eigen::VectorXd& w) const;  // ||a - b'w||_inf
    double objective(const Eigen::VectorXd& w) const;  // sum w_i^2 tau_i
};

struct WeightSolution {
    Eigen::VectorXd w;                    // over observed units
    double zeta = 0.0;
    double gamma = 0.0;                   // achieved Gamma
    double objective = 0.0;               // sum w_i^2 tau_i
    double constraint_residual = 0.0;     // achieved infinity-norm imbalance
    double c_used = 0.0;
    double delta_cap = 0.0;
    std::optional<Eigen::VectorXd> eta;   // dual vector, length p+1

    int iterations = 0;
    double kkt_residual = 0.0;
    bool polished = false;
    bool hard_fallback = false;
    int clamped_tau_count = 0;
    int frozen_coordinates = 0;
    int feasibility_escalations = 0;
};

struct SolverError : std::runtime_error {
    WeightSolution best;
    SolverError(const std::string& msg, WeightSolution iterate)
        : std::runtime_error(msg), best(std::move(iterate)) {}
};

// Delta = c * n^{-5/16} * (log p)^{1/8}.
double delta_schedule(Eigen::Index n, Eigen::Index p, double c);

// Pilot clamp for h outside (eps_h, 1 - eps_h).
inline constexpr double kTauClampEps = 1e-6;

BalanceProblem build_balance_problem(const Dataset& data, const ConditionalModel& model,
                                     const Eigen::VectorXd& beta, double q_pilot,
                                     double delta_cap);

// Joint minimizer over (w, Gamma) of
//   (1 - zeta) * sum w_i^2 tau_i + zeta * Gamma^2
// subject to ||a - b'w||_inf <= Gamma and sum w = 1. Operator-splitting
// iterations with an active-set polish; KKT residuals <= 1e-6 or throws
// SolverError with the best iterate.
WeightSolution solve_weights_primal(const BalanceProblem& prob, double zeta);

// Hard-constraint form: minimize sum w_i^2 tau_i subject to
// ||a - b'w||_inf <= delta_cap and sum w = 1.
WeightSolution solve_weights_constrained(const BalanceProblem& prob);

// Minimum achievable ||a - b'w||_inf over sum w = 1 (the feasibility check).
double min_imbalance(const BalanceProblem& prob);

struct ZetaSelection {
    double zeta = 0.0;
    std::size_t selected = 0;
    std::vector<double> grid;
    std::vector<WeightSolution> solutions;  // aligned with grid
    std::vector<double> criterion;          // NaN where the solve failed
    std::vector<bool> solved;
    int failures = 0;
};

// Solves the penalized program on the grid {0, 0.01, ..., 0.99} and picks
// the zeta maximizing
//   sum w_i^2 tau_i + zeta/(1-zeta) * (imbalance^2 - Delta^2),
// ties toward the smaller zeta.
ZetaSelection select_zeta(const BalanceProblem& prob);
ZetaSelection select_zeta(const BalanceProblem& prob, const std::vector<double>& grid);

// Full weight construction: Delta from the schedule at c = c0, feasibility
// escalation in steps of 0.01 up to c = 5.0, then the zeta-grid solve. If
// the selected solution overshoots the Delta constraint beyond 1e-6 the
// hard-constraint solve replaces the weights (flagged hard_fallback).
WeightSolution compute_weights(const Dataset& data, const ConditionalModel& model,
                               const Eigen::VectorXd& beta, double q_pilot, double c0 = 0.10);

// L1-penalized dual route: eta minimizes
//   (1/4n) sum_{delta=1} (eta'A_i)^2 / tau_i - (1/n) sum_all A_i'eta
//     + Delta * ||eta_{1..p}||_1
// with A_i = (b_i', 1)'; weights are w_i = A_i'eta / (2 n tau_i).
WeightSolution solve_weights_dual(const BalanceProblem& prob);

}  // namespace qdb
