#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qdb/config.hpp"
#include "qdb/data.hpp"

namespace qdb {

enum class DgpKind { dgp1 = 1, dgp2 = 2 };

// The two data-generating processes of the simulation study. Y given X is
// N(0.25 X1 + 0.125 X2 + 0.25 X3 + 0.125 X4, 1); the missingness law is
// logistic in the cubic-transformed covariates under DGP1 (misspecified
// working model) and in the raw covariates under DGP2 (correct model).
struct DgpSpec {
    DgpKind kind = DgpKind::dgp2;
    Eigen::Index n = 400;
    Eigen::Index p = 100;
    double tau_level = 0.5;
    double q0 = 0.0;

    Eigen::VectorXd beta_true() const;
    void validate() const;
};

struct RepRecord {
    int rep = 0;
    bool ok = false;
    std::string error;
    double q_hat = 0.0;
    double sigma_hat = 0.0;  // sqrt(sigma2_hat)
    double ci_lower = 0.0;
    double ci_upper = 0.0;
    bool covered = false;
    double c_used = 0.0;
    double zeta = 0.0;
};

struct McReport {
    std::string estimator;
    double bias = 0.0;
    double sd = 0.0;
    double rmse = 0.0;
    double cp = 0.0;
    double esd = 0.0;
    int n_reps = 0;  // successful replications
    int failures = 0;
    std::vector<RepRecord> reps;
};

// Independent substream for replication `rep` of a study seeded by `seed`.
std::mt19937_64 rng_for_rep(std::uint64_t seed, std::uint64_t rep);

// Columns 1-2 iid U(-5,5); remaining columns iid N(0, 1/2) truncated to
// [-5, 5] by rejection.
Eigen::MatrixXd gen_covariates(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng);

// x_j - x_j^2 + 2 x_j^3 on the first four coordinates, identity elsewhere.
Eigen::VectorXd dagger_transform(const Eigen::VectorXd& x);

// True selection probability of the DGP at covariate row x.
double true_selection_prob(const Eigen::VectorXd& x, DgpKind kind);

void gen_outcome_and_missing(const Eigen::MatrixXd& x, const DgpSpec& spec, std::mt19937_64& rng,
                             Eigen::VectorXd& y, Eigen::VectorXi& delta);

Dataset gen_dataset(const DgpSpec& spec, std::uint64_t seed, std::uint64_t rep);

// Bias / SD / RMSE / CP / ESD over the successful records. Bias compares the
// mean of q_hat to q0, SD uses divisor R-1, RMSE averages squared deviations
// from q0, ESD averages sigma_hat / sqrt(n).
McReport aggregate_records(const std::string& label, double q0, Eigen::Index n,
                           std::vector<RepRecord> records);

// Seeded Monte Carlo study. Reports come back in the order (proposed, aipw)
// when both estimators run. A replication whose estimator throws is recorded
// as failed and excluded; more than 5% failures aborts.
std::vector<McReport> run_study(const DgpSpec& spec, int n_reps, std::uint64_t seed,
                                EstimatorKind which, const RunConfig& base_config = {});

}  // namespace qdb
