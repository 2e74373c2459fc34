#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qdb/lasso.hpp"
#include "qdb/normal.hpp"
#include "qdb/simulate.hpp"

using qdb::Dataset;
using qdb::LassoFit;
using qdb::NormalLinearModel;

namespace {

Dataset complete_gaussian(int n, int p, std::uint64_t seed, const Eigen::VectorXd& beta,
                          double noise = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    Dataset d;
    d.x.resize(n, p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) d.x(i, j) = norm(rng);
    }
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = d.x.row(i).dot(beta) + noise * norm(rng);
    d.delta = Eigen::VectorXi::Ones(n);
    qdb::center_columns(d);
    return d;
}

double soft(double v, double t) { return std::copysign(std::max(std::abs(v) - t, 0.0), v); }

}  // namespace

TEST_CASE("huge penalty zeroes the fit") {
    Dataset d = complete_gaussian(40, 5, 1, Eigen::VectorXd::Ones(5));
    NormalLinearModel m;
    LassoFit fit = qdb::fit_lasso(d, m, 1e6);
    CHECK(fit.beta.cwiseAbs().maxCoeff() == 0.0);
    CHECK(fit.converged);
}

TEST_CASE("single predictor reduces to the soft threshold") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> norm(0.0, 1.0);
    const int n = 60;
    Dataset d;
    d.x.resize(n, 1);
    for (int i = 0; i < n; ++i) d.x(i, 0) = norm(rng);
    d.x.col(0).array() -= d.x.col(0).mean();
    d.x.col(0) *= std::sqrt(static_cast<double>(n) / d.x.col(0).squaredNorm());
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = 0.8 * d.x(i, 0) + 0.3 * norm(rng);
    d.delta = Eigen::VectorXi::Ones(n);
    NormalLinearModel m;

    double b = d.x.col(0).dot(d.y) / d.x.col(0).squaredNorm();
    for (double lambda : {0.5, 5.0, 20.0, 60.0}) {
        LassoFit fit = qdb::fit_lasso(d, m, lambda);
        CHECK(fit.beta(0) == doctest::Approx(soft(b, lambda / n)).epsilon(1e-9));
    }
}

TEST_CASE("small problem matches a grid search of the objective") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> norm(0.0, 1.0);
    Dataset d;
    const int n = 10;
    d.x.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        d.x(i, 0) = norm(rng);
        d.x(i, 1) = 0.6 * d.x(i, 0) + 0.8 * norm(rng);
    }
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = 1.1 * d.x(i, 0) - 0.4 * d.x(i, 1) + 0.5 * norm(rng);
    d.delta = Eigen::VectorXi::Ones(n);
    qdb::center_columns(d);
    NormalLinearModel m;
    const double lambda = 2.0;

    auto objective = [&](double b0, double b1) {
        double nll = 0.0;
        for (int i = 0; i < n; ++i) {
            double u = d.x(i, 0) * b0 + d.x(i, 1) * b1;
            nll += m.neg_log_density(d.y(i), u);
        }
        return nll + lambda * (std::abs(b0) + std::abs(b1));
    };
    // coarse pass over [-3,3]^2, then a 1e-3 grid around the coarse winner
    // (valid refinement: the objective is convex)
    double best0 = 0.0, best1 = 0.0, bestv = std::numeric_limits<double>::infinity();
    for (double b0 = -3.0; b0 <= 3.0; b0 += 0.05) {
        for (double b1 = -3.0; b1 <= 3.0; b1 += 0.05) {
            double v = objective(b0, b1);
            if (v < bestv) {
                bestv = v;
                best0 = b0;
                best1 = b1;
            }
        }
    }
    double fine0 = best0, fine1 = best1;
    for (double b0 = best0 - 0.06; b0 <= best0 + 0.06; b0 += 1e-3) {
        for (double b1 = best1 - 0.06; b1 <= best1 + 0.06; b1 += 1e-3) {
            double v = objective(b0, b1);
            if (v < bestv) {
                bestv = v;
                fine0 = b0;
                fine1 = b1;
            }
        }
    }

    LassoFit fit = qdb::fit_lasso(d, m, lambda);
    CHECK(std::abs(fit.beta(0) - fine0) < 2e-3);
    CHECK(std::abs(fit.beta(1) - fine1) < 2e-3);
    CHECK(fit.objective == doctest::Approx(objective(fit.beta(0), fit.beta(1))).epsilon(1e-10));
}

TEST_CASE("orthonormal design soft-threshold equivalence") {
    const int n = 64, p = 5;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> norm(0.0, 1.0);
    Eigen::MatrixXd raw(n, p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) raw(i, j) = norm(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
    Dataset d;
    d.x = q * std::sqrt(static_cast<double>(n));  // columns orthogonal, norm^2 = n
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = d.x(i, 0) - 0.5 * d.x(i, 2) + 0.3 * norm(rng);
    d.delta = Eigen::VectorXi::Ones(n);
    NormalLinearModel m;

    for (double lambda : {1.0, 10.0, 40.0}) {
        LassoFit fit = qdb::fit_lasso(d, m, lambda);
        for (int j = 0; j < p; ++j) {
            double ls = d.x.col(j).dot(d.y) / d.x.col(j).squaredNorm();
            CHECK(fit.beta(j) == doctest::Approx(soft(ls, lambda / n)).epsilon(1e-8));
        }
    }
}

TEST_CASE("objective is monotone over sweeps and the path shrinks") {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(8);
    beta(0) = 1.5;
    beta(3) = -0.7;
    Dataset d = complete_gaussian(50, 8, 5, beta);
    NormalLinearModel m;

    qdb::LassoOptions opts;
    opts.record_sweep_objectives = true;
    LassoFit fit = qdb::fit_lasso(d, m, 5.0, opts);
    REQUIRE(fit.sweep_objectives.size() >= 2);
    for (std::size_t k = 1; k < fit.sweep_objectives.size(); ++k) {
        CHECK(fit.sweep_objectives[k] <= fit.sweep_objectives[k - 1] + 1e-10);
    }

    double prev_norm = std::numeric_limits<double>::infinity();
    for (double lambda : {0.5, 2.0, 8.0, 32.0, 128.0, 512.0}) {
        LassoFit f = qdb::fit_lasso(d, m, lambda);
        double l1 = f.beta.lpNorm<1>();
        CHECK(l1 <= prev_norm + 1e-9);
        prev_norm = l1;
    }
    LassoFit f = qdb::fit_lasso(d, m, 1e7);
    CHECK(f.beta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("column permutation permutes the fit") {
    Eigen::VectorXd beta(4);
    beta << 1.0, -0.5, 0.0, 0.25;
    Dataset d = complete_gaussian(40, 4, 6, beta);
    NormalLinearModel m;
    LassoFit fit = qdb::fit_lasso(d, m, 3.0);

    std::vector<int> perm = {2, 0, 3, 1};
    Dataset dp = d;
    for (int j = 0; j < 4; ++j) dp.x.col(j) = d.x.col(perm[static_cast<std::size_t>(j)]);
    LassoFit fitp = qdb::fit_lasso(dp, m, 3.0);
    // the sweep visits coordinates in a different order, so agreement is at
    // the solver tolerance rather than bitwise
    for (int j = 0; j < 4; ++j) {
        CHECK(std::abs(fitp.beta(j) - fit.beta(perm[static_cast<std::size_t>(j)])) < 1e-6);
    }
}

TEST_CASE("missing units are excluded and zero observed is an error") {
    Eigen::VectorXd beta(3);
    beta << 1.0, 0.0, 0.0;
    Dataset d = complete_gaussian(30, 3, 7, beta);
    d.delta.setZero();
    NormalLinearModel m;
    CHECK_THROWS_AS(qdb::fit_lasso(d, m, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(qdb::fit_lasso(complete_gaussian(30, 3, 7, beta), m, -1.0),
                    std::invalid_argument);
}

TEST_CASE("cv: singleton grid returns the only candidate") {
    Dataset d = complete_gaussian(30, 3, 8, Eigen::VectorXd::Zero(3));
    NormalLinearModel m;
    auto res = qdb::cross_validate_lambda(d, m, {0.7}, 5, 42);
    CHECK(res.lambda == 0.7);
    CHECK_THROWS_AS(qdb::cross_validate_lambda(d, m, {0.5, -0.1}, 5, 42), std::invalid_argument);
    CHECK_THROWS_AS(qdb::cross_validate_lambda(d, m, {}, 5, 42), std::invalid_argument);
}

TEST_CASE("cv: pure noise prefers the largest penalty") {
    NormalLinearModel m;
    std::vector<double> grid;
    for (int k = 0; k <= 6; ++k) grid.push_back(std::pow(10.0, -3.0 + k));
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(900 + seed);
        std::normal_distribution<double> norm(0.0, 1.0);
        Dataset d;
        const int n = 300, p = 10;
        d.x.resize(n, p);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < p; ++j) d.x(i, j) = norm(rng);
        }
        d.y.resize(n);
        for (int i = 0; i < n; ++i) d.y(i) = norm(rng);  // independent of x
        d.delta = Eigen::VectorXi::Ones(n);
        qdb::center_columns(d);
        auto res = qdb::cross_validate_lambda(d, m, grid, 10, seed);
        if (res.lambda == grid.back()) ++hits;
    }
    CHECK(hits >= 45);
}

TEST_CASE("cv: strong signal is recovered") {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(20);
    beta(0) = 2.0;
    Dataset d = complete_gaussian(200, 20, 9, beta);
    NormalLinearModel m;
    auto grid = qdb::default_lambda_grid(d, m);
    auto res = qdb::cross_validate_lambda(d, m, grid, 10, 7);
    LassoFit fit = qdb::fit_lasso(d, m, res.lambda);
    CHECK(std::abs(fit.beta(0) - 2.0) <= 0.3);
    CHECK(fit.beta.tail(19).lpNorm<1>() <= 0.3);

    // deterministic in the seed
    auto res2 = qdb::cross_validate_lambda(d, m, grid, 10, 7);
    CHECK(res.lambda == res2.lambda);
    CHECK(res.curve == res2.curve);
}

TEST_CASE("logistic: huge penalty leaves the intercept-only fit") {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Dataset d;
    const int n = 120, p = 4;
    d.x.resize(n, p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) d.x(i, j) = norm(rng);
    }
    d.y = Eigen::VectorXd::Zero(n);
    d.delta.resize(n);
    for (int i = 0; i < n; ++i) d.delta(i) = unif(rng) < 0.7 ? 1 : 0;
    qdb::center_columns(d);

    LassoFit fit = qdb::fit_logistic_lasso(d, 1e6);
    CHECK(fit.beta.cwiseAbs().maxCoeff() == 0.0);
    double dbar = d.delta.cast<double>().mean();
    CHECK(fit.intercept == doctest::Approx(std::log(dbar / (1.0 - dbar))).epsilon(1e-6));
}

TEST_CASE("logistic: complete separation is clamped and flagged") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> norm(0.0, 1.0);
    Dataset d;
    const int n = 50, p = 2;
    d.x.resize(n, p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) d.x(i, j) = norm(rng);
    }
    d.y = Eigen::VectorXd::Zero(n);
    d.delta = Eigen::VectorXi::Ones(n);
    qdb::center_columns(d);
    LassoFit fit = qdb::fit_logistic_lasso(d, 0.01);
    CHECK(fit.separation);
    for (int i = 0; i < n; ++i) {
        double prob = qdb::expit(fit.intercept + d.x.row(i).dot(fit.beta));
        CHECK(prob >= 1.0 - 1e-6);
    }
}

TEST_CASE("logistic: fitted rate tracks the empirical rate") {
    qdb::DgpSpec spec;
    spec.kind = qdb::DgpKind::dgp2;
    spec.n = 200;
    spec.p = 10;
    Dataset d = qdb::gen_dataset(spec, 77, 0);
    auto cv = qdb::cross_validate_logistic_lambda(d, qdb::default_logistic_lambda_grid(d), 10, 5);
    LassoFit fit = qdb::fit_logistic_lasso(d, cv.lambda);
    double mean_prob = 0.0;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        mean_prob += qdb::expit(fit.intercept + d.x.row(i).dot(fit.beta));
    }
    mean_prob /= static_cast<double>(d.n());
    double rate = d.delta.cast<double>().mean();
    CHECK(std::abs(mean_prob - rate) <= 0.05);
}
