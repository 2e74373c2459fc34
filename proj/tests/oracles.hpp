#pragma once

// Independent reference implementations used only by the tests. These stay
// deliberately separate from the library code paths they check.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "qdb/weights.hpp"

namespace oracle {

// Standard normal CDF via the Taylor series
//   Phi(x) = 1/2 + phi(x) * sum_{k>=0} x^{2k+1} / (1*3*...*(2k+1)),
// evaluated in long double. Accurate to ~1e-17 for |x| <= 6.
inline long double phi_series(long double x) {
    const long double inv_sqrt2pi = 0.39894228040143267794L;
    long double term = x;
    long double sum = x;
    for (int k = 1; k < 300; ++k) {
        term *= x * x / (2.0L * k + 1.0L);
        sum += term;
        if (std::abs(term) < 1e-25L * std::abs(sum)) break;
    }
    return 0.5L + inv_sqrt2pi * std::exp(-0.5L * x * x) * sum;
}

// Adaptive Simpson quadrature.
inline double simpson(const std::function<double(double)>& f, double a, double b, double fa,
                      double fb, double fm, double eps, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * eps) {
        return left + right + (left + right - whole) / 15.0;
    }
    return simpson(f, a, m, fa, fm, flm, eps / 2.0, depth - 1) +
           simpson(f, m, b, fm, fb, frm, eps / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double eps = 1e-10) {
    double m = 0.5 * (a + b);
    return simpson(f, a, b, f(a), f(b), f(m), eps, 40);
}

inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

struct QpSolution {
    bool ok = false;
    Eigen::VectorXd w;
    double gamma = 0.0;
    double objective = 0.0;  // w'Tw (+ kappa gamma^2 when penalized)
};

// Brute-force solver for
//   min w'Tw + kappa*Gamma^2  s.t.  sum w = 1, |a_j - (b'w)_j| <= Gamma
// by enumerating every signed active set and solving the full KKT system.
// Exact on small instances (3^p candidate sets).
inline QpSolution qp_enumerate_penalized(const qdb::BalanceProblem& prob, double kappa) {
    const Eigen::Index n1 = prob.n1;
    const Eigen::Index p = prob.a.size();
    QpSolution best;
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<int> state(static_cast<std::size_t>(p), 0);  // -1, 0, +1 per constraint
    auto evaluate = [&]() {
        std::vector<std::pair<Eigen::Index, int>> active;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (state[static_cast<std::size_t>(j)] != 0) {
                active.emplace_back(j, state[static_cast<std::size_t>(j)]);
            }
        }
        const Eigen::Index m = static_cast<Eigen::Index>(active.size());
        const Eigen::Index dim = n1 + 2 + m;  // w, gamma, nu, mu
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
        for (Eigen::Index i = 0; i < n1; ++i) K(i, i) = 2.0 * prob.tau(i);
        K(n1, n1) = 2.0 * kappa;  // gamma row
        for (Eigen::Index i = 0; i < n1; ++i) {
            K(i, n1 + 1) = 1.0;  // nu
            K(n1 + 1, i) = 1.0;
        }
        rhs(n1 + 1) = 1.0;
        for (Eigen::Index k = 0; k < m; ++k) {
            auto [j, s] = active[static_cast<std::size_t>(k)];
            for (Eigen::Index i = 0; i < n1; ++i) {
                K(i, n1 + 2 + k) = -prob.b(i, j);
                K(n1 + 2 + k, i) = -prob.b(i, j);
            }
            K(n1, n1 + 2 + k) = -static_cast<double>(s);
            K(n1 + 2 + k, n1) = -static_cast<double>(s);
            rhs(n1 + 2 + k) = -prob.a(j);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        if (!lu.isInvertible()) return;
        Eigen::VectorXd sol = lu.solve(rhs);
        Eigen::VectorXd w = sol.head(n1);
        double gamma = sol(n1);
        if (gamma < -1e-10) return;
        gamma = std::max(gamma, 0.0);
        Eigen::VectorXd d = prob.a - prob.b.transpose() * w;
        if (p > 0 && d.cwiseAbs().maxCoeff() > gamma + 1e-8) return;
        for (Eigen::Index k = 0; k < m; ++k) {
            double mu = sol(n1 + 2 + k);
            if (active[static_cast<std::size_t>(k)].second * mu < -1e-9) return;
        }
        double val = w.cwiseAbs2().dot(prob.tau) + kappa * gamma * gamma;
        if (val < best_val) {
            best_val = val;
            best.ok = true;
            best.w = w;
            best.gamma = gamma;
            best.objective = val;
        }
    };

    std::function<void(Eigen::Index)> recurse = [&](Eigen::Index j) {
        if (j == p) {
            evaluate();
            return;
        }
        for (int s : {0, 1, -1}) {
            state[static_cast<std::size_t>(j)] = s;
            recurse(j + 1);
        }
        state[static_cast<std::size_t>(j)] = 0;
    };
    recurse(0);
    return best;
}

// Hard-constraint counterpart with Gamma pinned at prob.delta_cap.
inline QpSolution qp_enumerate_hard(const qdb::BalanceProblem& prob) {
    const Eigen::Index n1 = prob.n1;
    const Eigen::Index p = prob.a.size();
    const double delta = prob.delta_cap;
    QpSolution best;
    double best_val = std::numeric_limits<double>::infinity();

    std::vector<int> state(static_cast<std::size_t>(p), 0);
    auto evaluate = [&]() {
        std::vector<std::pair<Eigen::Index, int>> active;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (state[static_cast<std::size_t>(j)] != 0) {
                active.emplace_back(j, state[static_cast<std::size_t>(j)]);
            }
        }
        const Eigen::Index m = static_cast<Eigen::Index>(active.size());
        const Eigen::Index dim = n1 + 1 + m;
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
        for (Eigen::Index i = 0; i < n1; ++i) K(i, i) = 2.0 * prob.tau(i);
        for (Eigen::Index i = 0; i < n1; ++i) {
            K(i, n1) = 1.0;
            K(n1, i) = 1.0;
        }
        rhs(n1) = 1.0;
        for (Eigen::Index k = 0; k < m; ++k) {
            auto [j, s] = active[static_cast<std::size_t>(k)];
            for (Eigen::Index i = 0; i < n1; ++i) {
                K(i, n1 + 1 + k) = -prob.b(i, j);
                K(n1 + 1 + k, i) = -prob.b(i, j);
            }
            rhs(n1 + 1 + k) = -(prob.a(j) - s * delta);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        if (!lu.isInvertible()) return;
        Eigen::VectorXd sol = lu.solve(rhs);
        Eigen::VectorXd w = sol.head(n1);
        Eigen::VectorXd d = prob.a - prob.b.transpose() * w;
        if (p > 0 && d.cwiseAbs().maxCoeff() > delta + 1e-8) return;
        for (Eigen::Index k = 0; k < m; ++k) {
            double mu = sol(n1 + 1 + k);
            if (active[static_cast<std::size_t>(k)].second * mu < -1e-9) return;
        }
        double val = w.cwiseAbs2().dot(prob.tau);
        if (val < best_val) {
            best_val = val;
            best.ok = true;
            best.w = w;
            best.gamma = delta;
            best.objective = val;
        }
    };
    std::function<void(Eigen::Index)> recurse = [&](Eigen::Index j) {
        if (j == p) {
            evaluate();
            return;
        }
        for (int s : {0, 1, -1}) {
            state[static_cast<std::size_t>(j)] = s;
            recurse(j + 1);
        }
        state[static_cast<std::size_t>(j)] = 0;
    };
    recurse(0);
    return best;
}

// Random small balance problem. a sits near the span of b so the program is
// feasible with room to spare.
inline qdb::BalanceProblem random_problem(std::mt19937_64& rng, Eigen::Index n1, Eigen::Index p,
                                          double noise = 0.05) {
    std::uniform_real_distribution<double> utau(0.05, 0.25);
    std::normal_distribution<double> norm(0.0, 0.5);
    qdb::BalanceProblem prob;
    prob.n1 = n1;
    prob.n = 2 * n1;
    prob.tau.resize(n1);
    for (Eigen::Index i = 0; i < n1; ++i) prob.tau(i) = utau(rng);
    prob.b.resize(n1, p);
    for (Eigen::Index i = 0; i < n1; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) prob.b(i, j) = norm(rng);
    }
    Eigen::VectorXd w0 = Eigen::VectorXd::Constant(n1, 1.0 / static_cast<double>(n1));
    prob.a = prob.b.transpose() * w0;
    for (Eigen::Index j = 0; j < p; ++j) prob.a(j) += noise * norm(rng);
    prob.delta_cap = 1.0;
    return prob;
}

}  // namespace oracle
