#include "qdb/weights.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace qdb {

namespace {

constexpr double kEpsAbs = 1e-8;
constexpr double kEpsRel = 1e-6;
constexpr int kMaxIter = 50000;

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

// Projection onto the epigraph {(s, g): ||s||_inf <= g}. For fixed g the
// projection is a clamp, and the optimal g solves the piecewise-linear
// equation (k+1) g = S_k + t over the sorted absolute entries.
void project_epi_linf(Eigen::VectorXd& x, double& t) {
    const Eigen::Index p = x.size();
    if (p == 0) {
        t = std::max(t, 0.0);
        return;
    }
    double xmax = x.cwiseAbs().maxCoeff();
    if (xmax <= t) return;
    std::vector<double> u(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) u[static_cast<std::size_t>(j)] = std::abs(x(j));
    std::sort(u.begin(), u.end(), std::greater<double>());
    double total = std::accumulate(u.begin(), u.end(), 0.0);
    if (t <= -total) {
        x.setZero();
        t = 0.0;
        return;
    }
    double S = 0.0;
    double g = 0.0;
    for (std::size_t k = 1; k <= u.size(); ++k) {
        S += u[k - 1];
        g = (S + t) / (static_cast<double>(k) + 1.0);
        double lo = (k < u.size()) ? u[k] : 0.0;
        if (g >= lo && g <= u[k - 1]) break;
    }
    g = std::max(g, 0.0);
    for (Eigen::Index j = 0; j < p; ++j) x(j) = std::clamp(x(j), -g, g);
    t = g;
}

Eigen::VectorXd inverse_tau_weights(const Eigen::VectorXd& tau) {
    Eigen::VectorXd w = tau.cwiseInverse();
    return w / w.sum();
}

struct SolveCfg {
    double eps_abs = kEpsAbs;
    double eps_rel = kEpsRel;
    int max_iter = kMaxIter;
    double sigma = 0.0;  // proximal term; used only when tau may vanish
};

struct AdmmState {
    bool init = false;
    Eigen::VectorXd w, zs, us;
    double gamma = 0.0, zg = 0.0, ug = 0.0;
    double rho = 0.0;
};

// Cached w-update factorization; M = 2 diag(tau) + rho b b' + sigma I is
// independent of kappa, so one factor serves the whole zeta grid.
struct FactorCache {
    const BalanceProblem* prob = nullptr;
    Eigen::MatrixXd bbt;
    bool bbt_ready = false;
    double rho = -1.0, sigma = -1.0;
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd minv1;
    double s1 = 0.0;

    void bind(const BalanceProblem& pr) {
        if (prob != &pr) {
            prob = &pr;
            bbt_ready = false;
            rho = -1.0;
        }
    }

    void ensure(double rho_new, double sigma_new) {
        if (!bbt_ready) {
            bbt = prob->b * prob->b.transpose();
            bbt_ready = true;
            rho = -1.0;
        }
        if (rho == rho_new && sigma == sigma_new) return;
        rho = rho_new;
        sigma = sigma_new;
        Eigen::MatrixXd M = rho * bbt;
        M.diagonal() += 2.0 * prob->tau;
        if (sigma > 0.0) M.diagonal().array() += sigma;
        llt.compute(M);
        if (llt.info() != Eigen::Success) {
            throw SolverError("weight solver: factorization failed", WeightSolution{});
        }
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(prob->n1);
        minv1 = llt.solve(ones);
        s1 = minv1.sum();
    }
};

struct KktReport {
    double residual = 0.0;
    double scale = 1.0;
};

// KKT residual of the penalized program at (w, gamma) with constraint
// multipliers lam (one per balance coordinate) and lam_g for gamma.
KktReport kkt_penalized(const BalanceProblem& prob, double kappa, const Eigen::VectorXd& w,
                        double gamma, const Eigen::VectorXd& lam, double lam_g) {
    Eigen::VectorXd twow = 2.0 * prob.tau.cwiseProduct(w);
    Eigen::VectorXd blam = prob.b * lam;
    double nu = (blam - twow).mean();
    double stat_w = (twow - blam + Eigen::VectorXd::Constant(prob.n1, nu)).cwiseAbs().maxCoeff();
    double stat_g = std::abs(2.0 * kappa * gamma + lam_g);
    Eigen::VectorXd d = prob.a - prob.b.transpose() * w;
    double feas = std::max(d.cwiseAbs().maxCoeff() - gamma, 0.0);
    double sum_feas = std::abs(w.sum() - 1.0);
    double compl_res = 0.0;
    for (Eigen::Index j = 0; j < d.size(); ++j) {
        if (lam(j) == 0.0) continue;
        double side = lam(j) > 0.0 ? d(j) : -d(j);
        compl_res = std::max(compl_res, std::abs(lam(j)) * std::max(gamma - side, 0.0));
    }
    KktReport rep;
    rep.scale = std::max({1.0, twow.cwiseAbs().maxCoeff(), blam.size() ? blam.cwiseAbs().maxCoeff() : 0.0,
                          prob.a.size() ? prob.a.cwiseAbs().maxCoeff() : 0.0});
    rep.residual = std::max({stat_w, stat_g, feas, sum_feas, compl_res});
    return rep;
}

struct PolishResult {
    bool ok = false;
    Eigen::VectorXd w;
    double gamma = 0.0;
    double kkt = 0.0;
};

// Exact KKT solve on a candidate active set. Eliminates w through the
// diagonal curvature, leaving an (m+2) system in (mu, nu, gamma).
PolishResult polish_penalized(const BalanceProblem& prob, double kappa,
                              const std::vector<std::pair<Eigen::Index, int>>& active) {
    PolishResult out;
    const Eigen::Index m = static_cast<Eigen::Index>(active.size());
    Eigen::VectorXd y = prob.tau.cwiseInverse();  // T^{-1} diagonal
    Eigen::MatrixXd Ba(prob.n1, m);
    Eigen::VectorXd sig(m), aA(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        Ba.col(k) = prob.b.col(active[static_cast<std::size_t>(k)].first);
        sig(k) = active[static_cast<std::size_t>(k)].second;
        aA(k) = prob.a(active[static_cast<std::size_t>(k)].first);
    }
    Eigen::MatrixXd G = Ba.transpose() * y.asDiagonal() * Ba;
    Eigen::VectorXd h = Ba.transpose() * y;
    double q = y.sum();

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + 2, m + 2);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 2);
    // constraint rows
    K.topLeftCorner(m, m) = 0.5 * G;
    K.block(0, m, m, 1) = -0.5 * h;
    K.block(0, m + 1, m, 1) = sig;
    rhs.head(m) = aA;
    // sum row
    K.block(m, 0, 1, m) = 0.5 * h.transpose();
    K(m, m) = -0.5 * q;
    rhs(m) = 1.0;
    // gamma stationarity
    K.block(m + 1, 0, 1, m) = -sig.transpose();
    K(m + 1, m + 1) = 2.0 * kappa;

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return out;
    if ((K * sol - rhs).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff())) {
        return out;
    }
    Eigen::VectorXd mu = sol.head(m);
    double nu = sol(m);
    double gamma = sol(m + 1);
    Eigen::VectorXd w = 0.5 * y.asDiagonal() * (Ba * mu - Eigen::VectorXd::Constant(prob.n1, nu));

    // validity: feasibility of every constraint and multiplier signs
    double scale_a = std::max(1.0, prob.a.size() ? prob.a.cwiseAbs().maxCoeff() : 0.0);
    if (gamma < -1e-10 * scale_a) return out;
    gamma = std::max(gamma, 0.0);
    Eigen::VectorXd d = prob.a - prob.b.transpose() * w;
    if (d.size() && d.cwiseAbs().maxCoeff() > gamma + 1e-9 * scale_a) return out;
    for (Eigen::Index k = 0; k < m; ++k) {
        if (sig(k) * mu(k) < -1e-9 * scale_a) return out;
    }
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(prob.a.size());
    for (Eigen::Index k = 0; k < m; ++k) lam(active[static_cast<std::size_t>(k)].first) += mu(k);
    KktReport rep = kkt_penalized(prob, kappa, w, gamma, lam, -sig.dot(mu));
    out.ok = true;
    out.w = std::move(w);
    out.gamma = gamma;
    out.kkt = rep.residual / rep.scale;
    return out;
}

std::vector<std::pair<Eigen::Index, int>> detect_active(const Eigen::VectorXd& d, double gamma,
                                                        const Eigen::VectorXd& lam, double tol,
                                                        Eigen::Index cap) {
    std::vector<std::pair<Eigen::Index, int>> active;
    std::vector<std::pair<double, Eigen::Index>> ranked;
    for (Eigen::Index j = 0; j < d.size(); ++j) {
        bool near = std::abs(std::abs(d(j)) - gamma) <= tol;
        bool dual_on = std::abs(lam(j)) > 1e-10;
        if (near || dual_on) ranked.emplace_back(std::abs(lam(j)), j);
    }
    std::sort(ranked.begin(), ranked.end(), std::greater<>());
    for (const auto& [mag, j] : ranked) {
        if (static_cast<Eigen::Index>(active.size()) >= cap) break;
        int side = lam(j) != 0.0 ? (lam(j) > 0.0 ? 1 : -1) : (d(j) >= 0.0 ? 1 : -1);
        active.emplace_back(j, side);
    }
    return active;
}

WeightSolution finalize(const BalanceProblem& prob, const Eigen::VectorXd& w, double gamma,
                        double zeta) {
    WeightSolution sol;
    sol.w = w;
    sol.zeta = zeta;
    sol.gamma = gamma;
    sol.objective = prob.objective(w);
    sol.constraint_residual = prob.imbalance(w);
    sol.delta_cap = prob.delta_cap;
    sol.clamped_tau_count = prob.clamped_tau_count;
    return sol;
}

// Operator-splitting solve of the penalized program
//   min w'Tw + kappa Gamma^2  s.t.  sum w = 1, ||a - b'w||_inf <= Gamma.
// (The 1/(1-zeta) rescaling of Eq-style objectives leaves the argmin
// unchanged, so kappa = zeta/(1-zeta).)
WeightSolution solve_penalized_core(const BalanceProblem& prob, double kappa, double zeta,
                                    AdmmState& st, FactorCache& cache, const SolveCfg& cfg) {
    const Eigen::Index n1 = prob.n1;
    const Eigen::Index p = prob.a.size();

    if (p == 0) {
        WeightSolution sol = finalize(prob, inverse_tau_weights(prob.tau), 0.0, zeta);
        sol.polished = true;
        return sol;
    }
    if (kappa == 0.0 && cfg.sigma == 0.0) {
        // Gamma is free, so the balance constraint never binds the weights.
        Eigen::VectorXd w = inverse_tau_weights(prob.tau);
        WeightSolution sol = finalize(prob, w, prob.imbalance(w), zeta);
        sol.polished = true;
        return sol;
    }

    cache.bind(prob);
    if (!st.init) {
        st.w = Eigen::VectorXd::Constant(n1, 1.0 / static_cast<double>(n1));
        st.zs = Eigen::VectorXd::Zero(p);
        st.us = Eigen::VectorXd::Zero(p);
        st.gamma = 0.0;
        st.zg = 0.0;
        st.ug = 0.0;
        double bscale = prob.b.squaredNorm() / static_cast<double>(n1);
        st.rho = std::max(1e-6, 2.0 * std::max(prob.tau.sum(), cfg.sigma * n1) /
                                    std::max(bscale * n1, 1e-12));
        st.init = true;
    }
    cache.ensure(st.rho, cfg.sigma);

    Eigen::VectorXd d(p);
    double prim = std::numeric_limits<double>::infinity();
    double dual = std::numeric_limits<double>::infinity();
    int iter = 0;
    auto try_polish = [&](double kkt_floor) -> std::optional<WeightSolution> {
        if (cfg.sigma > 0.0) return std::nullopt;  // feasibility mode: tau may vanish
        Eigen::VectorXd lam = st.rho * st.us;
        double tol = std::max(1e-7 * std::max(1.0, st.gamma), 2.0 * prim);
        auto active = detect_active(d, st.gamma, lam, tol, std::min<Eigen::Index>(2 * p, n1 + 1));
        PolishResult pr = polish_penalized(prob, kappa, active);
        if (!pr.ok && active.size() > 1) {
            active.resize(1);
            pr = polish_penalized(prob, kappa, active);
        }
        if (pr.ok && pr.kkt <= kkt_floor) {
            WeightSolution sol = finalize(prob, pr.w, pr.gamma, zeta);
            sol.polished = true;
            sol.kkt_residual = pr.kkt;
            sol.iterations = iter;
            return sol;
        }
        return std::nullopt;
    };

    for (iter = 1; iter <= cfg.max_iter; ++iter) {
        // w update (equality constraint handled inside the KKT solve)
        Eigen::VectorXd rs = prob.a - st.zs + st.us;
        Eigen::VectorXd rhs = st.rho * (prob.b * rs);
        if (cfg.sigma > 0.0) rhs += cfg.sigma * st.w;
        Eigen::VectorXd wt = cache.llt.solve(rhs);
        double nu = (wt.sum() - 1.0) / cache.s1;
        st.w = wt - nu * cache.minv1;
        // gamma update
        st.gamma = st.rho * (st.zg - st.ug) / (2.0 * kappa + st.rho);
        // splitting variable
        d = prob.a - prob.b.transpose() * st.w;
        Eigen::VectorXd zs_old = st.zs;
        double zg_old = st.zg;
        st.zs = d + st.us;
        st.zg = st.gamma + st.ug;
        project_epi_linf(st.zs, st.zg);
        Eigen::VectorXd rp = d - st.zs;
        double rpg = st.gamma - st.zg;
        st.us += rp;
        st.ug += rpg;

        prim = std::sqrt(rp.squaredNorm() + rpg * rpg);
        dual = st.rho * std::sqrt((prob.b * (st.zs - zs_old)).squaredNorm() +
                                  (st.zg - zg_old) * (st.zg - zg_old));
        double ev_norm = std::sqrt(d.squaredNorm() + st.gamma * st.gamma);
        double z_norm = std::sqrt(st.zs.squaredNorm() + st.zg * st.zg);
        double eps_pri = std::sqrt(static_cast<double>(p + 1)) * cfg.eps_abs +
                         cfg.eps_rel * std::max(ev_norm, z_norm);
        double dual_ref = st.rho * std::sqrt((prob.b * st.us).squaredNorm() + st.ug * st.ug);
        double eps_dua = std::sqrt(static_cast<double>(n1 + 1)) * cfg.eps_abs +
                         cfg.eps_rel * dual_ref;

        if (prim <= eps_pri && dual <= eps_dua) break;

        if (iter % 250 == 0 && prim <= 1e-4 * std::max(1.0, ev_norm)) {
            if (auto sol = try_polish(1e-9)) return *sol;
        }
        if (iter % 50 == 0) {
            double r = prim / std::max(dual, 1e-300);
            double rho_new = st.rho;
            if (r > 10.0) rho_new = std::min(st.rho * 2.0, 1e8);
            if (r < 0.1) rho_new = std::max(st.rho * 0.5, 1e-8);
            if (rho_new != st.rho) {
                double scale = st.rho / rho_new;
                st.us *= scale;
                st.ug *= scale;
                st.rho = rho_new;
                cache.ensure(st.rho, cfg.sigma);
            }
        }
    }

    if (auto sol = try_polish(1e-8)) return *sol;

    Eigen::VectorXd lam = st.rho * st.us;
    KktReport rep = kkt_penalized(prob, kappa, st.w, st.gamma, lam, st.rho * st.ug);
    WeightSolution sol = finalize(prob, st.w, st.gamma, zeta);
    sol.kkt_residual = rep.residual / rep.scale;
    sol.iterations = iter;
    if (sol.kkt_residual > 1e-6 && cfg.sigma == 0.0) {
        std::ostringstream msg;
        msg << "weight solver did not reach KKT tolerance (residual " << sol.kkt_residual
            << " after " << iter << " iterations)";
        throw SolverError(msg.str(), sol);
    }
    return sol;
}

// Hard-constraint counterpart: min w'Tw s.t. sum w = 1, ||a - b'w||_inf <= Delta.
WeightSolution solve_constrained_core(const BalanceProblem& prob, double delta, AdmmState& st,
                                      FactorCache& cache, const SolveCfg& cfg) {
    const Eigen::Index n1 = prob.n1;
    const Eigen::Index p = prob.a.size();
    if (p == 0) {
        WeightSolution sol = finalize(prob, inverse_tau_weights(prob.tau), 0.0, 0.0);
        sol.polished = true;
        return sol;
    }

    cache.bind(prob);
    if (!st.init) {
        st.w = Eigen::VectorXd::Constant(n1, 1.0 / static_cast<double>(n1));
        st.zs = Eigen::VectorXd::Zero(p);
        st.us = Eigen::VectorXd::Zero(p);
        double bscale = prob.b.squaredNorm() / static_cast<double>(n1);
        st.rho = std::max(1e-6, 2.0 * prob.tau.sum() / std::max(bscale * n1, 1e-12));
        st.init = true;
    }
    cache.ensure(st.rho, 0.0);

    auto polish_hard = [&](const std::vector<std::pair<Eigen::Index, int>>& active)
        -> PolishResult {
        PolishResult out;
        const Eigen::Index m = static_cast<Eigen::Index>(active.size());
        Eigen::VectorXd y = prob.tau.cwiseInverse();
        Eigen::MatrixXd Ba(prob.n1, m);
        Eigen::VectorXd sig(m), aA(m);
        for (Eigen::Index k = 0; k < m; ++k) {
            Ba.col(k) = prob.b.col(active[static_cast<std::size_t>(k)].first);
            sig(k) = active[static_cast<std::size_t>(k)].second;
            aA(k) = prob.a(active[static_cast<std::size_t>(k)].first);
        }
        Eigen::MatrixXd G = Ba.transpose() * y.asDiagonal() * Ba;
        Eigen::VectorXd h = Ba.transpose() * y;
        double q = y.sum();
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m + 1, m + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
        K.topLeftCorner(m, m) = 0.5 * G;
        K.block(0, m, m, 1) = -0.5 * h;
        rhs.head(m) = aA - delta * sig;
        K.block(m, 0, 1, m) = 0.5 * h.transpose();
        K(m, m) = -0.5 * q;
        rhs(m) = 1.0;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
        Eigen::VectorXd sol = lu.solve(rhs);
        if (!sol.allFinite()) return out;
        if ((K * sol - rhs).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff())) {
            return out;
        }
        Eigen::VectorXd mu = sol.head(m);
        double nu = sol(m);
        Eigen::VectorXd w = 0.5 * y.asDiagonal() * (Ba * mu - Eigen::VectorXd::Constant(prob.n1, nu));
        double scale_a = std::max(1.0, prob.a.cwiseAbs().maxCoeff());
        Eigen::VectorXd d = prob.a - prob.b.transpose() * w;
        if (d.cwiseAbs().maxCoeff() > delta + 1e-9 * scale_a) return out;
        for (Eigen::Index k = 0; k < m; ++k) {
            if (sig(k) * mu(k) < -1e-9 * scale_a) return out;
        }
        Eigen::VectorXd lam = Eigen::VectorXd::Zero(p);
        for (Eigen::Index k = 0; k < m; ++k) lam(active[static_cast<std::size_t>(k)].first) += mu(k);
        // with Gamma pinned at Delta the gamma-stationarity row is vacuous
        KktReport rep = kkt_penalized(prob, 0.0, w, delta, lam, 0.0);
        out.ok = true;
        out.w = std::move(w);
        out.gamma = delta;
        out.kkt = rep.residual / rep.scale;
        return out;
    };

    Eigen::VectorXd d(p);
    double prim = std::numeric_limits<double>::infinity();
    int iter = 0;
    auto attempt = [&](double floor) -> std::optional<WeightSolution> {
        Eigen::VectorXd lam = st.rho * st.us;
        double tol = std::max(1e-7 * std::max(1.0, delta), 2.0 * prim);
        auto active = detect_active(d, delta, lam, tol, std::min<Eigen::Index>(2 * p, n1 + 1));
        PolishResult pr = polish_hard(active);
        if (!pr.ok && active.size() > 1) {
            active.resize(1);
            pr = polish_hard(active);
        }
        if (pr.ok && pr.kkt <= floor) {
            WeightSolution sol = finalize(prob, pr.w, delta, 0.0);
            sol.polished = true;
            sol.kkt_residual = pr.kkt;
            sol.iterations = iter;
            return sol;
        }
        return std::nullopt;
    };

    for (iter = 1; iter <= cfg.max_iter; ++iter) {
        Eigen::VectorXd rs = prob.a - st.zs + st.us;
        Eigen::VectorXd wt = cache.llt.solve(st.rho * (prob.b * rs));
        double nu = (wt.sum() - 1.0) / cache.s1;
        st.w = wt - nu * cache.minv1;
        d = prob.a - prob.b.transpose() * st.w;
        Eigen::VectorXd zs_old = st.zs;
        st.zs = (d + st.us).cwiseMax(-delta).cwiseMin(delta);
        Eigen::VectorXd rp = d - st.zs;
        st.us += rp;

        prim = rp.norm();
        double dual = st.rho * (prob.b * (st.zs - zs_old)).norm();
        double eps_pri = std::sqrt(static_cast<double>(p)) * cfg.eps_abs +
                         cfg.eps_rel * std::max(d.norm(), st.zs.norm());
        double eps_dua = std::sqrt(static_cast<double>(n1)) * cfg.eps_abs +
                         cfg.eps_rel * st.rho * (prob.b * st.us).norm();
        if (prim <= eps_pri && dual <= eps_dua) break;
        if (iter % 250 == 0 && prim <= 1e-4 * std::max(1.0, d.norm())) {
            if (auto sol = attempt(1e-9)) return *sol;
        }
        if (iter % 50 == 0) {
            double r = prim / std::max(dual, 1e-300);
            double rho_new = st.rho;
            if (r > 10.0) rho_new = std::min(st.rho * 2.0, 1e8);
            if (r < 0.1) rho_new = std::max(st.rho * 0.5, 1e-8);
            if (rho_new != st.rho) {
                st.us *= st.rho / rho_new;
                st.rho = rho_new;
                cache.ensure(st.rho, 0.0);
            }
        }
    }
    if (auto sol = attempt(1e-8)) return *sol;

    Eigen::VectorXd lam = st.rho * st.us;
    KktReport rep = kkt_penalized(prob, 0.0, st.w, delta, lam, 0.0);
    WeightSolution sol = finalize(prob, st.w, delta, 0.0);
    sol.kkt_residual = std::max({rep.residual, 0.0}) / rep.scale;
    sol.iterations = iter;
    if (sol.constraint_residual > delta + 1e-6 || sol.kkt_residual > 1e-6) {
        std::ostringstream msg;
        msg << "constrained weight solver did not converge (imbalance " << sol.constraint_residual
            << ", cap " << delta << ", KKT " << sol.kkt_residual << ")";
        throw SolverError(msg.str(), sol);
    }
    return sol;
}

}  // namespace

void BalanceProblem::validate() const {
    if (n1 < 1) throw std::invalid_argument("BalanceProblem: need at least one observed unit");
    if (tau.size() != n1 || b.rows() != n1 || b.cols() != a.size()) {
        throw std::invalid_argument("BalanceProblem: dimension mismatch");
    }
    if (n < n1) throw std::invalid_argument("BalanceProblem: n < n1");
    for (Eigen::Index i = 0; i < n1; ++i) {
        if (!(tau(i) > 0.0) || !(tau(i) < 1.0)) {
            throw std::invalid_argument("BalanceProblem: tau entries must lie strictly in (0,1)");
        }
    }
}

double BalanceProblem::imbalance(const Eigen::VectorXd& w) const {
    if (a.size() == 0) return 0.0;
    return (a - b.transpose() * w).cwiseAbs().maxCoeff();
}

double BalanceProblem::objective(const Eigen::VectorXd& w) const {
    return w.cwiseAbs2().dot(tau);
}

double delta_schedule(Eigen::Index n, Eigen::Index p, double c) {
    if (n < 2) throw std::invalid_argument("delta_schedule: n must be >= 2");
    if (p < 2) throw std::invalid_argument("delta_schedule: p must be >= 2");
    if (!(c > 0.0)) throw std::invalid_argument("delta_schedule: c must be positive");
    return c * std::pow(static_cast<double>(n), -5.0 / 16.0) *
           std::pow(std::log(static_cast<double>(p)), 1.0 / 8.0);
}

BalanceProblem build_balance_problem(const Dataset& data, const ConditionalModel& model,
                                     const Eigen::VectorXd& beta, double q_pilot,
                                     double delta_cap) {
    data.validate();
    if (beta.size() != data.p()) {
        throw std::invalid_argument("build_balance_problem: beta length mismatch");
    }
    BalanceProblem prob;
    prob.n = data.n();
    prob.delta_cap = delta_cap;
    Eigen::VectorXd u = data.x * beta;
    auto obs = data.observed_indices();
    prob.n1 = static_cast<Eigen::Index>(obs.size());
    prob.tau.resize(prob.n1);
    prob.b.resize(prob.n1, data.p());
    prob.a = Eigen::VectorXd::Zero(data.p());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        prob.a += model.cdf_index_deriv(q_pilot, u(i)) * data.x.row(i).transpose();
    }
    prob.a /= static_cast<double>(data.n());
    const double tau_floor = kTauClampEps * (1.0 - kTauClampEps);
    for (std::size_t k = 0; k < obs.size(); ++k) {
        Eigen::Index i = obs[k];
        double h = model.cdf(q_pilot, u(i));
        double tau = h * (1.0 - h);
        if (h <= kTauClampEps || h >= 1.0 - kTauClampEps) {
            tau = tau_floor;
            ++prob.clamped_tau_count;
        }
        prob.tau(static_cast<Eigen::Index>(k)) = tau;
        prob.b.row(static_cast<Eigen::Index>(k)) =
            model.cdf_index_deriv(q_pilot, u(i)) * data.x.row(i);
    }
    return prob;
}

WeightSolution solve_weights_primal(const BalanceProblem& prob, double zeta) {
    prob.validate();
    if (!(zeta >= 0.0 && zeta < 1.0)) {
        throw std::invalid_argument("solve_weights_primal: zeta must lie in [0,1)");
    }
    AdmmState st;
    FactorCache cache;
    SolveCfg cfg;
    return solve_penalized_core(prob, zeta / (1.0 - zeta), zeta, st, cache, cfg);
}

WeightSolution solve_weights_constrained(const BalanceProblem& prob) {
    prob.validate();
    if (!(prob.delta_cap > 0.0)) {
        throw std::invalid_argument("solve_weights_constrained: delta_cap must be positive");
    }
    AdmmState st;
    FactorCache cache;
    SolveCfg cfg;
    return solve_constrained_core(prob, prob.delta_cap, st, cache, cfg);
}

double min_imbalance(const BalanceProblem& prob) {
    prob.validate();
    if (prob.a.size() == 0) return 0.0;
    // Same splitting machinery with the variance term switched off; a small
    // proximal term keeps the w update well posed.
    BalanceProblem feas = prob;
    feas.tau.setZero();
    AdmmState st;
    FactorCache cache;
    SolveCfg cfg;
    cfg.sigma = std::max(1e-10, 1e-6 * prob.b.squaredNorm() / static_cast<double>(prob.n1));
    cfg.max_iter = 30000;
    cfg.eps_abs = 1e-9;
    WeightSolution sol = solve_penalized_core(feas, 1.0, 0.0, st, cache, cfg);
    return sol.constraint_residual;
}

ZetaSelection select_zeta(const BalanceProblem& prob) {
    std::vector<double> grid(100);
    for (int l = 0; l < 100; ++l) grid[static_cast<std::size_t>(l)] = static_cast<double>(l) / 100.0;
    return select_zeta(prob, grid);
}

ZetaSelection select_zeta(const BalanceProblem& prob, const std::vector<double>& grid) {
    prob.validate();
    if (!(prob.delta_cap > 0.0)) {
        throw std::invalid_argument("select_zeta: delta_cap must be positive");
    }
    if (grid.empty()) throw std::invalid_argument("select_zeta: empty grid");
    ZetaSelection sel;
    const double delta2 = prob.delta_cap * prob.delta_cap;
    AdmmState st;
    FactorCache cache;
    SolveCfg cfg;
    for (double zeta : grid) {
        if (!(zeta >= 0.0 && zeta < 1.0)) {
            throw std::invalid_argument("select_zeta: grid values must lie in [0,1)");
        }
        sel.grid.push_back(zeta);
        try {
            WeightSolution sol = solve_penalized_core(prob, zeta / (1.0 - zeta), zeta, st, cache, cfg);
            double imb2 = sol.constraint_residual * sol.constraint_residual;
            double crit = sol.objective + zeta / (1.0 - zeta) * (imb2 - delta2);
            sel.criterion.push_back(crit);
            sel.solutions.push_back(std::move(sol));
            sel.solved.push_back(true);
        } catch (const SolverError& err) {
            sel.criterion.push_back(std::numeric_limits<double>::quiet_NaN());
            sel.solutions.push_back(err.best);
            sel.solved.push_back(false);
            ++sel.failures;
        }
    }
    bool found = false;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < sel.grid.size(); ++l) {
        if (!sel.solved[l]) continue;
        if (!found || sel.criterion[l] > best) {
            best = sel.criterion[l];
            sel.selected = l;
            found = true;
        }
    }
    if (!found) {
        throw SolverError("select_zeta: every grid point failed", WeightSolution{});
    }
    sel.zeta = sel.grid[sel.selected];
    return sel;
}

WeightSolution compute_weights(const Dataset& data, const ConditionalModel& model,
                               const Eigen::VectorXd& beta, double q_pilot, double c0) {
    if (!(c0 > 0.0)) throw std::invalid_argument("compute_weights: c0 must be positive");
    BalanceProblem prob = build_balance_problem(data, model, beta, q_pilot, 0.0);
    // The schedule needs log p > 0; a single-covariate design is floored at 2.
    const Eigen::Index p_eff = std::max<Eigen::Index>(data.p(), 2);
    double reachable = min_imbalance(prob);
    double c = c0;
    int escalations = 0;
    for (;;) {
        double delta = delta_schedule(data.n(), p_eff, c);
        if (reachable <= delta) {
            prob.delta_cap = delta;
            break;
        }
        c += 0.01;
        ++escalations;
        if (c > 5.0 + 1e-9) {
            std::ostringstream msg;
            msg << "compute_weights: constraints infeasible up to c = 5.0 "
                << "(minimum achievable imbalance " << reachable << ")";
            throw SolverError(msg.str(), WeightSolution{});
        }
    }
    ZetaSelection sel = select_zeta(prob);
    WeightSolution sol = sel.solutions[sel.selected];
    sol.c_used = c;
    sol.feasibility_escalations = escalations;
    if (sol.constraint_residual > prob.delta_cap + 1e-6) {
        // Finite-grid overshoot of the cap: fall back to the hard form.
        WeightSolution hard = solve_weights_constrained(prob);
        hard.zeta = sol.zeta;
        hard.c_used = c;
        hard.feasibility_escalations = escalations;
        hard.hard_fallback = true;
        sol = hard;
    }
    return sol;
}

WeightSolution solve_weights_dual(const BalanceProblem& prob) {
    prob.validate();
    if (!(prob.delta_cap >= 0.0)) {
        throw std::invalid_argument("solve_weights_dual: delta_cap must be nonnegative");
    }
    const Eigen::Index n1 = prob.n1;
    const Eigen::Index p = prob.a.size();
    const double n = static_cast<double>(prob.n);
    const double delta = prob.delta_cap;

    Eigen::VectorXd inv_tau = prob.tau.cwiseInverse();
    Eigen::VectorXd ahat(p + 1);
    ahat.head(p) = prob.a;
    ahat(p) = 1.0;

    Eigen::VectorXd qdiag(p + 1);
    for (Eigen::Index j = 0; j < p; ++j) {
        qdiag(j) = prob.b.col(j).cwiseAbs2().dot(inv_tau) / (2.0 * n);
    }
    qdiag(p) = inv_tau.sum() / (2.0 * n);

    double qmax = qdiag.maxCoeff();
    std::vector<bool> frozen(static_cast<std::size_t>(p + 1), false);
    int frozen_count = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (qdiag(j) <= 1e-14 * std::max(qmax, 1.0)) {
            frozen[static_cast<std::size_t>(j)] = true;
            ++frozen_count;
        }
    }

    Eigen::VectorXd eta = Eigen::VectorXd::Zero(p + 1);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n1);  // A_i'eta per observed unit
    const int max_sweeps = 100000;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j <= p; ++j) {
            if (frozen[static_cast<std::size_t>(j)]) continue;
            double qe;
            if (j < p) {
                qe = prob.b.col(j).cwiseProduct(inv_tau).dot(v) / (2.0 * n);
            } else {
                qe = inv_tau.dot(v) / (2.0 * n);
            }
            double rho_j = ahat(j) - qe + qdiag(j) * eta(j);
            double enew = j < p ? soft_threshold(rho_j, delta) / qdiag(j) : rho_j / qdiag(j);
            double change = enew - eta(j);
            if (change != 0.0) {
                if (j < p) {
                    v += prob.b.col(j) * change;
                } else {
                    v.array() += change;
                }
                eta(j) = enew;
                max_change = std::max(max_change, std::abs(change));
            }
        }
        if (max_change <= 1e-12 * std::max(1.0, eta.cwiseAbs().maxCoeff())) break;
    }

    // stationarity of the dual objective
    double stat = 0.0;
    for (Eigen::Index j = 0; j <= p; ++j) {
        if (frozen[static_cast<std::size_t>(j)]) continue;
        double qe = j < p ? prob.b.col(j).cwiseProduct(inv_tau).dot(v) / (2.0 * n)
                          : inv_tau.dot(v) / (2.0 * n);
        double g = qe - ahat(j);
        if (j == p) {
            stat = std::max(stat, std::abs(g));
        } else if (eta(j) != 0.0) {
            stat = std::max(stat, std::abs(g + delta * (eta(j) > 0.0 ? 1.0 : -1.0)));
        } else {
            stat = std::max(stat, std::max(std::abs(g) - delta, 0.0));
        }
    }

    Eigen::VectorXd w = v.cwiseProduct(inv_tau) / (2.0 * n);
    WeightSolution sol = finalize(prob, w, prob.imbalance(w), 0.0);
    sol.eta = eta;
    sol.kkt_residual = stat;
    sol.iterations = sweep;
    sol.frozen_coordinates = frozen_count;
    if (stat > 1e-8) {
        std::ostringstream msg;
        msg << "solve_weights_dual: stationarity residual " << stat << " after " << sweep
            << " sweeps";
        throw SolverError(msg.str(), sol);
    }
    return sol;
}

}  // namespace qdb
