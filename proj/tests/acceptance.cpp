// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exit code is the failure count.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "oracles.hpp"
#include "qdb/aipw.hpp"
#include "qdb/estimator.hpp"
#include "qdb/normal.hpp"
#include "qdb/simulate.hpp"
#include "qdb/weights.hpp"

namespace {

int g_failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

struct StudyPair {
    qdb::McReport proposed;
    qdb::McReport aipw;
};

StudyPair run_dgp(qdb::DgpKind kind, std::uint64_t seed) {
    qdb::DgpSpec spec;
    spec.kind = kind;
    spec.n = 400;
    spec.p = 100;
    auto reports = qdb::run_study(spec, 300, seed, qdb::EstimatorKind::both);
    return {reports[0], reports[1]};
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
    return buf;
}

void criterion_coverage_dgp2(const StudyPair& s) {
    bool pass = s.proposed.cp >= 0.89 && s.proposed.cp <= 0.97 &&
                std::abs(s.proposed.bias) <= 0.05 && s.proposed.sd >= 0.07 &&
                s.proposed.sd <= 0.13;
    report(1, "DGP2 coverage, bias and spread of the proposed estimator", pass,
           fmt("CP %.3f in [0.89,0.97], |bias| %.4f <= 0.05, SD %.4f in [0.07,0.13]",
               s.proposed.cp, std::abs(s.proposed.bias), s.proposed.sd));
}

void criterion_robustness_dgp1(const StudyPair& s) {
    bool pass = s.proposed.cp >= 0.88 && s.aipw.cp <= 0.60 &&
                std::abs(s.aipw.bias) >= 2.0 * std::abs(s.proposed.bias);
    report(2, "DGP1 robustness to a misspecified selection model", pass,
           fmt("CP(prop) %.3f >= 0.88, CP(aipw) %.3f <= 0.60, |bias| ratio %.2f >= 2",
               s.proposed.cp, s.aipw.cp,
               std::abs(s.aipw.bias) / std::max(std::abs(s.proposed.bias), 1e-12)));
}

void criterion_efficiency(const StudyPair& s) {
    bool pass = s.proposed.sd <= s.aipw.sd + 0.01;
    report(3, "DGP2 efficiency ordering of the standard deviations", pass,
           fmt("SD(prop) %.4f <= SD(aipw) %.4f + 0.01", s.proposed.sd, s.aipw.sd));
}

void criterion_variance_calibration(const StudyPair& s) {
    bool pass = std::abs(s.proposed.esd - s.proposed.sd) <= 0.02;
    report(4, "DGP2 variance-estimator calibration", pass,
           fmt("|ESD - SD| = |%.4f - %.4f| = %.4f <= 0.02", s.proposed.esd, s.proposed.sd,
               std::abs(s.proposed.esd - s.proposed.sd)));
}

void criterion_weight_optimality() {
    std::mt19937_64 rng(505);
    std::normal_distribution<double> norm(0.0, 1.0);
    int bad = 0;
    double worst_gap = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        qdb::DgpSpec spec;
        spec.kind = qdb::DgpKind::dgp2;
        spec.n = 14;  // keeps n1 <= 12 in practice
        spec.p = 4;
        qdb::Dataset data = qdb::gen_dataset(spec, 7000, static_cast<std::uint64_t>(inst));
        if (data.n_observed() < 2 || data.n_observed() > 12) continue;
        qdb::NormalLinearModel model;
        Eigen::VectorXd beta = spec.beta_true();
        double q_pilot = qdb::pilot_quantile(data, model, beta, 0.5);
        qdb::BalanceProblem prob = qdb::build_balance_problem(data, model, beta, q_pilot, 0.0);
        double reachable = qdb::min_imbalance(prob);
        Eigen::VectorXd w_inv = prob.tau.cwiseInverse();
        w_inv /= w_inv.sum();
        prob.delta_cap = reachable + 0.5 * (prob.imbalance(w_inv) - reachable) + 1e-7;
        qdb::WeightSolution sol = qdb::solve_weights_constrained(prob);

        // rejection-sampled feasible competitors around the solution
        int accepted = 0, tries = 0;
        while (accepted < 100 && tries < 40000) {
            ++tries;
            Eigen::VectorXd xi(prob.n1);
            for (Eigen::Index i = 0; i < prob.n1; ++i) xi(i) = 0.25 * norm(rng);
            xi.array() -= xi.mean();  // stay on the sum-to-one plane
            Eigen::VectorXd w = sol.w + xi;
            if (prob.imbalance(w) > prob.delta_cap) continue;
            ++accepted;
            double gap = sol.objective - prob.objective(w);
            worst_gap = std::max(worst_gap, gap);
            if (gap > 1e-8) ++bad;
        }

        // true-propensity benchmark
        auto obs = data.observed_indices();
        Eigen::VectorXd w_bench(static_cast<Eigen::Index>(obs.size()));
        for (std::size_t k = 0; k < obs.size(); ++k) {
            w_bench(static_cast<Eigen::Index>(k)) =
                1.0 / qdb::true_selection_prob(data.x.row(obs[k]).transpose(), spec.kind);
        }
        w_bench /= w_bench.sum();
        if (prob.imbalance(w_bench) <= prob.delta_cap) {
            double gap = sol.objective - prob.objective(w_bench);
            worst_gap = std::max(worst_gap, gap);
            if (gap > 1e-8) ++bad;
        }
    }
    report(5, "weight program never beaten by feasible competitors", bad == 0,
           fmt("violations %.0f, worst objective gap %.2e", static_cast<double>(bad), worst_gap));
}

void criterion_primal_dual() {
    std::mt19937_64 rng(909);
    double worst_obj = 0.0, worst_w = 0.0;
    std::uniform_real_distribution<double> margin(1.1, 2.0);
    for (int inst = 0; inst < 50; ++inst) {
        Eigen::Index n1 = 6 + static_cast<Eigen::Index>(inst % 7);
        Eigen::Index p = 2 + static_cast<Eigen::Index>(inst % 3);
        qdb::BalanceProblem prob = oracle::random_problem(rng, n1, p, 0.08);
        Eigen::VectorXd w_inv = prob.tau.cwiseInverse();
        w_inv /= w_inv.sum();
        prob.delta_cap = prob.imbalance(w_inv) * margin(rng) + 1e-8;
        auto sel = qdb::select_zeta(prob);
        qdb::WeightSolution primal = sel.solutions[sel.selected];
        qdb::WeightSolution dual = qdb::solve_weights_dual(prob);
        worst_obj = std::max(worst_obj, std::abs(primal.objective - dual.objective));
        worst_w = std::max(worst_w, (primal.w - dual.w).cwiseAbs().maxCoeff());
    }
    bool pass = worst_obj <= 1e-5 && worst_w <= 1e-4;
    report(6, "primal zeta-grid and dual l1 routes agree", pass,
           fmt("max objective gap %.2e <= 1e-5, max weight gap %.2e <= 1e-4", worst_obj, worst_w));
}

void criterion_closed_forms() {
    bool pass = true;
    std::ostringstream detail;

    // inverse-tau weights under vacuous constraints
    qdb::BalanceProblem prob;
    prob.n1 = 3;
    prob.n = 6;
    prob.tau.resize(3);
    prob.tau << 0.1, 0.2, 0.25;
    prob.b = Eigen::MatrixXd::Zero(3, 2);
    prob.a = Eigen::VectorXd::Zero(2);
    prob.delta_cap = 1.0;
    qdb::WeightSolution sol = qdb::solve_weights_primal(prob, 0.0);
    Eigen::VectorXd expect(3);
    expect << 10.0 / 19.0, 5.0 / 19.0, 4.0 / 19.0;
    double werr = (sol.w - expect).cwiseAbs().maxCoeff();
    pass = pass && werr <= 1e-6;
    detail << "inverse-tau err " << werr;

    // soft-threshold equivalence on an orthonormal design
    {
        const int n = 32, p = 4;
        std::mt19937_64 rng(3);
        std::normal_distribution<double> norm(0.0, 1.0);
        Eigen::MatrixXd raw(n, p);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < p; ++j) raw(i, j) = norm(rng);
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
        qdb::Dataset d;
        d.x = q * std::sqrt(static_cast<double>(n));
        d.y.resize(n);
        for (int i = 0; i < n; ++i) d.y(i) = d.x(i, 1) * 0.9 + 0.2 * norm(rng);
        d.delta = Eigen::VectorXi::Ones(n);
        qdb::NormalLinearModel m;
        double lambda = 8.0;
        qdb::LassoFit fit = qdb::fit_lasso(d, m, lambda);
        double serr = 0.0;
        for (int j = 0; j < p; ++j) {
            double ls = d.x.col(j).dot(d.y) / d.x.col(j).squaredNorm();
            double st = std::copysign(std::max(std::abs(ls) - lambda / n, 0.0), ls);
            serr = std::max(serr, std::abs(fit.beta(j) - st));
        }
        pass = pass && serr <= 1e-8;
        detail << ", soft-threshold err " << serr;
    }

    // exact cancellation under complete data and uniform weights
    {
        qdb::NormalLinearModel m;
        qdb::Dataset d;
        d.x = Eigen::MatrixXd::Zero(4, 1);
        d.y.resize(4);
        d.y << 1.0, 2.0, 3.0, 4.0;
        d.delta = Eigen::VectorXi::Ones(4);
        auto root = qdb::adjusted_solve(d, m, Eigen::VectorXd::Zero(1),
                                        Eigen::VectorXd::Constant(4, 0.25), 0.5);
        pass = pass && root.q == 2.0;
        detail << ", cancellation q " << root.q;
    }

    // pilot equals the inverse normal cdf with flat indices
    {
        qdb::NormalLinearModel m;
        qdb::Dataset d;
        d.x = Eigen::MatrixXd::Zero(20, 1);
        d.y = Eigen::VectorXd::Zero(20);
        d.delta = Eigen::VectorXi::Ones(20);
        double q = qdb::pilot_quantile(d, m, Eigen::VectorXd::Zero(1), 0.975);
        double perr = std::abs(q - qdb::normal_quantile(0.975));
        pass = pass && perr <= 1e-5;
        detail << ", pilot err " << perr;
    }
    report(7, "closed-form oracles", pass, detail.str());
}

void criterion_derivative_checks() {
    qdb::NormalLinearModel m;
    std::mt19937_64 rng(515);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    double worst_fd = 0.0;
    for (int k = 0; k < 1000; ++k) {
        double y = u(rng), v = u(rng);
        double fd = (m.cdf(y, v + 1e-5) - m.cdf(y, v - 1e-5)) / 2e-5;
        worst_fd = std::max(worst_fd, std::abs(m.cdf_index_deriv(y, v) - fd));
    }

    double worst_id = 0.0;
    std::normal_distribution<double> norm(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 25;
        qdb::Dataset d;
        d.x.resize(n, 2);
        d.y.resize(n);
        d.delta.resize(n);
        for (int i = 0; i < n; ++i) {
            d.x(i, 0) = norm(rng);
            d.x(i, 1) = norm(rng);
            d.y(i) = norm(rng);
            d.delta(i) = i % 5 == 0 ? 0 : 1;
        }
        Eigen::VectorXd beta(2);
        beta << 0.2 * norm(rng), 0.2 * norm(rng);
        auto obs = d.observed_indices();
        Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(obs.size()),
                                                      1.0 / static_cast<double>(obs.size()));
        auto v = qdb::variance_estimate(d, m, beta, 0.1 * norm(rng), w);
        worst_id = std::max(worst_id, std::abs(v.sigma2 * v.t * v.t - (v.v1 + v.v2)));
    }
    bool pass = worst_fd <= 1e-6 && worst_id <= 1e-12;
    report(8, "derivative and variance-identity checks", pass,
           fmt("max fd gap %.2e <= 1e-6, max identity gap %.2e <= 1e-12", worst_fd, worst_id));
}

void criterion_determinism() {
    const char* bin = std::getenv("QDB_BIN");
    if (bin == nullptr) {
        report(9, "byte-identical reports under a fixed seed", false, "QDB_BIN not set");
        return;
    }
    auto run = [&](const std::string& args, const std::string& out) {
        std::string cmd = std::string(bin) + " " + args + " > " + out + " 2>/dev/null";
        return WEXITSTATUS(std::system(cmd.c_str()));
    };
    auto slurp = [](const std::string& path) {
        std::ifstream in(path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    // data file
    {
        std::ofstream out("/tmp/qdb_accept.csv");
        out << "y,x1,x2,x3,x4\n";
        std::mt19937_64 rng(77);
        std::normal_distribution<double> norm(0.0, 1.0);
        for (int i = 0; i < 80; ++i) {
            double x1 = norm(rng), x2 = norm(rng), x3 = norm(rng), x4 = norm(rng);
            if (i % 4 != 0) out << 0.3 * x1 - 0.2 * x2 + norm(rng);
            out << "," << x1 << "," << x2 << "," << x3 << "," << x4 << "\n";
        }
    }
    bool pass = true;
    std::string est = "estimate --input /tmp/qdb_accept.csv --response y --seed 11 --json";
    pass = pass && run(est, "/tmp/qdb_accept_e1.json") == 0;
    pass = pass && run(est, "/tmp/qdb_accept_e2.json") == 0;
    pass = pass && slurp("/tmp/qdb_accept_e1.json") == slurp("/tmp/qdb_accept_e2.json");
    std::string sim = "simulate --dgp 1 --n 80 --p 6 --reps 3 --seed 21 --json";
    pass = pass && run(sim, "/tmp/qdb_accept_s1.json") == 0;
    pass = pass && run(sim, "/tmp/qdb_accept_s2.json") == 0;
    pass = pass && slurp("/tmp/qdb_accept_s1.json") == slurp("/tmp/qdb_accept_s2.json");
    report(9, "byte-identical reports under a fixed seed", pass,
           pass ? "estimate and simulate reruns matched" : "outputs differ or command failed");
}

}  // namespace

int main() {
    std::printf("running Monte Carlo studies (600 replications at n = 400, p = 100)...\n");
    std::fflush(stdout);
    StudyPair dgp2 = run_dgp(qdb::DgpKind::dgp2, 20250401);
    criterion_coverage_dgp2(dgp2);
    StudyPair dgp1 = run_dgp(qdb::DgpKind::dgp1, 20250402);
    criterion_robustness_dgp1(dgp1);
    criterion_efficiency(dgp2);
    criterion_variance_calibration(dgp2);
    criterion_weight_optimality();
    criterion_primal_dual();
    criterion_closed_forms();
    criterion_derivative_checks();
    criterion_determinism();
    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
    } else {
        std::printf("%d acceptance criteria FAILED\n", g_failures);
    }
    return g_failures;
}
