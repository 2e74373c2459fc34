#include "qdb/simulate.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qdb/aipw.hpp"
#include "qdb/estimator.hpp"
#include "qdb/normal.hpp"

namespace qdb {

namespace {

const double kDgpCoef[4] = {0.25, 0.125, 0.25, 0.125};

double missing_index(const Eigen::VectorXd& v) {
    return 1.0 - kDgpCoef[0] * v(0) - kDgpCoef[1] * v(1) - kDgpCoef[2] * v(2) - kDgpCoef[3] * v(3);
}

}  // namespace

McReport aggregate_records(const std::string& label, double q0, Eigen::Index n,
                           std::vector<RepRecord> records) {
    McReport rep;
    rep.estimator = label;
    rep.reps = std::move(records);
    double sum = 0.0, sum_sq_dev0 = 0.0, esd_sum = 0.0;
    int covered = 0;
    std::vector<double> qs;
    for (const RepRecord& r : rep.reps) {
        if (!r.ok) {
            ++rep.failures;
            continue;
        }
        qs.push_back(r.q_hat);
        sum += r.q_hat;
        sum_sq_dev0 += (r.q_hat - q0) * (r.q_hat - q0);
        esd_sum += r.sigma_hat / std::sqrt(static_cast<double>(n));
        if (r.covered) ++covered;
    }
    rep.n_reps = static_cast<int>(qs.size());
    if (rep.n_reps == 0) return rep;
    double mean = sum / rep.n_reps;
    rep.bias = mean - q0;
    double ss = 0.0;
    for (double q : qs) ss += (q - mean) * (q - mean);
    rep.sd = rep.n_reps > 1 ? std::sqrt(ss / (rep.n_reps - 1)) : 0.0;
    rep.rmse = std::sqrt(sum_sq_dev0 / rep.n_reps);
    rep.cp = static_cast<double>(covered) / rep.n_reps;
    rep.esd = esd_sum / rep.n_reps;
    return rep;
}

Eigen::VectorXd DgpSpec::beta_true() const {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < 4; ++j) beta(j) = kDgpCoef[j];
    return beta;
}

void DgpSpec::validate() const {
    if (p < 4) throw std::invalid_argument("DgpSpec: p must be >= 4");
    if (n < 2) throw std::invalid_argument("DgpSpec: n must be >= 2");
    if (!(tau_level > 0.0 && tau_level < 1.0)) {
        throw std::invalid_argument("DgpSpec: tau must lie in (0,1)");
    }
}

std::mt19937_64 rng_for_rep(std::uint64_t seed, std::uint64_t rep) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffULL),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(rep & 0xffffffffULL),
                      static_cast<std::uint32_t>(rep >> 32),
                      0x9e3779b9u};
    return std::mt19937_64(seq);
}

Eigen::MatrixXd gen_covariates(Eigen::Index n, Eigen::Index p, std::mt19937_64& rng) {
    if (p < 4) throw std::invalid_argument("gen_covariates: p must be >= 4");
    Eigen::MatrixXd x(n, p);
    std::uniform_real_distribution<double> unif(-5.0, 5.0);
    std::normal_distribution<double> norm(0.0, std::sqrt(0.5));
    for (Eigen::Index j = 0; j < 2; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) x(i, j) = unif(rng);
    }
    for (Eigen::Index j = 2; j < p; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double v = norm(rng);
            while (std::abs(v) > 5.0) v = norm(rng);
            x(i, j) = v;
        }
    }
    return x;
}

Eigen::VectorXd dagger_transform(const Eigen::VectorXd& x) {
    if (x.size() < 4) throw std::invalid_argument("dagger_transform: need at least 4 coordinates");
    Eigen::VectorXd out = x;
    for (Eigen::Index j = 0; j < 4; ++j) {
        double v = x(j);
        out(j) = v - v * v + 2.0 * v * v * v;
    }
    return out;
}

double true_selection_prob(const Eigen::VectorXd& x, DgpKind kind) {
    Eigen::VectorXd v = kind == DgpKind::dgp1 ? dagger_transform(x) : x;
    return expit(missing_index(v));
}

void gen_outcome_and_missing(const Eigen::MatrixXd& x, const DgpSpec& spec, std::mt19937_64& rng,
                             Eigen::VectorXd& y, Eigen::VectorXi& delta) {
    spec.validate();
    const Eigen::Index n = x.rows();
    y.resize(n);
    delta.resize(n);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd beta = spec.beta_true();
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i) = x.row(i).head(4).dot(beta.head(4)) + noise(rng);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        double pi = true_selection_prob(x.row(i).transpose(), spec.kind);
        delta(i) = unif(rng) < pi ? 1 : 0;
    }
}

Dataset gen_dataset(const DgpSpec& spec, std::uint64_t seed, std::uint64_t rep) {
    spec.validate();
    std::mt19937_64 rng = rng_for_rep(seed, rep);
    Dataset data;
    data.x = gen_covariates(spec.n, spec.p, rng);
    gen_outcome_and_missing(data.x, spec, rng, data.y, data.delta);
    data.column_centers = Eigen::VectorXd::Zero(spec.p);
    return data;
}

std::vector<McReport> run_study(const DgpSpec& spec, int n_reps, std::uint64_t seed,
                                EstimatorKind which, const RunConfig& base_config) {
    spec.validate();
    if (n_reps < 1) throw std::invalid_argument("run_study: n_reps must be >= 1");
    const bool want_prop = which != EstimatorKind::aipw;
    const bool want_aipw = which != EstimatorKind::proposed;
    NormalLinearModel model;

    std::vector<RepRecord> prop_recs, aipw_recs;
    for (int rep = 0; rep < n_reps; ++rep) {
        Dataset data = gen_dataset(spec, seed, static_cast<std::uint64_t>(rep));
        RunConfig cfg = base_config;
        cfg.tau_level = spec.tau_level;
        cfg.seed = seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(rep + 1));
        if (want_prop) {
            RepRecord r;
            r.rep = rep;
            try {
                QuantileEstimate est = estimate(data, model, cfg);
                r.ok = true;
                r.q_hat = est.q_hat;
                r.sigma_hat = std::sqrt(est.sigma2_hat);
                r.ci_lower = est.ci_lower;
                r.ci_upper = est.ci_upper;
                r.covered = est.ci_lower <= spec.q0 && spec.q0 <= est.ci_upper;
                r.c_used = est.weights.c_used;
                r.zeta = est.weights.zeta;
            } catch (const std::exception& e) {
                r.error = e.what();
            }
            prop_recs.push_back(std::move(r));
        }
        if (want_aipw) {
            RepRecord r;
            r.rep = rep;
            try {
                AipwEstimate est = estimate_aipw(data, model, cfg);
                r.ok = true;
                r.q_hat = est.q_hat;
                r.sigma_hat = std::sqrt(est.sigma2_hat);
                r.ci_lower = est.ci_lower;
                r.ci_upper = est.ci_upper;
                r.covered = est.ci_lower <= spec.q0 && spec.q0 <= est.ci_upper;
            } catch (const std::exception& e) {
                r.error = e.what();
            }
            aipw_recs.push_back(std::move(r));
        }
    }

    std::vector<McReport> out;
    if (want_prop) {
        out.push_back(aggregate_records("proposed", spec.q0, spec.n, std::move(prop_recs)));
    }
    if (want_aipw) {
        out.push_back(aggregate_records("aipw", spec.q0, spec.n, std::move(aipw_recs)));
    }
    for (const McReport& rep : out) {
        if (rep.failures * 20 > n_reps) {
            std::ostringstream msg;
            msg << "run_study: estimator '" << rep.estimator << "' failed in " << rep.failures
                << " of " << n_reps << " replications (> 5%)";
            throw std::runtime_error(msg.str());
        }
    }
    return out;
}

}  // namespace qdb
