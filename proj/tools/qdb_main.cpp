#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qdb/aipw.hpp"
#include "qdb/csv.hpp"
#include "qdb/estimator.hpp"
#include "qdb/report.hpp"
#include "qdb/simulate.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitSolver = 2;

struct CommonFlags {
    double tau = 0.5;
    double alpha = 0.05;
    std::uint64_t seed = 1;
    double c0 = 0.10;
    int folds = 10;
    bool expand = false;
    bool standardize = false;
    std::string estimator = "proposed";
    bool json = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--tau", f.tau, "Quantile level (default 0.5)");
    cmd->add_option("--alpha", f.alpha, "1 - confidence level (default 0.05)");
    cmd->add_option("--seed", f.seed, "Seed for all randomness (CV folds, simulation)");
    cmd->add_option("--c0", f.c0, "Starting constant of the Delta schedule (default 0.10)");
    cmd->add_option("--folds", f.folds, "Cross-validation folds (default 10)");
    cmd->add_flag("--expand-interactions", f.expand, "Append two-way interaction columns");
    cmd->add_flag("--standardize-response", f.standardize,
                  "Center and scale the observed responses before fitting");
    cmd->add_option("--estimator", f.estimator, "proposed | aipw | both")
        ->check(CLI::IsMember({"proposed", "aipw", "both"}));
    cmd->add_flag("--json", f.json, "Emit a machine-readable report");
}

qdb::RunConfig make_config(const CommonFlags& f) {
    qdb::RunConfig cfg;
    cfg.tau_level = f.tau;
    cfg.alpha = f.alpha;
    cfg.seed = f.seed;
    cfg.c0 = f.c0;
    cfg.cv_folds = f.folds;
    cfg.standardize_response = f.standardize;
    cfg.expand_interactions = f.expand;
    if (f.estimator == "proposed") cfg.estimator = qdb::EstimatorKind::proposed;
    if (f.estimator == "aipw") cfg.estimator = qdb::EstimatorKind::aipw;
    if (f.estimator == "both") cfg.estimator = qdb::EstimatorKind::both;
    cfg.validate();
    return cfg;
}

void print_estimate_text(const qdb::QuantileEstimate& est) {
    std::printf("proposed estimator (tau = %g)\n", est.tau_level);
    std::printf("  q_hat        %12.6f\n", est.q_hat);
    std::printf("  %g%% CI      [%.6f, %.6f]\n", 100.0 * (1.0 - est.alpha), est.ci_lower,
                est.ci_upper);
    std::printf("  sigma2_hat   %12.6f   (T %.6f, V1 %.6f, V2 %.6f)\n", est.sigma2_hat, est.t_hat,
                est.v1_hat, est.v2_hat);
    std::printf("  q_pilot      %12.6f   eq_residual %.3e\n", est.q_pilot, est.eq_residual);
    std::printf("  lambda       %12.6f   nonzero %ld\n", est.lasso.lambda,
                static_cast<long>((est.lasso.beta.array() != 0.0).count()));
    std::printf("  delta        %12.6f   c_used %.2f   zeta %.2f   imbalance %.6f\n",
                est.weights.delta_cap, est.weights.c_used, est.weights.zeta,
                est.weights.constraint_residual);
}

void print_aipw_text(const qdb::AipwEstimate& est) {
    std::printf("aipw estimator (tau = %g)\n", est.tau_level);
    std::printf("  q_hat        %12.6f\n", est.q_hat);
    std::printf("  %g%% CI      [%.6f, %.6f]\n", 100.0 * (1.0 - est.alpha), est.ci_lower,
                est.ci_upper);
    std::printf("  sigma2_hat   %12.6f   eq_residual %.3e\n", est.sigma2_hat, est.eq_residual);
    std::printf("  clamped probabilities: %d%s\n", est.clamp_count,
                est.heavy_clamping ? " (heavy clamping)" : "");
}

void print_mc_header() {
    std::printf("%-10s %10s %10s %10s %8s %10s %7s %9s\n", "estimator", "Bias", "SD", "RMSE", "CP",
                "ESD", "reps", "failures");
}

void print_mc_text(const qdb::McReport& r) {
    std::printf("%-10s %10.4f %10.4f %10.4f %8.3f %10.4f %7d %9d\n", r.estimator.c_str(), r.bias,
                r.sd, r.rmse, r.cp, r.esd, r.n_reps, r.failures);
}

int run_estimate(const std::string& input, const std::string& response,
                 const std::string& missing_token, const CommonFlags& flags) {
    qdb::RunConfig cfg = make_config(flags);
    qdb::CsvDataset csv = qdb::ingest_csv(input, response, missing_token);
    for (Eigen::Index j : csv.degenerate_columns) {
        std::fprintf(stderr, "warning: covariate '%s' is constant; centered to zero\n",
                     csv.covariate_names[static_cast<std::size_t>(j)].c_str());
    }
    if (cfg.expand_interactions) qdb::apply_interaction_expansion(csv.data);
    qdb::NormalLinearModel model;

    nlohmann::json doc;
    doc["command"] = "estimate";
    doc["input"] = {{"n", csv.data.n()}, {"p", csv.data.p()}, {"n_observed", csv.data.n_observed()}};
    if (cfg.estimator != qdb::EstimatorKind::aipw) {
        qdb::QuantileEstimate est = qdb::estimate(csv.data, model, cfg);
        doc["proposed"] = qdb::to_json(est);
        if (!flags.json) print_estimate_text(est);
    }
    if (cfg.estimator != qdb::EstimatorKind::proposed) {
        qdb::AipwEstimate est = qdb::estimate_aipw(csv.data, model, cfg);
        doc["aipw"] = qdb::to_json(est);
        if (!flags.json) print_aipw_text(est);
    }
    if (flags.json) std::cout << qdb::render_report(doc);
    return kExitOk;
}

int run_contrast(const std::string& input, const std::string& response, const std::string& group,
                 const std::string& missing_token, const CommonFlags& flags) {
    qdb::RunConfig cfg = make_config(flags);
    auto groups = qdb::ingest_csv_grouped(input, response, group, missing_token);
    if (groups.size() != 2) {
        throw std::invalid_argument("contrast: group column must define exactly two groups");
    }
    if (cfg.expand_interactions) {
        qdb::apply_interaction_expansion(groups[0].second.data);
        qdb::apply_interaction_expansion(groups[1].second.data);
    }
    qdb::NormalLinearModel model;
    qdb::ContrastEstimate est =
        qdb::contrast(groups[0].second.data, groups[1].second.data, model, cfg);

    nlohmann::json doc;
    doc["command"] = "contrast";
    doc["group_values"] = {groups[0].first, groups[1].first};
    doc["contrast"] = qdb::to_json(est);
    if (flags.json) {
        std::cout << qdb::render_report(doc);
    } else {
        std::printf("group %g: q_hat %.4f  CI [%.4f, %.4f]\n", groups[0].first, est.group0.q_hat,
                    est.group0.ci_lower, est.group0.ci_upper);
        std::printf("group %g: q_hat %.4f  CI [%.4f, %.4f]\n", groups[1].first, est.group1.q_hat,
                    est.group1.ci_lower, est.group1.ci_upper);
        std::printf("contrast: m_hat %.4f  CI [%.4f, %.4f]\n", est.m_hat, est.ci_lower,
                    est.ci_upper);
    }
    return kExitOk;
}

int run_simulate(int dgp, long n, long p, int reps, const CommonFlags& flags) {
    qdb::RunConfig cfg = make_config(flags);
    qdb::DgpSpec spec;
    spec.kind = dgp == 1 ? qdb::DgpKind::dgp1 : qdb::DgpKind::dgp2;
    spec.n = n;
    spec.p = p;
    spec.tau_level = cfg.tau_level;
    auto reports = qdb::run_study(spec, reps, cfg.seed, cfg.estimator, cfg);

    nlohmann::json doc;
    doc["command"] = "simulate";
    doc["spec"] = {{"dgp", dgp}, {"n", spec.n}, {"p", spec.p}, {"tau", spec.tau_level},
                   {"q0", spec.q0}};
    doc["seed"] = cfg.seed;
    doc["n_reps"] = reps;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(qdb::to_json(r));
    doc["reports"] = std::move(arr);
    if (flags.json) {
        std::cout << qdb::render_report(doc);
    } else {
        print_mc_header();
        for (const auto& r : reports) print_mc_text(r);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Debiased quantile estimation with missing responses"};
    app.require_subcommand(1);

    CommonFlags est_flags, con_flags, sim_flags;
    std::string est_input, est_response, est_missing;
    std::string con_input, con_response, con_group, con_missing;
    int sim_dgp = 2, sim_reps = 300;
    long sim_n = 400, sim_p = 100;

    CLI::App* est = app.add_subcommand("estimate", "Estimate a marginal response quantile");
    est->add_option("--input", est_input, "CSV file with a header row")->required();
    est->add_option("--response", est_response, "Name of the response column")->required();
    est->add_option("--missing-token", est_missing, "Token marking missing responses");
    add_common(est, est_flags);

    CLI::App* con = app.add_subcommand("contrast", "Two-group quantile contrast");
    con->add_option("--input", con_input, "CSV file with a header row")->required();
    con->add_option("--response", con_response, "Name of the response column")->required();
    con->add_option("--group", con_group, "Name of the 0/1 group column")->required();
    con->add_option("--missing-token", con_missing, "Token marking missing responses");
    add_common(con, con_flags);

    CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo coverage study");
    sim->add_option("--dgp", sim_dgp, "Data-generating process, 1 or 2")
        ->check(CLI::IsMember({1, 2}));
    sim->add_option("--n", sim_n, "Sample size per replication");
    sim->add_option("--p", sim_p, "Covariate dimension");
    sim->add_option("--reps", sim_reps, "Number of replications");
    add_common(sim, sim_flags);
    sim_flags.estimator = "both";

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (est->parsed()) return run_estimate(est_input, est_response, est_missing, est_flags);
        if (con->parsed()) {
            return run_contrast(con_input, con_response, con_group, con_missing, con_flags);
        }
        if (sim->parsed()) return run_simulate(sim_dgp, sim_n, sim_p, sim_reps, sim_flags);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return kExitInput;
    } catch (const qdb::StageError& e) {
        std::fprintf(stderr, "failure: %s\n", e.what());
        return kExitSolver;
    } catch (const qdb::SolverError& e) {
        std::fprintf(stderr, "solver failure: %s\n", e.what());
        return kExitSolver;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "failure: %s\n", e.what());
        return kExitSolver;
    }
    return kExitInput;
}
