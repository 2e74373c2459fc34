#include "qdb/report.hpp"

namespace qdb {

using nlohmann::json;

json to_json(const WeightSolution& w) {
    json j;
    j["zeta"] = w.zeta;
    j["gamma"] = w.gamma;
    j["objective"] = w.objective;
    j["constraint_residual"] = w.constraint_residual;
    j["c_used"] = w.c_used;
    j["delta"] = w.delta_cap;
    j["n1"] = w.w.size();
    j["sum_w"] = w.w.size() ? w.w.sum() : 0.0;
    j["min_w"] = w.w.size() ? w.w.minCoeff() : 0.0;
    j["max_w"] = w.w.size() ? w.w.maxCoeff() : 0.0;
    j["iterations"] = w.iterations;
    j["kkt_residual"] = w.kkt_residual;
    j["polished"] = w.polished;
    j["hard_fallback"] = w.hard_fallback;
    j["clamped_tau_count"] = w.clamped_tau_count;
    j["feasibility_escalations"] = w.feasibility_escalations;
    if (w.eta.has_value()) {
        j["eta"] = std::vector<double>(w.eta->data(), w.eta->data() + w.eta->size());
    }
    return j;
}

json to_json(const LassoFit& fit) {
    json j;
    j["lambda"] = fit.lambda;
    j["objective"] = fit.objective;
    j["n_iter"] = fit.n_iter;
    j["converged"] = fit.converged;
    j["nonzero"] = (fit.beta.array() != 0.0).count();
    if (fit.intercept != 0.0) j["intercept"] = fit.intercept;
    if (fit.separation) j["separation"] = true;
    return j;
}

json to_json(const QuantileEstimate& est) {
    json j;
    j["q_hat"] = est.q_hat;
    j["q_pilot"] = est.q_pilot;
    j["tau"] = est.tau_level;
    j["sigma2_hat"] = est.sigma2_hat;
    j["t_hat"] = est.t_hat;
    j["v1_hat"] = est.v1_hat;
    j["v2_hat"] = est.v2_hat;
    j["ci_lower"] = est.ci_lower;
    j["ci_upper"] = est.ci_upper;
    j["alpha"] = est.alpha;
    j["eq_residual"] = est.eq_residual;
    j["lasso"] = to_json(est.lasso);
    j["weights"] = to_json(est.weights);
    return j;
}

json to_json(const AipwEstimate& est) {
    json j;
    j["q_hat"] = est.q_hat;
    j["q_pilot"] = est.q_pilot;
    j["tau"] = est.tau_level;
    j["sigma2_hat"] = est.sigma2_hat;
    j["t_hat"] = est.t_hat;
    j["v1_hat"] = est.v1_hat;
    j["v2_hat"] = est.v2_hat;
    j["ci_lower"] = est.ci_lower;
    j["ci_upper"] = est.ci_upper;
    j["alpha"] = est.alpha;
    j["eq_residual"] = est.eq_residual;
    j["lasso"] = to_json(est.lasso);
    j["logistic"] = to_json(est.logistic);
    j["gamma_intercept"] = est.gamma_intercept;
    j["clamp_count"] = est.clamp_count;
    j["heavy_clamping"] = est.heavy_clamping;
    return j;
}

json to_json(const McReport& report) {
    json j;
    j["estimator"] = report.estimator;
    j["bias"] = report.bias;
    j["sd"] = report.sd;
    j["rmse"] = report.rmse;
    j["cp"] = report.cp;
    j["esd"] = report.esd;
    j["n_reps"] = report.n_reps;
    j["failures"] = report.failures;
    json reps = json::array();
    for (const RepRecord& r : report.reps) {
        json jr;
        jr["rep"] = r.rep;
        jr["ok"] = r.ok;
        if (!r.ok) {
            jr["error"] = r.error;
        } else {
            jr["q_hat"] = r.q_hat;
            jr["sigma_hat"] = r.sigma_hat;
            jr["ci_lower"] = r.ci_lower;
            jr["ci_upper"] = r.ci_upper;
            jr["covered"] = r.covered;
            jr["c_used"] = r.c_used;
            jr["zeta"] = r.zeta;
        }
        reps.push_back(std::move(jr));
    }
    j["reps"] = std::move(reps);
    return j;
}

json to_json(const ContrastEstimate& est) {
    json j;
    j["m_hat"] = est.m_hat;
    j["ci_lower"] = est.ci_lower;
    j["ci_upper"] = est.ci_upper;
    j["group0"] = to_json(est.group0);
    j["group1"] = to_json(est.group1);
    return j;
}

std::string render_report(const json& doc) { return doc.dump(2) + "\n"; }

}  // namespace qdb
