#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace qdb {

enum class EstimatorKind { proposed, aipw, both };

struct RunConfig {
    double tau_level = 0.5;
    double alpha = 0.05;
    std::uint64_t seed = 1;
    double c0 = 0.10;
    std::vector<double> lambda_grid;  // empty = data-driven default grid
    int cv_folds = 10;
    bool standardize_response = false;
    bool expand_interactions = false;
    bool normalized_aipw = false;
    EstimatorKind estimator = EstimatorKind::proposed;

    void validate() const {
        if (!(tau_level > 0.0 && tau_level < 1.0)) {
            throw std::invalid_argument("config: tau must lie in (0,1)");
        }
        if (!(alpha > 0.0 && alpha < 1.0)) {
            throw std::invalid_argument("config: alpha must lie in (0,1)");
        }
        if (!(c0 > 0.0)) throw std::invalid_argument("config: c0 must be positive");
        if (cv_folds < 2) throw std::invalid_argument("config: cv folds must be >= 2");
    }
};

}  // namespace qdb
