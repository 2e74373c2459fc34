#include "qdb/data.hpp"

#include <cmath>
#include <stdexcept>

namespace qdb {

std::vector<Eigen::Index> Dataset::observed_indices() const {
    std::vector<Eigen::Index> idx;
    idx.reserve(static_cast<std::size_t>(n()));
    for (Eigen::Index i = 0; i < n(); ++i) {
        if (delta(i) == 1) idx.push_back(i);
    }
    return idx;
}

void Dataset::validate() const {
    if (n() < 2 || p() < 1) {
        throw std::invalid_argument("Dataset: need n >= 2 and p >= 1");
    }
    if (y.size() != n() || delta.size() != n()) {
        throw std::invalid_argument("Dataset: y/delta length mismatch");
    }
    if (column_centers.size() != 0 && column_centers.size() != p()) {
        throw std::invalid_argument("Dataset: column_centers length mismatch");
    }
    Eigen::Index observed = 0;
    for (Eigen::Index i = 0; i < n(); ++i) {
        if (delta(i) != 0 && delta(i) != 1) {
            throw std::invalid_argument("Dataset: delta entries must be 0 or 1");
        }
        if (delta(i) == 1) {
            ++observed;
            if (!std::isfinite(y(i))) {
                throw std::invalid_argument("Dataset: observed y must be finite");
            }
        }
    }
    if (observed == 0) {
        throw std::invalid_argument("Dataset: no observed responses");
    }
    if (!x.allFinite()) {
        throw std::invalid_argument("Dataset: x contains non-finite values");
    }
}

std::vector<Eigen::Index> center_columns(Dataset& data) {
    const Eigen::Index n = data.n();
    const Eigen::Index p = data.p();
    if (data.column_centers.size() != p) {
        data.column_centers = Eigen::VectorXd::Zero(p);
    }
    std::vector<Eigen::Index> degenerate;
    for (Eigen::Index j = 0; j < p; ++j) {
        double mean = data.x.col(j).mean();
        data.x.col(j).array() -= mean;
        data.column_centers(j) += mean;
        if (data.x.col(j).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, std::abs(mean))) {
            data.x.col(j).setZero();
            degenerate.push_back(j);
        }
    }
    (void)n;
    return degenerate;
}

}  // namespace qdb
