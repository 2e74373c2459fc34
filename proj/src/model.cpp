#include "qdb/model.hpp"

#include <cmath>
#include <stdexcept>

#include "qdb/normal.hpp"

namespace qdb {

namespace {
void require_finite(double y, double u, const char* where) {
    if (!std::isfinite(y) || !std::isfinite(u)) {
        throw std::invalid_argument(std::string(where) + ": non-finite input");
    }
}
}  // namespace

double ConditionalModel::neg_log_density(double y, double u) const {
    double f = density(y, u);
    if (!(f > 0.0)) {
        throw std::domain_error("neg_log_density: density underflows to zero");
    }
    return -std::log(f);
}

NormalLinearModel::NormalLinearModel(double response_scale) : sigma_y_(response_scale) {
    if (!(response_scale > 0.0) || !std::isfinite(response_scale)) {
        throw std::invalid_argument("NormalLinearModel: response_scale must be positive");
    }
}

double NormalLinearModel::density(double y, double u) const {
    require_finite(y, u, "density");
    return normal_pdf((y - u) / sigma_y_) / sigma_y_;
}

double NormalLinearModel::cdf(double y, double u) const {
    require_finite(y, u, "cdf");
    return normal_cdf((y - u) / sigma_y_);
}

double NormalLinearModel::cdf_index_deriv(double y, double u) const {
    require_finite(y, u, "cdf_index_deriv");
    return -normal_pdf((y - u) / sigma_y_) / sigma_y_;
}

double NormalLinearModel::neg_log_density(double y, double u) const {
    require_finite(y, u, "neg_log_density");
    double z = (y - u) / sigma_y_;
    return 0.5 * z * z + kLogSqrt2Pi + std::log(sigma_y_);
}

double NormalLinearModel::nld_index_grad(double y, double u) const {
    return (u - y) / (sigma_y_ * sigma_y_);
}

double NormalLinearModel::nld_index_curv(double /*y*/, double /*u*/) const {
    return 1.0 / (sigma_y_ * sigma_y_);
}

}  // namespace qdb
