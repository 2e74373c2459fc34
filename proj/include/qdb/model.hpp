#pragma once

#include <memory>

namespace qdb {

// Single-index conditional distribution of the response given covariates.
// All member functions take the response value y and the scalar index
// u = x'beta. Implementations must be pure and thread-safe.
class ConditionalModel {
  public:
    virtual ~ConditionalModel() = default;

    // Conditional density f(y, u) >= 0.
    virtual double density(double y, double u) const = 0;

    // Conditional distribution function h(y, u) = \int_{-inf}^{y} f(t, u) dt.
    virtual double cdf(double y, double u) const = 0;

    // Partial derivative of the CDF in the index, dh/du.
    virtual double cdf_index_deriv(double y, double u) const = 0;

    // -log f(y, u); signals if the density underflows to zero.
    virtual double neg_log_density(double y, double u) const;

    // Derivative of -log f(y, u) in u, and a positive curvature usable as a
    // second-order coefficient for coordinate updates.
    virtual double nld_index_grad(double y, double u) const = 0;
    virtual double nld_index_curv(double y, double u) const = 0;

    // True when -log f is exactly quadratic in u (penalized fits are then a
    // single weighted least-squares problem).
    virtual bool quadratic_index_loss() const { return false; }
};

// Y | X ~ N(x'beta, sigma_y^2).
class NormalLinearModel final : public ConditionalModel {
  public:
    explicit NormalLinearModel(double response_scale = 1.0);

    double density(double y, double u) const override;
    double cdf(double y, double u) const override;
    double cdf_index_deriv(double y, double u) const override;
    double neg_log_density(double y, double u) const override;
    double nld_index_grad(double y, double u) const override;
    double nld_index_curv(double y, double u) const override;
    bool quadratic_index_loss() const override { return true; }

    double response_scale() const { return sigma_y_; }

  private:
    double sigma_y_;
};

}  // namespace qdb
