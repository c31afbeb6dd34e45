#pragma once

#include "flowiv/rng.hpp"

#include <utility>

namespace flowiv {

// Bivariate Gaussian with standard-normal marginals and correlation
// rho = tanh(rho_raw). The unconstrained raw parameterization keeps |rho| < 1
// and the likelihood gradient finite for every finite raw value.
class CorrelatedGaussian {
public:
    CorrelatedGaussian() = default;

    static CorrelatedGaussian from_raw(double rho_raw);
    // Requires |rho| < 1 strictly.
    static CorrelatedGaussian from_rho(double rho);

    double rho() const { return rho_; }
    double rho_raw() const { return rho_raw_; }

    double log_density_joint(double e_a, double e_y) const;
    // Density of e_y given the treatment noise: N(rho * given_ea, 1 - rho^2).
    double log_density_conditional(double e_y, double given_ea) const;

    // (e_a, e_y) with e_a ~ N(0,1), e_y = rho e_a + sqrt(1-rho^2) eta.
    std::pair<double, double> sample_pair(Rng& rng) const;

private:
    double rho_raw_ = 0.0;
    double rho_ = 0.0;
};

double standard_normal_log_density(double x);

} // namespace flowiv
