#include "flowiv/noise.hpp"

#include "flowiv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace flowiv {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

double standard_normal_log_density(double x) {
    return -0.5 * kLog2Pi - 0.5 * x * x;
}

CorrelatedGaussian CorrelatedGaussian::from_raw(double rho_raw) {
    if (!std::isfinite(rho_raw)) throw ValidationError("rho_raw must be finite");
    CorrelatedGaussian g;
    g.rho_raw_ = rho_raw;
    // tanh rounds to +-1.0 exactly for |raw| >~ 19; keep |rho| strictly
    // inside the unit interval so densities stay finite.
    constexpr double kRhoCap = 1.0 - 1e-12;
    g.rho_ = std::clamp(std::tanh(rho_raw), -kRhoCap, kRhoCap);
    return g;
}

CorrelatedGaussian CorrelatedGaussian::from_rho(double rho) {
    if (!(std::abs(rho) < 1.0)) {
        throw ValidationError("correlation must satisfy |rho| < 1, got " + std::to_string(rho));
    }
    CorrelatedGaussian g;
    g.rho_ = rho;
    g.rho_raw_ = std::atanh(rho);
    return g;
}

double CorrelatedGaussian::log_density_joint(double e_a, double e_y) const {
    const double v = 1.0 - rho_ * rho_;
    const double q = (e_a * e_a - 2.0 * rho_ * e_a * e_y + e_y * e_y) / v;
    return -kLog2Pi - 0.5 * std::log(v) - 0.5 * q;
}

double CorrelatedGaussian::log_density_conditional(double e_y, double given_ea) const {
    const double v = 1.0 - rho_ * rho_;
    const double d = e_y - rho_ * given_ea;
    return -0.5 * kLog2Pi - 0.5 * std::log(v) - 0.5 * d * d / v;
}

std::pair<double, double> CorrelatedGaussian::sample_pair(Rng& rng) const {
    const double e_a = rng.normal();
    const double eta = rng.normal();
    return {e_a, rho_ * e_a + std::sqrt(1.0 - rho_ * rho_) * eta};
}

} // namespace flowiv
