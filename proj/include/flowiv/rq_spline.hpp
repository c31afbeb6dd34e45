#pragma once

#include <Eigen/Core>

#include <span>
#include <utility>

namespace flowiv {

// Shape constants of a monotone rational-quadratic spline with linear tails.
// raw_size() is the length of the unconstrained parameter block a conditioner
// must emit: K width logits, K height logits, K-1 interior derivative raws.
struct SplineParams {
    int bins = 8;
    double bound = 4.0;
    double min_bin_frac = 1e-3;
    double min_derivative = 1e-3;

    int raw_size() const { return 3 * bins - 1; }
};

// Strictly increasing C1 bijection of the real line: rational-quadratic on
// [-bound, bound], identity outside. Boundary derivatives are pinned to 1 so
// the tails join smoothly. Immutable once constructed.
class SplineTransform {
public:
    static SplineTransform from_raw(std::span<const double> raw, const SplineParams& p);

    // (y, log t'(x))
    std::pair<double, double> forward(double x) const;
    // (x, -log t'(x)) with forward(x).first == y
    std::pair<double, double> inverse(double y) const;
    double derivative(double x) const;

    const Eigen::VectorXd& widths() const { return widths_; }
    const Eigen::VectorXd& heights() const { return heights_; }
    const Eigen::VectorXd& derivatives() const { return derivs_; }
    const Eigen::VectorXd& x_knots() const { return xk_; }
    const Eigen::VectorXd& y_knots() const { return yk_; }
    double bound() const { return bound_; }
    int bins() const { return static_cast<int>(widths_.size()); }

private:
    SplineTransform() = default;

    int find_bin_x(double x) const;
    int find_bin_y(double y) const;

    Eigen::VectorXd widths_, heights_, derivs_; // K, K, K+1
    Eigen::VectorXd xk_, yk_;                   // K+1 knots each
    double bound_ = 0.0;
};

} // namespace flowiv
