#include "flowiv/rq_spline.hpp"

#include "flowiv/errors.hpp"

#include <algorithm>
#include <cmath>

namespace flowiv {

namespace {

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Shift such that softplus(shift) == 1 - min_derivative, i.e. a raw value of
// zero yields a derivative of exactly 1 (identity start).
double derivative_shift(double min_derivative) {
    return std::log(std::expm1(1.0 - min_derivative));
}

Eigen::VectorXd normalized_bins(std::span<const double> logits, int k,
                                double min_frac, double total) {
    double m = logits[0];
    for (int i = 1; i < k; ++i) m = std::max(m, logits[i]);
    Eigen::VectorXd e(k);
    for (int i = 0; i < k; ++i) e(i) = std::exp(logits[i] - m);
    e /= e.sum();
    // Floor each bin at min_frac of the interval; keeps inversion conditioned.
    return total * (min_frac + (1.0 - k * min_frac) * e.array());
}

} // namespace

SplineTransform SplineTransform::from_raw(std::span<const double> raw,
                                          const SplineParams& p) {
    const int k = p.bins;
    if (static_cast<int>(raw.size()) != p.raw_size()) {
        throw ValidationError("spline_from_raw: expected " + std::to_string(p.raw_size()) +
                              " raw values, got " + std::to_string(raw.size()));
    }
    for (double v : raw) {
        if (!std::isfinite(v)) throw ValidationError("spline_from_raw: non-finite raw value");
    }
    if (!(p.bound > 0.0)) throw ValidationError("spline_from_raw: bound must be positive");

    SplineTransform t;
    t.bound_ = p.bound;
    const double total = 2.0 * p.bound;
    t.widths_ = normalized_bins(raw.subspan(0, k), k, p.min_bin_frac, total);
    t.heights_ = normalized_bins(raw.subspan(k, k), k, p.min_bin_frac, total);

    t.derivs_.resize(k + 1);
    t.derivs_(0) = 1.0;
    t.derivs_(k) = 1.0;
    const double shift = derivative_shift(p.min_derivative);
    for (int i = 0; i < k - 1; ++i) {
        t.derivs_(i + 1) = p.min_derivative + softplus(raw[2 * k + i] + shift);
    }

    t.xk_.resize(k + 1);
    t.yk_.resize(k + 1);
    t.xk_(0) = -p.bound;
    t.yk_(0) = -p.bound;
    for (int i = 0; i < k; ++i) {
        t.xk_(i + 1) = t.xk_(i) + t.widths_(i);
        t.yk_(i + 1) = t.yk_(i) + t.heights_(i);
    }
    // Pin the upper knot; cumulative rounding must not leak into the tails.
    t.xk_(k) = p.bound;
    t.yk_(k) = p.bound;
    return t;
}

int SplineTransform::find_bin_x(double x) const {
    const int k = bins();
    int b = 0;
    while (b < k - 1 && x >= xk_(b + 1)) ++b;
    return b;
}

int SplineTransform::find_bin_y(double y) const {
    const int k = bins();
    int b = 0;
    while (b < k - 1 && y >= yk_(b + 1)) ++b;
    return b;
}

std::pair<double, double> SplineTransform::forward(double x) const {
    if (!std::isfinite(x)) throw ValidationError("spline forward: non-finite input");
    if (x <= -bound_ || x >= bound_) return {x, 0.0};

    const int b = find_bin_x(x);
    const double w = widths_(b), h = heights_(b);
    const double d0 = derivs_(b), d1 = derivs_(b + 1);
    const double s = h / w;
    const double xi = (x - xk_(b)) / w;
    const double om = 1.0 - xi;
    const double t2 = d1 + d0 - 2.0 * s;
    const double den = s + t2 * xi * om;
    const double y = yk_(b) + h * (s * xi * xi + d0 * xi * om) / den;
    const double slope = s * s * (d1 * xi * xi + 2.0 * s * xi * om + d0 * om * om) /
                         (den * den);
    return {y, std::log(slope)};
}

std::pair<double, double> SplineTransform::inverse(double y) const {
    if (!std::isfinite(y)) throw ValidationError("spline inverse: non-finite input");
    if (y <= -bound_ || y >= bound_) return {y, 0.0};

    const int b = find_bin_y(y);
    const double w = widths_(b), h = heights_(b);
    const double d0 = derivs_(b), d1 = derivs_(b + 1);
    const double s = h / w;
    const double yr = y - yk_(b);
    const double t2 = d1 + d0 - 2.0 * s;

    // Root in [0,1] of a*xi^2 + b*xi + c = 0, written in the numerically
    // stable 2c / (-b - sqrt(disc)) form.
    const double qa = h * (s - d0) + yr * t2;
    const double qb = h * d0 - yr * t2;
    const double qc = -s * yr;
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc < 0.0) {
        throw NumericError("spline inverse: negative discriminant " + std::to_string(disc));
    }
    double xi = 2.0 * qc / (-qb - std::sqrt(disc));
    xi = std::clamp(xi, 0.0, 1.0);

    const double x = xk_(b) + xi * w;
    const double om = 1.0 - xi;
    const double den = s + t2 * xi * om;
    const double slope = s * s * (d1 * xi * xi + 2.0 * s * xi * om + d0 * om * om) /
                         (den * den);
    return {x, -std::log(slope)};
}

double SplineTransform::derivative(double x) const {
    return std::exp(forward(x).second);
}

} // namespace flowiv
