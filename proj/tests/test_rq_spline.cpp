#include "flowiv/errors.hpp"
#include "flowiv/rng.hpp"
#include "flowiv/rq_spline.hpp"
#include "flowiv/spline_tape.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace flowiv;

namespace {

std::vector<double> random_raw(const SplineParams& p, Rng& rng, double scale = 1.0) {
    std::vector<double> raw(static_cast<std::size_t>(p.raw_size()));
    for (double& v : raw) v = scale * rng.normal();
    return raw;
}

bool near_knot(const SplineTransform& t, double x, double margin) {
    for (int i = 0; i <= t.bins(); ++i) {
        if (std::abs(x - t.x_knots()(i)) < margin) return true;
    }
    return false;
}

} // namespace

TEST_CASE("spline_from_raw: zeros give equal bins, unit derivatives, identity map") {
    const SplineParams p;
    const std::vector<double> raw(static_cast<std::size_t>(p.raw_size()), 0.0);
    const SplineTransform t = SplineTransform::from_raw(raw, p);

    for (int i = 0; i < p.bins; ++i) {
        CHECK(t.widths()(i) == doctest::Approx(2.0 * p.bound / p.bins).epsilon(1e-14));
        CHECK(t.heights()(i) == doctest::Approx(2.0 * p.bound / p.bins).epsilon(1e-14));
    }
    for (int i = 0; i <= p.bins; ++i) {
        CHECK(t.derivatives()(i) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto [y, logdet] = t.forward(0.37);
    CHECK(y == doctest::Approx(0.37).epsilon(1e-12));
    CHECK(logdet == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("spline_from_raw: knots strictly increasing for arbitrary raw input") {
    const SplineParams p;
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng, 3.0), p);
        for (int i = 0; i < p.bins; ++i) {
            CHECK(t.x_knots()(i + 1) > t.x_knots()(i));
            CHECK(t.y_knots()(i + 1) > t.y_knots()(i));
            CHECK(t.widths()(i) > 0.0);
            CHECK(t.heights()(i) > 0.0);
        }
        for (int i = 0; i <= p.bins; ++i) CHECK(t.derivatives()(i) > 0.0);
    }
}

TEST_CASE("spline_from_raw: saturated width logit hits the floored maximum") {
    const SplineParams p;
    std::vector<double> raw(static_cast<std::size_t>(p.raw_size()), 0.0);
    raw[2] = 60.0; // dominates the softmax completely
    const SplineTransform t = SplineTransform::from_raw(raw, p);
    const double cap = 2.0 * p.bound * (1.0 - (p.bins - 1) * p.min_bin_frac);
    CHECK(t.widths()(2) >= cap - 1e-12);
    // All other widths at the floor.
    for (int i = 0; i < p.bins; ++i) {
        if (i != 2) CHECK(t.widths()(i) == doctest::Approx(2.0 * p.bound * p.min_bin_frac));
    }
}

TEST_CASE("forward: unit-slope tails beyond the bound") {
    const SplineParams p;
    Rng rng(33);
    const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng), p);
    const auto [y, logdet] = t.forward(p.bound + 5.0);
    CHECK(y == doctest::Approx(t.forward(p.bound).first + 5.0).epsilon(1e-12));
    CHECK(y == doctest::Approx(p.bound + 5.0).epsilon(1e-12));
    CHECK(logdet == 0.0);
    const auto [y2, logdet2] = t.forward(-p.bound - 2.5);
    CHECK(y2 == doctest::Approx(-p.bound - 2.5).epsilon(1e-12));
    CHECK(logdet2 == 0.0);
}

TEST_CASE("forward: logdet equals the finite-difference log-slope") {
    const SplineParams p;
    Rng rng(55);
    int checked = 0;
    while (checked < 100) {
        const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng), p);
        const double x = rng.uniform(-p.bound, p.bound);
        if (near_knot(t, x, 1e-3)) continue;
        const double h = 1e-6;
        const double fd = (t.forward(x + h).first - t.forward(x - h).first) / (2.0 * h);
        CHECK(t.forward(x).second == doctest::Approx(std::log(fd)).epsilon(1e-5));
        ++checked;
    }
}

TEST_CASE("inverse: identity spline inverts to itself") {
    const SplineParams p;
    const std::vector<double> raw(static_cast<std::size_t>(p.raw_size()), 0.0);
    const SplineTransform t = SplineTransform::from_raw(raw, p);
    const auto [x, logdet] = t.inverse(-1.2);
    CHECK(x == doctest::Approx(-1.2).epsilon(1e-12));
    CHECK(logdet == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("inverse: round trip over [-3B, 3B] and logdet antisymmetry") {
    const SplineParams p;
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng, 2.0), p);
        for (int i = 0; i < 50; ++i) {
            const double x = rng.uniform(-3.0 * p.bound, 3.0 * p.bound);
            const auto [y, ld_f] = t.forward(x);
            const auto [x_back, ld_i] = t.inverse(y);
            CHECK(std::abs(x_back - x) < 1e-8);
            CHECK(std::abs(ld_f + ld_i) < 1e-9);
        }
    }
}

TEST_CASE("round trip: 10^4 random points below 1e-8") {
    const SplineParams p;
    Rng rng(101);
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng, 2.0), p);
        for (int i = 0; i < 1000; ++i) {
            const double x = rng.uniform(-1.5 * p.bound, 1.5 * p.bound);
            const double back = t.inverse(t.forward(x).first).first;
            worst = std::max(worst, std::abs(back - x));
        }
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("strict monotonicity on random splines") {
    const SplineParams p;
    Rng rng(202);
    for (int trial = 0; trial < 50; ++trial) {
        const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng, 3.0), p);
        double prev_x = -2.0 * p.bound;
        double prev_y = t.forward(prev_x).first;
        for (int i = 1; i <= 200; ++i) {
            const double x = -2.0 * p.bound + 4.0 * p.bound * i / 200.0;
            const double y = t.forward(x).first;
            CHECK(y > prev_y);
            prev_y = y;
        }
    }
}

TEST_CASE("C1 continuity at interior knots") {
    const SplineParams p;
    Rng rng(303);
    for (int trial = 0; trial < 20; ++trial) {
        const SplineTransform t = SplineTransform::from_raw(random_raw(p, rng, 2.0), p);
        for (int k = 1; k < p.bins; ++k) {
            const double xk = t.x_knots()(k);
            // One ulp either side of the knot: the one-sided limits are
            // evaluated through the two adjacent bins' rational formulas.
            const double left = t.derivative(std::nextafter(xk, -1e300));
            const double right = t.derivative(std::nextafter(xk, 1e300));
            CHECK(std::abs(left - right) < 1e-9);
            // Both sides agree with the knot derivative parameter.
            CHECK(left == doctest::Approx(t.derivatives()(k)).epsilon(1e-9));
        }
        // Tail joins: derivative 1 just inside both bounds.
        CHECK(t.derivative(std::nextafter(-p.bound, 0.0)) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(t.derivative(std::nextafter(p.bound, 0.0)) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("tape spline agrees with the plain spline in both directions") {
    const SplineParams p;
    Rng rng(404);
    for (int trial = 0; trial < 10; ++trial) {
        const auto raw = random_raw(p, rng, 2.0);
        const SplineTransform t = SplineTransform::from_raw(raw, p);

        const int n = 64;
        Mat xs(n, 1), ys(n, 1);
        for (int i = 0; i < n; ++i) {
            xs(i, 0) = rng.uniform(-1.5 * p.bound, 1.5 * p.bound);
            ys(i, 0) = rng.uniform(-1.5 * p.bound, 1.5 * p.bound);
        }

        Tape tape;
        Mat raw_row = Eigen::Map<const Eigen::RowVectorXd>(raw.data(),
                                                           static_cast<Eigen::Index>(raw.size()));
        const SplineBlocks blocks = spline_blocks_on_tape(tape, tape.constant(raw_row), p);
        auto [yf, ldf] = spline_forward_on_tape(tape, blocks, tape.constant(xs), p);
        auto [xi, ldi] = spline_inverse_on_tape(tape, blocks, tape.constant(ys), p);

        for (int i = 0; i < n; ++i) {
            const auto [py, pld] = t.forward(xs(i, 0));
            CHECK(tape.value(yf)(i, 0) == doctest::Approx(py).epsilon(1e-12));
            CHECK(tape.value(ldf)(i, 0) == doctest::Approx(pld).epsilon(1e-12));
            const auto [px, pldi] = t.inverse(ys(i, 0));
            CHECK(tape.value(xi)(i, 0) == doctest::Approx(px).epsilon(1e-12));
            CHECK(tape.value(ldi)(i, 0) == doctest::Approx(pldi).epsilon(1e-12));
        }
    }
}

TEST_CASE("tape spline: gradients of outputs and logdets w.r.t. raw match finite differences") {
    const SplineParams p{4, 4.0, 1e-3, 1e-3};
    Rng rng(505);

    auto make_loss = [&](const Mat& pts, bool forward_dir) {
        return [&pts, forward_dir, p](Tape& t, const ParamLeaves& leaves) -> Var {
            Var raw_row = t.transpose(leaves.at("raw"));
            const SplineBlocks blocks = spline_blocks_on_tape(t, raw_row, p);
            auto [out, ld] = forward_dir
                                 ? spline_forward_on_tape(t, blocks, t.constant(pts), p)
                                 : spline_inverse_on_tape(t, blocks, t.constant(pts), p);
            // Mixes both outputs so every gradient path is exercised.
            return t.add(t.sum(t.mul(out, out)), t.scale(t.sum(ld), 0.7));
        };
    };

    for (int trial = 0; trial < 25; ++trial) {
        ParamVector pv;
        pv.add_segment("raw", static_cast<std::size_t>(p.raw_size()));
        for (std::size_t i = 0; i < pv.size(); ++i) pv[i] = 0.8 * rng.normal();

        Mat pts(8, 1);
        for (int i = 0; i < 8; ++i) pts(i, 0) = rng.uniform(-1.2 * p.bound, 1.2 * p.bound);

        for (bool dir : {true, false}) {
            auto loss = make_loss(pts, dir);
            const double h = 1e-5;
            ParamVector fd;
            fd.add_segment("raw", pv.size());
            ParamVector work = pv;
            for (std::size_t i = 0; i < pv.size(); ++i) {
                work[i] = pv[i] + h;
                const double up = eval_loss(loss, work);
                work[i] = pv[i] - h;
                const double dn = eval_loss(loss, work);
                work[i] = pv[i];
                fd[i] = (up - dn) / (2.0 * h);
            }
            const ParamVector ad = grad(loss, pv);
            for (std::size_t i = 0; i < pv.size(); ++i) {
                const double denom = std::max({1.0, std::abs(ad[i]), std::abs(fd[i])});
                CHECK(std::abs(ad[i] - fd[i]) / denom < 1e-4);
            }
        }
    }
}

TEST_CASE("spline_from_raw: invalid input raises") {
    const SplineParams p;
    std::vector<double> raw(static_cast<std::size_t>(p.raw_size()), 0.0);
    raw[3] = std::nan("");
    CHECK_THROWS_AS(SplineTransform::from_raw(raw, p), ValidationError);
    std::vector<double> short_raw(5, 0.0);
    CHECK_THROWS_AS(SplineTransform::from_raw(short_raw, p), ValidationError);
}
