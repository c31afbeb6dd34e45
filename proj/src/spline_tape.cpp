#include "flowiv/spline_tape.hpp"

#include "flowiv/errors.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace flowiv {

namespace {

// Matches SplineTransform::from_raw.
double derivative_shift(double min_derivative) {
    return std::log(std::expm1(1.0 - min_derivative));
}

struct BinSearch {
    std::vector<char> inside;
    std::vector<int> idx;
};

// Locates the bin of each value against per-row (or broadcast) knots.
// Out-of-range rows are mapped to the bin containing 0 so the rational
// formulas stay well defined for them; their outputs are masked afterwards.
BinSearch locate_bins(const Mat& knots, const Mat& values, double bound) {
    const Eigen::Index n = values.rows();
    const int k = static_cast<int>(knots.cols()) - 1;
    const bool broadcast = knots.rows() == 1;
    BinSearch out;
    out.inside.resize(n);
    out.idx.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index r = broadcast ? 0 : i;
        const double v = values(i, 0);
        const bool in = std::isfinite(v) && v > -bound && v < bound;
        out.inside[i] = in ? 1 : 0;
        const double probe = in ? v : 0.0;
        int b = 0;
        while (b < k - 1 && probe >= knots(r, b + 1)) ++b;
        out.idx[i] = b;
    }
    return out;
}

struct Gathered {
    Var w, h, d0, d1, xk, yk, s;
};

Gathered gather_bin(Tape& t, const SplineBlocks& b, const std::vector<int>& idx) {
    Gathered g;
    g.w = t.gather_cols(b.widths, idx);
    g.h = t.gather_cols(b.heights, idx);
    g.d0 = t.gather_cols(b.derivs, idx);
    std::vector<int> idx1(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx1[i] = idx[i] + 1;
    g.d1 = t.gather_cols(b.derivs, idx1);
    g.xk = t.gather_cols(b.xknots, idx);
    g.yk = t.gather_cols(b.yknots, idx);
    g.s = t.div(g.h, g.w);
    return g;
}

// s^2 (d1 xi^2 + 2 s xi om + d0 om^2) / den^2
Var slope_at(Tape& t, const Gathered& g, Var xi, Var om, Var den) {
    Var num = t.add(t.add(t.mul(g.d1, t.square(xi)), t.scale(t.mul(g.s, t.mul(xi, om)), 2.0)),
                    t.mul(g.d0, t.square(om)));
    return t.div(t.mul(t.square(g.s), num), t.square(den));
}

Var masked_input(Tape& t, const std::vector<char>& inside, Var v) {
    Var zeros = t.constant(Mat::Zero(t.value(v).rows(), 1));
    return t.select_rows(inside, v, zeros);
}

} // namespace

SplineBlocks spline_blocks_on_tape(Tape& tape, Var raw, const SplineParams& p) {
    const int k = p.bins;
    if (tape.value(raw).cols() != p.raw_size()) {
        throw ValidationError("spline blocks: raw block must have width " +
                              std::to_string(p.raw_size()));
    }
    const double total = 2.0 * p.bound;
    const double span = 1.0 - k * p.min_bin_frac;

    auto bins_from = [&](int offset) {
        Var sm = tape.softmax_rows(tape.slice_cols(raw, offset, k));
        return tape.scale(tape.add_const(tape.scale(sm, span), p.min_bin_frac), total);
    };

    SplineBlocks b;
    b.rows = static_cast<int>(tape.value(raw).rows());
    b.widths = bins_from(0);
    b.heights = bins_from(k);
    b.xknots = tape.add_const(tape.cumsum0_rows(b.widths), -p.bound);
    b.yknots = tape.add_const(tape.cumsum0_rows(b.heights), -p.bound);

    Var draw = tape.slice_cols(raw, 2 * k, k - 1);
    Var dint = tape.add_const(tape.softplus(tape.add_const(draw, derivative_shift(p.min_derivative))),
                              p.min_derivative);
    b.derivs = tape.pad_ones(dint);
    return b;
}

std::pair<Var, Var> spline_forward_on_tape(Tape& tape, const SplineBlocks& b, Var x,
                                           const SplineParams& p) {
    const BinSearch bs = locate_bins(tape.value(b.xknots), tape.value(x), p.bound);
    Var xs = masked_input(tape, bs.inside, x);
    const Gathered g = gather_bin(tape, b, bs.idx);

    Var xi = tape.div(tape.sub(xs, g.xk), g.w);
    Var om = tape.add_const(tape.neg(xi), 1.0);
    Var xiom = tape.mul(xi, om);
    Var t2 = tape.sub(tape.add(g.d1, g.d0), tape.scale(g.s, 2.0));
    Var den = tape.add(g.s, tape.mul(t2, xiom));
    Var num = tape.mul(g.h, tape.add(tape.mul(g.s, tape.square(xi)), tape.mul(g.d0, xiom)));
    Var y_in = tape.add(g.yk, tape.div(num, den));
    Var logdet_in = tape.log_(slope_at(tape, g, xi, om, den));

    Var zeros = tape.constant(Mat::Zero(tape.value(x).rows(), 1));
    Var y = tape.select_rows(bs.inside, y_in, x);
    Var logdet = tape.select_rows(bs.inside, logdet_in, zeros);
    return {y, logdet};
}

std::pair<Var, Var> spline_inverse_on_tape(Tape& tape, const SplineBlocks& b, Var y,
                                           const SplineParams& p) {
    const BinSearch bs = locate_bins(tape.value(b.yknots), tape.value(y), p.bound);
    Var ys = masked_input(tape, bs.inside, y);
    const Gathered g = gather_bin(tape, b, bs.idx);

    Var yr = tape.sub(ys, g.yk);
    Var t2 = tape.sub(tape.add(g.d1, g.d0), tape.scale(g.s, 2.0));
    Var qa = tape.add(tape.mul(g.h, tape.sub(g.s, g.d0)), tape.mul(yr, t2));
    Var qb = tape.sub(tape.mul(g.h, g.d0), tape.mul(yr, t2));
    Var qc = tape.neg(tape.mul(g.s, yr));
    Var disc = tape.sub(tape.square(qb), tape.scale(tape.mul(qa, qc), 4.0));

    const Mat& dv = tape.value(disc);
    for (Eigen::Index i = 0; i < dv.rows(); ++i) {
        if (dv(i, 0) < 0.0) {
            throw NumericError("spline inverse: negative discriminant at row " +
                               std::to_string(i));
        }
    }

    Var xi = tape.div(tape.scale(qc, 2.0), tape.neg(tape.add(qb, tape.sqrt_(disc))));
    Var om = tape.add_const(tape.neg(xi), 1.0);
    Var den = tape.add(g.s, tape.mul(t2, tape.mul(xi, om)));
    Var x_in = tape.add(g.xk, tape.mul(xi, g.w));
    Var logdet_in = tape.neg(tape.log_(slope_at(tape, g, xi, om, den)));

    Var zeros = tape.constant(Mat::Zero(tape.value(y).rows(), 1));
    Var x = tape.select_rows(bs.inside, x_in, y);
    Var logdet = tape.select_rows(bs.inside, logdet_in, zeros);
    return {x, logdet};
}

} // namespace flowiv
