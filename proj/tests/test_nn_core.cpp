#include "flowiv/adam.hpp"
#include "flowiv/errors.hpp"
#include "flowiv/mlp.hpp"
#include "flowiv/param_vector.hpp"
#include "flowiv/rng.hpp"
#include "flowiv/spline_tape.hpp"
#include "flowiv/tape.hpp"

#include <doctest.h>

#include <cmath>

using namespace flowiv;

namespace {

// Central finite differences of eval_loss, step 1e-5.
ParamVector fd_grad(const LossBuilder& loss, const ParamVector& at, double h = 1e-5) {
    ParamVector g;
    for (const auto& s : at.segments()) g.add_segment(s.name, s.size);
    ParamVector p = at;
    for (std::size_t i = 0; i < at.size(); ++i) {
        p[i] = at[i] + h;
        const double up = eval_loss(loss, p);
        p[i] = at[i] - h;
        const double dn = eval_loss(loss, p);
        p[i] = at[i];
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

double max_rel_err(const ParamVector& ad, const ParamVector& fd) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const double denom = std::max({1.0, std::abs(ad[i]), std::abs(fd[i])});
        worst = std::max(worst, std::abs(ad[i] - fd[i]) / denom);
    }
    return worst;
}

} // namespace

TEST_CASE("grad: analytic derivative of theta^2") {
    ParamVector p;
    p.add_segment("theta", 1);
    p[0] = 3.0;
    auto loss = [](Tape& t, const ParamLeaves& leaves) {
        return t.sum(t.square(leaves.at("theta")));
    };
    const ParamVector g = grad(loss, p);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad: sum has all-ones gradient") {
    ParamVector p;
    p.add_segment("theta", 7);
    Rng rng(11);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.normal();
    auto loss = [](Tape& t, const ParamLeaves& leaves) {
        return t.sum(leaves.at("theta"));
    };
    const ParamVector g = grad(loss, p);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g[i] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("grad: one L3 likelihood term through a 2-bin spline matches finite differences") {
    const SplineParams sp{2, 4.0, 1e-3, 1e-3};
    const double y_obs = 0.3;
    const double eps_a = -0.4;
    auto loss = [&](Tape& t, const ParamLeaves& leaves) {
        Var raw_row = t.transpose(leaves.at("raw"));
        const SplineBlocks blocks = spline_blocks_on_tape(t, raw_row, sp);
        auto [eps_y, logdet] =
            spline_inverse_on_tape(t, blocks, t.constant(Mat::Constant(1, 1, y_obs)), sp);
        Var rho = t.tanh_(leaves.at("rho_raw"));
        Var var1 = t.add_const(t.neg(t.square(rho)), 1.0);
        Var diff = t.sub(eps_y, t.mul(rho, t.constant_scalar(eps_a)));
        Var quad = t.scale(t.div(t.square(diff), var1), -0.5);
        Var ll = t.add(t.add(t.add_const(quad, -0.91893853320467274),
                             t.scale(t.log_(var1), -0.5)),
                       logdet);
        return t.neg(t.sum(ll));
    };

    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        ParamVector p;
        p.add_segment("raw", 5);
        p.add_segment("rho_raw", 1);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.5 * rng.normal();
        const ParamVector ad = grad(loss, p);
        const ParamVector fd = fd_grad(loss, p);
        CHECK(max_rel_err(ad, fd) < 1e-4);
    }
}

TEST_CASE("grad: composite of every tape op matches finite differences on 50 random points") {
    // Exercises matmul, softmax, cumsum0, pad_ones, slice, gather, select,
    // repeat, group_mean, transpose and the elementwise family.
    const std::vector<int> idx = {0, 2, 1, 3};
    const std::vector<char> mask = {1, 0, 1, 1};
    auto loss = [&](Tape& t, const ParamLeaves& leaves) {
        Var p = leaves.at("p");            // 8x1
        Var w = leaves.at("w");            // 6x1
        Var m = t.transpose(leaves.at("m")); // 1x4 -> matrix uses
        Var row = t.repeat_rows(m, 4);     // 4x4
        Var sm = t.softmax_rows(row);      // 4x4
        Var cs = t.cumsum0_rows(sm);       // 4x5
        Var g1 = t.gather_cols(cs, idx);   // 4x1
        Var pm = t.matmul(t.transpose(t.slice_cols(t.transpose(p), 0, 4)),
                          t.slice_cols(t.transpose(p), 4, 4)); // 4x1 * 1x4 -> 4x4
        Var g2 = t.gather_cols(t.tanh_(pm), idx);
        Var padded = t.pad_ones(t.transpose(t.softplus(w))); // 1x8
        Var g3 = t.gather_cols(padded, {1});
        Var mixed = t.add(t.mul(g1, g2), t.div(g1, t.add_const(t.square(g2), 1.5)));
        Var sel = t.select_rows(mask, mixed, t.sqrt_(t.add_const(t.square(g1), 0.3)));
        Var gm = t.group_mean(sel, 2); // 2x1
        Var lead = t.mul(g3, t.exp_(t.scale(gm, 0.2)));
        return t.add(t.sum(t.log_(t.add_const(t.square(lead), 0.7))), t.mean(t.neg(sel)));
    };

    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        ParamVector p;
        p.add_segment("p", 8);
        p.add_segment("w", 6);
        p.add_segment("m", 4);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.7 * rng.normal();
        const ParamVector ad = grad(loss, p);
        const ParamVector fd = fd_grad(loss, p);
        CHECK(max_rel_err(ad, fd) < 1e-4);
    }
}

TEST_CASE("grad: deterministic across repeated evaluation") {
    ParamVector p;
    p.add_segment("x", 16);
    Rng rng(3);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = rng.normal();
    auto loss = [](Tape& t, const ParamLeaves& leaves) {
        Var x = leaves.at("x");
        return t.sum(t.mul(t.tanh_(x), t.softplus(x)));
    };
    const ParamVector g1 = grad(loss, p);
    const ParamVector g2 = grad(loss, p);
    CHECK(g1 == g2);
}

TEST_CASE("grad: non-finite loss names the offending segment") {
    ParamVector p;
    p.add_segment("good", 2);
    p.add_segment("bad", 2);
    p.segment("bad")[1] = std::nan("");
    auto loss = [](Tape& t, const ParamLeaves& leaves) {
        return t.add(t.sum(leaves.at("good")), t.sum(leaves.at("bad")));
    };
    CHECK_THROWS_WITH_AS(grad(loss, p), doctest::Contains("bad"), NumericError);
}

TEST_CASE("mlp: zero network maps everything to zero") {
    const MlpShape shape{3, 4, 20, 3};
    const Mlp net = Mlp::zeros(shape);
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    const Eigen::VectorXd y = net.forward(x);
    REQUIRE(y.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(y(i) == 0.0);
}

TEST_CASE("mlp: identity single linear layer echoes its input") {
    const MlpShape shape{3, 3, 0, 0}; // no hidden layers: pure linear head
    ParamVector p;
    p.add_segment("w", shape.param_count());
    auto seg = p.segment("w");
    // W = I (column-major), b = 0
    for (int j = 0; j < 3; ++j) seg[static_cast<std::size_t>(j * 3 + j)] = 1.0;
    const Mlp net = Mlp::from_flat(shape, seg);
    Eigen::VectorXd x(3);
    x << 0.3, -1.7, 2.2;
    const Eigen::VectorXd y = net.forward(x);
    for (int i = 0; i < 3; ++i) CHECK(y(i) == doctest::Approx(x(i)).epsilon(1e-15));
}

TEST_CASE("mlp: repeated evaluation is bitwise identical") {
    const MlpShape shape{1, 23, 20, 3};
    Rng rng(99);
    const Mlp net = Mlp::init(shape, rng, false);
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.37);
    const Eigen::VectorXd y1 = net.forward(x);
    const Eigen::VectorXd y2 = net.forward(x);
    REQUIRE(y1.size() == 23);
    for (int i = 0; i < 23; ++i) CHECK(y1(i) == y2(i));
}

TEST_CASE("mlp: dimension mismatch raises") {
    const MlpShape shape{2, 1, 20, 2};
    const Mlp net = Mlp::zeros(shape);
    Eigen::VectorXd x(3);
    x.setZero();
    CHECK_THROWS_AS(net.forward(x), ValidationError);
}

TEST_CASE("mlp: batched tape forward equals plain forward, and gradients match FD") {
    const MlpShape shape{1, 5, 8, 2};
    Rng rng(5);
    ParamVector p;
    p.add_segment("net", shape.param_count());
    {
        const Mlp net = Mlp::init(shape, rng, false);
        net.to_flat(p.segment("net"));
    }
    const Mlp net = Mlp::from_flat(shape, p.segment("net"));

    Mat x(3, 1);
    x << 0.5, -1.0, 2.0;
    Tape tape;
    auto leaves = mlp_leaves(tape, shape, p.segment("net"));
    Var out = mlp_forward_on_tape(tape, shape, leaves, tape.constant(x));
    for (int i = 0; i < 3; ++i) {
        const Eigen::VectorXd ref = net.forward(Eigen::VectorXd::Constant(1, x(i, 0)));
        for (int j = 0; j < 5; ++j) {
            CHECK(tape.value(out)(i, j) == doctest::Approx(ref(j)).epsilon(1e-14));
        }
    }

    auto loss = [&](Tape& t, const ParamLeaves& leaves2) {
        // Rebuild the weight tensors from the flat segment leaf.
        Var flat = leaves2.at("net");
        std::vector<Var> params;
        int pos = 0;
        const std::vector<std::pair<int, int>> dims = {{1, 8}, {1, 8}, {8, 8},
                                                       {1, 8}, {8, 5}, {1, 5}};
        for (auto [r, c] : dims) {
            Var chunk = t.slice_cols(t.transpose(flat), pos, r * c);
            params.push_back(t.reshape(chunk, r, c));
            pos += r * c;
        }
        Var out2 = mlp_forward_on_tape(t, shape, params, t.constant(x));
        return t.sum(t.tanh_(out2));
    };
    const ParamVector ad = grad(loss, p);
    const ParamVector fd = fd_grad(loss, p);
    CHECK(max_rel_err(ad, fd) < 1e-4);
}

TEST_CASE("adam: zero gradient is a fixed point for parameters") {
    AdamState adam(3);
    std::vector<double> params = {1.0, -2.0, 0.5};
    const std::vector<double> before = params;
    std::vector<double> grads = {0.0, 0.0, 0.0};
    adam.step(params, grads);
    for (int i = 0; i < 3; ++i) CHECK(params[i] == before[i]);
    CHECK(adam.step_count() == 1);
    for (double m : adam.first_moment()) CHECK(m == 0.0);
}

TEST_CASE("adam: first step moves by ~lr in the negative gradient direction") {
    AdamConfig cfg;
    cfg.lr = 1e-3;
    AdamState adam(4, cfg);
    std::vector<double> params = {0.0, 0.0, 0.0, 0.0};
    std::vector<double> grads = {0.5, -0.25, 3.0, -1e-2};
    adam.step(params, grads);
    for (int i = 0; i < 4; ++i) {
        const double expect = -cfg.lr * grads[i] / (std::abs(grads[i]) + cfg.eps);
        CHECK(params[i] == doctest::Approx(expect).epsilon(1e-9));
        CHECK(params[i] * grads[i] < 0.0);
    }
}

TEST_CASE("adam: constant gradient drifts monotonically against its sign") {
    AdamState adam(1);
    std::vector<double> params = {0.0};
    std::vector<double> grads = {0.7};
    double prev = params[0];
    for (int s = 0; s < 200; ++s) {
        adam.step(params, grads);
        CHECK(params[0] < prev);
        prev = params[0];
    }
}

TEST_CASE("adam: non-finite gradient raises") {
    AdamState adam(2);
    std::vector<double> params = {0.0, 0.0};
    std::vector<double> grads = {1.0, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(adam.step(params, grads), NumericError);
}
