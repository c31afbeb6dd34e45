#include "flowiv/errors.hpp"
#include "flowiv/flow.hpp"
#include "flowiv/noise.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <numbers>

using namespace flowiv;

namespace {

ScmFlowModel random_model(std::uint64_t seed, double rho, double param_scale = 0.4) {
    Rng rng(seed);
    FlowArchitecture arch;
    ScmFlowModel m = ScmFlowModel::identity_model(arch, rng);
    for (auto* flow : {&m.h_z, &m.h_a, &m.h_y}) {
        for (double& v : flow->params().values()) v += param_scale * rng.normal();
    }
    m.noise = CorrelatedGaussian::from_rho(rho);
    return m;
}

// Independent route to the joint density: numeric 3x3 Jacobian of the inverse
// map plus the trivariate Gaussian of (eps_Z, eps_A, eps_Y).
double joint_log_density_oracle(const ScmFlowModel& m, const Row& r) {
    const double z = m.std_z.to_std(r.z);
    const double a = m.std_a.to_std(r.a);
    const double y = m.std_y.to_std(r.y);

    auto inv = [&](double zz, double aa, double yy) {
        Eigen::Vector3d e;
        e(0) = m.h_z.inverse(std::nullopt, zz).first;
        e(1) = m.h_a.inverse(zz, aa).first;
        e(2) = m.h_y.inverse(aa, yy).first;
        return e;
    };

    const double h = 3e-6;
    Eigen::Matrix3d jac;
    jac.col(0) = (inv(z + h, a, y) - inv(z - h, a, y)) / (2.0 * h);
    jac.col(1) = (inv(z, a + h, y) - inv(z, a - h, y)) / (2.0 * h);
    jac.col(2) = (inv(z, a, y + h) - inv(z, a, y + -h)) / (2.0 * h);

    const Eigen::Vector3d e = inv(z, a, y);
    const double rho = m.noise.rho();
    const double v = 1.0 - rho * rho;
    const double quad = e(0) * e(0) + (e(1) * e(1) - 2.0 * rho * e(1) * e(2) + e(2) * e(2)) / v;
    const double log_f_eps =
        -1.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(v) - 0.5 * quad;
    return log_f_eps + std::log(std::abs(jac.determinant()));
}

} // namespace

TEST_CASE("flow_forward: identity initialization is the identity map") {
    Rng rng(1);
    FlowArchitecture arch;
    const auto f = ConditionalFlow::create(1, arch, rng);
    const auto [v, ld] = f.forward(0.8, 0.5);
    CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(ld == doctest::Approx(0.0).epsilon(1e-12));
    const auto fz = ConditionalFlow::create(0, arch, rng);
    const auto [vz, ldz] = fz.forward(std::nullopt, -1.7);
    CHECK(vz == doctest::Approx(-1.7).epsilon(1e-12));
    CHECK(ldz == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("flow_forward: strictly increasing in the noise argument") {
    const ScmFlowModel m = random_model(7, 0.3, 0.8);
    for (double cond : {-1.0, 0.0, 2.0}) {
        double prev = m.h_y.forward(cond, -5.0).first;
        for (int i = 1; i <= 100; ++i) {
            const double eps = -5.0 + 10.0 * i / 100.0;
            const double v = m.h_y.forward(cond, eps).first;
            CHECK(v > prev);
            prev = v;
        }
    }
}

TEST_CASE("flow_forward: logdet matches the finite-difference slope of the composed map") {
    const ScmFlowModel m = random_model(11, 0.0, 0.5);
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        const double cond = rng.normal();
        const double eps = rng.uniform(-3.5, 3.5);
        const double h = 1e-6;
        const double fd =
            (m.h_a.forward(cond, eps + h).first - m.h_a.forward(cond, eps - h).first) /
            (2.0 * h);
        const double ld = m.h_a.forward(cond, eps).second;
        CHECK(ld == doctest::Approx(std::log(fd)).epsilon(1e-5));
    }
}

TEST_CASE("flow_inverse: identity flow inverts trivially; round trips hold") {
    Rng rng(3);
    FlowArchitecture arch;
    const auto f = ConditionalFlow::create(1, arch, rng);
    CHECK(f.inverse(0.3, 2.0).first == doctest::Approx(2.0).epsilon(1e-12));

    const ScmFlowModel m = random_model(13, 0.2, 0.6);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double cond = rng.normal();
        const double value = rng.uniform(-6.0, 6.0);
        const auto [eps, ldi] = m.h_y.inverse(cond, value);
        const auto [back, ldf] = m.h_y.forward(cond, eps);
        worst = std::max(worst, std::abs(back - value));
        CHECK(std::abs(ldi + ldf) < 1e-9);
    }
    CHECK(worst < 1e-7);
}

TEST_CASE("flow_inverse: conditioning value matters for a non-degenerate conditioner") {
    const ScmFlowModel m = random_model(17, 0.0, 0.8);
    const double e1 = m.h_a.inverse(0.5, 1.0).first;
    const double e2 = m.h_a.inverse(-0.5, 1.0).first;
    CHECK(std::abs(e1 - e2) > 1e-6);
}

TEST_CASE("flow: conditioning arity is enforced") {
    Rng rng(4);
    FlowArchitecture arch;
    const auto fz = ConditionalFlow::create(0, arch, rng);
    const auto fa = ConditionalFlow::create(1, arch, rng);
    CHECK_THROWS_AS(fz.forward(1.0, 0.0), ValidationError);
    CHECK_THROWS_AS(fa.forward(std::nullopt, 0.0), ValidationError);
    CHECK_THROWS_AS(fz.inverse(1.0, 0.0), ValidationError);
    CHECK_THROWS_AS(fa.inverse(std::nullopt, 0.0), ValidationError);
}

TEST_CASE("log_lik_terms: identity flows, rho 0, single row at the origin") {
    Rng rng(5);
    FlowArchitecture arch;
    ScmFlowModel m = ScmFlowModel::identity_model(arch, rng);
    Dataset d;
    d.rows.push_back({0.0, 0.0, 0.0});
    const LogLikTerms t = log_lik_terms(m, d);
    const double expect = std::log(1.0 / std::sqrt(2.0 * std::numbers::pi));
    CHECK(t.l1 == doctest::Approx(expect).epsilon(1e-9));
    CHECK(t.l2 == doctest::Approx(expect).epsilon(1e-9));
    CHECK(t.l3 == doctest::Approx(expect).epsilon(1e-9));
    CHECK(expect == doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("log_lik_terms: rho = 0 makes L3 the unconditional outcome likelihood") {
    ScmFlowModel m = random_model(19, 0.0, 0.5);
    Rng rng(6);
    Dataset d = sample_from_model(m, 50, rng);
    const LogLikTerms t = log_lik_terms(m, d);
    double l3_marginal = 0.0;
    for (const Row& r : d.rows) {
        const auto [ey, ld] =
            m.h_y.inverse(m.std_a.to_std(r.a), m.std_y.to_std(r.y));
        l3_marginal += standard_normal_log_density(ey) + ld;
    }
    CHECK(t.l3 == doctest::Approx(l3_marginal).epsilon(1e-12));
}

TEST_CASE("log_lik_terms: L1+L2+L3 equals the direct joint density (20 random models)") {
    for (int trial = 0; trial < 20; ++trial) {
        const double rho = -0.9 + 1.8 * trial / 19.0;
        const ScmFlowModel m = random_model(100 + trial, rho, 0.45);
        Rng rng(200 + trial);
        const Dataset d = sample_from_model(m, 20, rng);

        const LogLikTerms t = log_lik_terms(m, d);
        double joint = 0.0;
        for (const Row& r : d.rows) joint += joint_log_density_oracle(m, r);
        CHECK(std::abs(t.total() - joint) < 1e-8);
    }
}

TEST_CASE("log_lik_terms: non-finite row is reported with its index") {
    Rng rng(7);
    FlowArchitecture arch;
    ScmFlowModel m = ScmFlowModel::identity_model(arch, rng);
    Dataset d;
    d.rows.push_back({0.0, 0.0, 0.0});
    d.rows.push_back({0.0, std::nan(""), 0.0});
    CHECK_THROWS_WITH_AS(log_lik_terms(m, d), doctest::Contains("row 1"), NumericError);
}

TEST_CASE("sample: identity model with rho 0 has independent standard normal moments") {
    Rng rng(8);
    FlowArchitecture arch;
    ScmFlowModel m = ScmFlowModel::identity_model(arch, rng);
    Rng sampler(9);
    const Dataset d = sample_from_model(m, 50000, sampler);
    double mz = 0, ma = 0, my = 0, vz = 0, va = 0, vy = 0, cay = 0;
    const double n = static_cast<double>(d.size());
    for (const Row& r : d.rows) {
        mz += r.z;
        ma += r.a;
        my += r.y;
    }
    mz /= n;
    ma /= n;
    my /= n;
    for (const Row& r : d.rows) {
        vz += (r.z - mz) * (r.z - mz);
        va += (r.a - ma) * (r.a - ma);
        vy += (r.y - my) * (r.y - my);
        cay += (r.a - ma) * (r.y - my);
    }
    vz /= n;
    va /= n;
    vy /= n;
    cay /= n;
    CHECK(std::abs(mz) < 0.02);
    CHECK(std::abs(ma) < 0.02);
    CHECK(std::abs(my) < 0.02);
    CHECK(std::abs(vz - 1.0) < 0.03);
    CHECK(std::abs(va - 1.0) < 0.03);
    CHECK(std::abs(vy - 1.0) < 0.03);
    CHECK(std::abs(cay) < 0.02);
}

TEST_CASE("sample: fixed seed reproduces the dataset exactly") {
    const ScmFlowModel m = random_model(23, 0.4, 0.5);
    Rng r1(77), r2(77);
    const Dataset d1 = sample_from_model(m, 500, r1);
    const Dataset d2 = sample_from_model(m, 500, r2);
    REQUIRE(d1.size() == d2.size());
    for (std::size_t i = 0; i < d1.size(); ++i) {
        CHECK(d1.rows[i].z == d2.rows[i].z);
        CHECK(d1.rows[i].a == d2.rows[i].a);
        CHECK(d1.rows[i].y == d2.rows[i].y);
    }
}

TEST_CASE("model serialization round-trips exactly") {
    ScmFlowModel m = random_model(29, -0.6, 0.7);
    m.std_z = {0.37, 1.9};
    m.std_a = {-2.5, 0.21};
    m.std_y = {10.0, 3.14159};

    const std::string path = "model_roundtrip_test.json";
    save_model(m, path);
    const ScmFlowModel r = load_model(path);
    std::remove(path.c_str());

    CHECK(r.noise.rho_raw() == m.noise.rho_raw());
    CHECK(r.std_z.mean == m.std_z.mean);
    CHECK(r.std_z.sd == m.std_z.sd);
    CHECK(r.std_a.mean == m.std_a.mean);
    CHECK(r.std_y.sd == m.std_y.sd);
    CHECK(r.h_z.params() == m.h_z.params());
    CHECK(r.h_a.params() == m.h_a.params());
    CHECK(r.h_y.params() == m.h_y.params());
    // Behavioral identity on a probe point.
    CHECK(r.h_y.forward(0.3, 0.9).first == m.h_y.forward(0.3, 0.9).first);
}

TEST_CASE("exclusion restriction: outcome flow sees exactly one conditioner input") {
    const ScmFlowModel m = random_model(31, 0.1);
    CHECK(m.h_y.n_cond_inputs() == 1);
    CHECK(m.h_a.n_cond_inputs() == 1);
    CHECK(m.h_z.n_cond_inputs() == 0);
}
