#include "flowiv/baselines.hpp"

#include "flowiv/errors.hpp"
#include "flowiv/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flowiv {

WaldModel fit_wald(const Dataset& d) {
    if (d.size() < 2) throw ValidationError("fit_wald: need at least 2 rows");
    const double n = static_cast<double>(d.size());
    double mz = 0.0, ma = 0.0, my = 0.0;
    for (const Row& r : d.rows) {
        mz += r.z;
        ma += r.a;
        my += r.y;
    }
    mz /= n;
    ma /= n;
    my /= n;
    double cov_yz = 0.0, cov_az = 0.0;
    for (const Row& r : d.rows) {
        cov_yz += (r.y - my) * (r.z - mz);
        cov_az += (r.a - ma) * (r.z - mz);
    }
    cov_yz /= n;
    cov_az /= n;
    if (std::abs(cov_az) < 1e-12) {
        throw ValidationError("fit_wald: weak instrument, |Cov(A,Z)| = " +
                              std::to_string(std::abs(cov_az)));
    }
    WaldModel m;
    m.beta = cov_yz / cov_az;
    m.intercept = my - m.beta * ma;
    return m;
}

double counterfactual_wald(const WaldModel& m, const CounterfactualQuery& q) {
    const double eps = q.y - m.beta * q.a - m.intercept;
    return m.beta * q.a_prime + m.intercept + eps;
}

TreatmentSampler TreatmentSampler::from_dgp(DgpId id) {
    return TreatmentSampler([id](double z, Rng& rng) {
        return dgp_treatment(id, z, rng.normal());
    });
}

TreatmentSampler TreatmentSampler::from_model(const ScmFlowModel& m) {
    return TreatmentSampler([&m](double z, Rng& rng) {
        const double a_std = m.h_a.forward(m.std_z.to_std(z), rng.normal()).first;
        return m.std_a.from_std(a_std);
    });
}

DeepIvFit fit_deep_iv(const Dataset& d, const TreatmentSampler& first_stage,
                      const DeepIvConfig& cfg) {
    if (d.empty()) throw ValidationError("fit_deep_iv: empty dataset");
    if (cfg.m_samples < 1) throw ValidationError("fit_deep_iv: m_samples must be >= 1");
    const std::size_t n = d.size();
    const int m_draws = cfg.m_samples;

    std::vector<double> a_col, y_col;
    a_col.reserve(n);
    y_col.reserve(n);
    for (const Row& r : d.rows) {
        a_col.push_back(r.a);
        y_col.push_back(r.y);
    }

    DeepIvFit fit;
    fit.model.shape = cfg.net;
    fit.model.std_a = standardizer_from(a_col);
    fit.model.std_y = standardizer_from(y_col);
    const Standardizer& sa = fit.model.std_a;
    const Standardizer& sy = fit.model.std_y;

    Rng rng(cfg.seed);

    // First-stage draws are taken once per data point and reused across
    // steps, making the objective deterministic given the seed.
    Mat draws(static_cast<Eigen::Index>(n), m_draws);
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < m_draws; ++j) {
            draws(static_cast<Eigen::Index>(i), j) =
                sa.to_std(first_stage.sample(d.rows[i].z, rng));
        }
    }
    Eigen::VectorXd targets(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        targets(static_cast<Eigen::Index>(i)) = sy.to_std(y_col[i]);
    }

    ParamVector params;
    params.add_segment("g", cfg.net.param_count());
    {
        Mlp net = Mlp::init(cfg.net, rng, /*zero_last=*/true);
        net.to_flat(params.segment("g"));
    }

    const int batch = (cfg.batch <= 0 || cfg.batch >= static_cast<int>(n))
                          ? static_cast<int>(n)
                          : cfg.batch;
    AdamState adam(params.size(), cfg.adam);
    std::vector<double> grads(params.size());
    fit.trace.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> rows(static_cast<std::size_t>(batch));
        if (batch == static_cast<int>(n)) {
            std::iota(rows.begin(), rows.end(), 0);
        } else {
            for (int& r : rows) {
                r = static_cast<int>(rng.next_u64() % n);
            }
        }

        Mat x(static_cast<Eigen::Index>(batch) * m_draws, 1);
        Mat yb(batch, 1);
        for (int i = 0; i < batch; ++i) {
            yb(i, 0) = targets(rows[static_cast<std::size_t>(i)]);
            for (int j = 0; j < m_draws; ++j) {
                x(static_cast<Eigen::Index>(i) * m_draws + j, 0) =
                    draws(rows[static_cast<std::size_t>(i)], j);
            }
        }

        Tape tape;
        auto leaves = mlp_leaves(tape, cfg.net, params.segment("g"));
        Var out = mlp_forward_on_tape(tape, cfg.net, leaves, tape.constant(std::move(x)));
        Var pred = tape.group_mean(out, m_draws);
        Var resid = tape.sub(tape.constant(std::move(yb)), pred);
        Var loss = tape.mean(tape.square(resid));
        const double lv = tape.value(loss)(0, 0);
        if (!std::isfinite(lv)) {
            throw NumericError("fit_deep_iv diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
        std::fill(grads.begin(), grads.end(), 0.0);
        mlp_accumulate_grads(tape, cfg.net, leaves, grads);
        adam.step(params.values(), grads);
        fit.trace.push_back(lv);
    }

    fit.model.g_hat = Mlp::from_flat(cfg.net, params.segment("g"));
    return fit;
}

double counterfactual_deep_iv(const DeepIvModel& m, const CounterfactualQuery& q) {
    const double eps = q.y - m.g(q.a);
    return m.g(q.a_prime) + eps;
}

} // namespace flowiv
