#include "flowiv/errors.hpp"
#include "flowiv/flow.hpp"
#include "flowiv/spline_tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace flowiv {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Mat column(const Eigen::VectorXd& v) { return v; }

// --- flows on a tape ---------------------------------------------------------

struct FlowOnTape {
    bool conditioned = false;
    std::vector<std::vector<Var>> mlp_vars; // per layer, when conditioned
    std::vector<Var> raw_rows;              // per layer, when unconditional
};

FlowOnTape put_flow_on_tape(Tape& tape, const ConditionalFlow& f, bool trainable) {
    FlowOnTape ft;
    ft.conditioned = f.n_cond_inputs() == 1;
    const FlowArchitecture& arch = f.architecture();
    for (int l = 0; l < arch.layers; ++l) {
        const auto seg = f.params().segment(ConditionalFlow::layer_segment(l));
        if (ft.conditioned) {
            const MlpShape shape = arch.conditioner_shape();
            ft.mlp_vars.push_back(trainable ? mlp_leaves(tape, shape, seg)
                                            : mlp_constants(tape, shape, seg));
        } else {
            Mat row = Eigen::Map<const Eigen::RowVectorXd>(seg.data(), seg.size());
            ft.raw_rows.push_back(trainable ? tape.leaf(std::move(row))
                                            : tape.constant(std::move(row)));
        }
    }
    return ft;
}

std::pair<Var, Var> flow_inverse_on_tape(Tape& tape, const FlowOnTape& ft,
                                         const FlowArchitecture& arch,
                                         std::optional<Var> cond, Var values) {
    Var v = values;
    Var sumld{};
    bool first = true;
    for (int l = arch.layers - 1; l >= 0; --l) {
        Var raw = ft.conditioned
                      ? mlp_forward_on_tape(tape, arch.conditioner_shape(), ft.mlp_vars[l], *cond)
                      : ft.raw_rows[l];
        const SplineBlocks blocks = spline_blocks_on_tape(tape, raw, arch.spline);
        auto [x, ld] = spline_inverse_on_tape(tape, blocks, v, arch.spline);
        v = x;
        sumld = first ? ld : tape.add(sumld, ld);
        first = false;
    }
    return {v, sumld};
}

void collect_flow_grads(const Tape& tape, const ConditionalFlow& f, const FlowOnTape& ft,
                        std::span<double> grad) {
    const FlowArchitecture& arch = f.architecture();
    for (int l = 0; l < arch.layers; ++l) {
        const auto& seg = f.params().segments()[static_cast<std::size_t>(l)];
        auto dst = grad.subspan(seg.offset, seg.size);
        if (ft.conditioned) {
            mlp_accumulate_grads(tape, arch.conditioner_shape(), ft.mlp_vars[l], dst);
        } else {
            const Mat g = tape.grad(ft.raw_rows[l]);
            for (std::size_t i = 0; i < seg.size; ++i) {
                dst[i] += g(0, static_cast<Eigen::Index>(i));
            }
        }
    }
}

// log phi(eps) + logdet, rowwise
Var gauss_loglik_rows(Tape& tape, Var eps, Var sumld) {
    return tape.add(tape.add_const(tape.scale(tape.square(eps), -0.5), -0.5 * kLog2Pi),
                    sumld);
}

// log N(eps_y; rho*eps_a, 1-rho^2) + logdet, rowwise; rho_var is 1x1
Var conditional_loglik_rows(Tape& tape, Var eps_y, Var sumld, Var rho_var, Var eps_a) {
    Var rho = tape.tanh_(rho_var);
    Var var1 = tape.add_const(tape.neg(tape.square(rho)), 1.0); // 1x1
    Var diff = tape.sub(eps_y, tape.mul(rho, eps_a));
    Var quad = tape.scale(tape.div(tape.square(diff), var1), -0.5);
    Var norm = tape.scale(tape.log_(var1), -0.5); // 1x1
    return tape.add(tape.add(tape.add_const(quad, -0.5 * kLog2Pi), norm), sumld);
}

// One Adam run over `params`; eval must fill `grads` and return the loss.
std::vector<double> adam_loop(std::span<double> params, int steps, const AdamConfig& acfg,
                              const std::string& phase,
                              const std::function<double(std::vector<double>&)>& eval) {
    AdamState adam(params.size(), acfg);
    std::vector<double> grads(params.size());
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(std::max(steps, 0)));
    for (int s = 0; s < steps; ++s) {
        std::fill(grads.begin(), grads.end(), 0.0);
        const double loss = eval(grads);
        if (!std::isfinite(loss)) {
            throw NumericError("training diverged in phase " + phase + " at step " +
                               std::to_string(s) + ": non-finite loss");
        }
        try {
            adam.step(params, grads);
        } catch (const NumericError& e) {
            throw NumericError("training diverged in phase " + phase + " at step " +
                               std::to_string(s) + ": " + e.what());
        }
        trace.push_back(loss);
    }
    return trace;
}

std::vector<double> train_marginal_phase(ConditionalFlow& flow,
                                         const std::optional<Mat>& cond_col,
                                         const Mat& values, int steps,
                                         const AdamConfig& acfg, const std::string& phase) {
    auto eval = [&](std::vector<double>& grads) {
        Tape tape;
        FlowOnTape ft = put_flow_on_tape(tape, flow, /*trainable=*/true);
        std::optional<Var> cond;
        if (cond_col) cond = tape.constant(*cond_col);
        Var vals = tape.constant(values);
        auto [eps, sumld] =
            flow_inverse_on_tape(tape, ft, flow.architecture(), cond, vals);
        Var loss = tape.neg(tape.mean(gauss_loglik_rows(tape, eps, sumld)));
        const double lv = tape.value(loss)(0, 0);
        if (!std::isfinite(lv)) return lv;
        tape.backward(loss);
        collect_flow_grads(tape, flow, ft, grads);
        return lv;
    };
    return adam_loop(flow.params().values(), steps, acfg, phase, eval);
}

// Outcome phase: maximizes L3 over theta_Y (and rho_raw when train_rho).
std::vector<double> train_outcome_phase(ConditionalFlow& h_y, double& rho_raw,
                                        const Mat& cond_col, const Mat& values,
                                        const Mat& eps_a, int steps, const AdamConfig& acfg,
                                        bool train_rho, const std::string& phase) {
    const std::size_t ny = h_y.params().size();
    std::vector<double> joint(ny + (train_rho ? 1 : 0));
    std::copy(h_y.params().values().begin(), h_y.params().values().end(), joint.begin());
    if (train_rho) joint[ny] = rho_raw;

    auto eval = [&](std::vector<double>& grads) {
        std::copy(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(ny),
                  h_y.params().values().begin());
        if (train_rho) rho_raw = joint[ny];

        Tape tape;
        FlowOnTape ft = put_flow_on_tape(tape, h_y, /*trainable=*/true);
        Var cond = tape.constant(cond_col);
        Var vals = tape.constant(values);
        auto [eps_y, sumld] =
            flow_inverse_on_tape(tape, ft, h_y.architecture(), cond, vals);
        Var rho_var = train_rho ? tape.leaf(Mat::Constant(1, 1, rho_raw))
                                : tape.constant(Mat::Constant(1, 1, rho_raw));
        Var eps_a_var = tape.constant(eps_a);
        Var rows = conditional_loglik_rows(tape, eps_y, sumld, rho_var, eps_a_var);
        Var loss = tape.neg(tape.mean(rows));
        const double lv = tape.value(loss)(0, 0);
        if (!std::isfinite(lv)) return lv;
        tape.backward(loss);
        collect_flow_grads(tape, h_y, ft, std::span<double>(grads.data(), ny));
        if (train_rho) grads[ny] = tape.grad(rho_var)(0, 0);
        return lv;
    };
    auto trace = adam_loop(joint, steps, acfg, phase, eval);

    std::copy(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(ny),
              h_y.params().values().begin());
    if (train_rho) rho_raw = joint[ny];
    return trace;
}

std::vector<double> train_joint_phase(ScmFlowModel& m, double& rho_raw, const Mat& zc,
                                      const Mat& ac, const Mat& yc, int steps,
                                      const AdamConfig& acfg) {
    const std::size_t nz = m.h_z.params().size();
    const std::size_t na = m.h_a.params().size();
    const std::size_t ny = m.h_y.params().size();
    std::vector<double> joint(nz + na + ny + 1);
    auto pack = [&] {
        auto it = joint.begin();
        it = std::copy(m.h_z.params().values().begin(), m.h_z.params().values().end(), it);
        it = std::copy(m.h_a.params().values().begin(), m.h_a.params().values().end(), it);
        it = std::copy(m.h_y.params().values().begin(), m.h_y.params().values().end(), it);
        *it = rho_raw;
    };
    auto unpack = [&] {
        auto it = joint.begin();
        std::copy(it, it + static_cast<std::ptrdiff_t>(nz), m.h_z.params().values().begin());
        it += static_cast<std::ptrdiff_t>(nz);
        std::copy(it, it + static_cast<std::ptrdiff_t>(na), m.h_a.params().values().begin());
        it += static_cast<std::ptrdiff_t>(na);
        std::copy(it, it + static_cast<std::ptrdiff_t>(ny), m.h_y.params().values().begin());
        it += static_cast<std::ptrdiff_t>(ny);
        rho_raw = *it;
    };
    pack();

    auto eval = [&](std::vector<double>& grads) {
        unpack();
        Tape tape;
        FlowOnTape fz = put_flow_on_tape(tape, m.h_z, true);
        FlowOnTape fa = put_flow_on_tape(tape, m.h_a, true);
        FlowOnTape fy = put_flow_on_tape(tape, m.h_y, true);
        Var zv = tape.constant(zc);
        Var av = tape.constant(ac);
        Var yv = tape.constant(yc);

        auto [ez, ldz] = flow_inverse_on_tape(tape, fz, m.h_z.architecture(), std::nullopt, zv);
        auto [ea, lda] = flow_inverse_on_tape(tape, fa, m.h_a.architecture(), zv, av);
        auto [ey, ldy] = flow_inverse_on_tape(tape, fy, m.h_y.architecture(), av, yv);
        Var rho_var = tape.leaf(Mat::Constant(1, 1, rho_raw));

        Var rows = tape.add(tape.add(gauss_loglik_rows(tape, ez, ldz),
                                     gauss_loglik_rows(tape, ea, lda)),
                            conditional_loglik_rows(tape, ey, ldy, rho_var, ea));
        Var loss = tape.neg(tape.mean(rows));
        const double lv = tape.value(loss)(0, 0);
        if (!std::isfinite(lv)) return lv;
        tape.backward(loss);
        collect_flow_grads(tape, m.h_z, fz, std::span<double>(grads.data(), nz));
        collect_flow_grads(tape, m.h_a, fa, std::span<double>(grads.data() + nz, na));
        collect_flow_grads(tape, m.h_y, fy, std::span<double>(grads.data() + nz + na, ny));
        grads[nz + na + ny] = tape.grad(rho_var)(0, 0);
        return lv;
    };
    auto trace = adam_loop(joint, steps, acfg, "joint", eval);
    unpack();
    return trace;
}

struct StdColumns {
    Eigen::VectorXd z, a, y;
};

StdColumns standardize(const Dataset& d, const ScmFlowModel& m) {
    const auto n = static_cast<Eigen::Index>(d.size());
    StdColumns c;
    c.z.resize(n);
    c.a.resize(n);
    c.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Row& r = d.rows[static_cast<std::size_t>(i)];
        c.z(i) = m.std_z.to_std(r.z);
        c.a(i) = m.std_a.to_std(r.a);
        c.y(i) = m.std_y.to_std(r.y);
    }
    return c;
}

void validate_training_data(const Dataset& d, std::size_t min_rows) {
    if (d.size() < min_rows) {
        throw ValidationError("fit: dataset has " + std::to_string(d.size()) +
                              " rows, need at least " + std::to_string(min_rows));
    }
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
        const Row& r = d.rows[i];
        if (!std::isfinite(r.z) || !std::isfinite(r.a) || !std::isfinite(r.y)) {
            throw ValidationError("fit: non-finite value at row " + std::to_string(i));
        }
    }
}

void fit_standardizers(ScmFlowModel& m, const Dataset& d) {
    std::vector<double> z, a, y;
    z.reserve(d.size());
    a.reserve(d.size());
    y.reserve(d.size());
    for (const Row& r : d.rows) {
        z.push_back(r.z);
        a.push_back(r.a);
        y.push_back(r.y);
    }
    m.std_z = standardizer_from(z);
    m.std_a = standardizer_from(a);
    m.std_y = standardizer_from(y);
}

Eigen::VectorXd abduct_treatment_noise(const ScmFlowModel& m, const StdColumns& c) {
    Eigen::VectorXd eps_a(c.z.size());
    for (Eigen::Index i = 0; i < c.z.size(); ++i) {
        eps_a(i) = m.h_a.inverse(c.z(i), c.a(i)).first;
    }
    return eps_a;
}

} // namespace

FitResult fit_scm_flow(const Dataset& d, const TrainConfig& cfg) {
    validate_training_data(d, cfg.min_rows);

    Rng rng(cfg.seed);
    FitResult res;
    res.model = ScmFlowModel::identity_model(cfg.arch, rng);
    ScmFlowModel& m = res.model;
    fit_standardizers(m, d);
    const StdColumns c = standardize(d, m);

    res.trace_z = train_marginal_phase(m.h_z, std::nullopt, column(c.z), cfg.steps_z,
                                       cfg.adam, "Z");
    res.trace_a = train_marginal_phase(m.h_a, column(c.z), column(c.a), cfg.steps_a,
                                       cfg.adam, "A");

    const Eigen::VectorXd eps_a = abduct_treatment_noise(m, c);
    double rho_raw = 0.0;
    res.trace_y = train_outcome_phase(m.h_y, rho_raw, column(c.a), column(c.y),
                                      column(eps_a), cfg.steps_y, cfg.adam,
                                      /*train_rho=*/true, "Y");
    m.noise = CorrelatedGaussian::from_raw(rho_raw);

    if (cfg.joint_steps > 0) {
        res.trace_joint = train_joint_phase(m, rho_raw, column(c.z), column(c.a),
                                            column(c.y), cfg.joint_steps, cfg.adam);
        m.noise = CorrelatedGaussian::from_raw(rho_raw);
    }
    return res;
}

std::vector<ProfilePoint> profile_rho(const Dataset& d, const std::vector<double>& grid,
                                      const ProfileConfig& cfg) {
    if (grid.empty()) throw ValidationError("profile_rho: empty grid");
    for (double r : grid) {
        if (!(std::abs(r) < 1.0)) {
            throw ValidationError("profile_rho: grid values must lie in (-1, 1)");
        }
    }
    validate_training_data(d, cfg.train.min_rows);

    Rng rng(cfg.train.seed);
    ScmFlowModel m = ScmFlowModel::identity_model(cfg.train.arch, rng);
    fit_standardizers(m, d);
    const StdColumns c = standardize(d, m);

    // L3 does not involve theta_Z, so only the treatment flow needs fitting.
    train_marginal_phase(m.h_a, column(c.z), column(c.a), cfg.train.steps_a,
                         cfg.train.adam, "A");
    const Eigen::VectorXd eps_a = abduct_treatment_noise(m, c);

    const ParamVector identity_theta_y = m.h_y.params();
    std::vector<ProfilePoint> out;
    out.reserve(grid.size());
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        double rho_raw = std::atanh(grid[gi]);
        const bool warm = cfg.warm_start && gi > 0;
        if (!warm) m.h_y.params() = identity_theta_y;
        const int steps = warm ? cfg.refit_steps : cfg.train.steps_y;
        train_outcome_phase(m.h_y, rho_raw, column(c.a), column(c.y), column(eps_a),
                            steps, cfg.train.adam, /*train_rho=*/false,
                            "Y(rho=" + std::to_string(grid[gi]) + ")");

        const CorrelatedGaussian noise = CorrelatedGaussian::from_raw(rho_raw);
        double l3 = 0.0;
        for (Eigen::Index i = 0; i < c.a.size(); ++i) {
            const auto [ey, ld] = m.h_y.inverse(c.a(i), c.y(i));
            l3 += noise.log_density_conditional(ey, eps_a(i)) + ld;
        }
        if (!std::isfinite(l3)) {
            throw NumericError("profile_rho: non-finite profile value at rho = " +
                               std::to_string(grid[gi]));
        }
        out.push_back({grid[gi], l3});
    }
    return out;
}

} // namespace flowiv
