#include "flowiv/flow.hpp"

#include "flowiv/errors.hpp"

#include <cmath>

namespace flowiv {

ConditionalFlow ConditionalFlow::create(int n_cond_inputs, const FlowArchitecture& arch,
                                        Rng& rng) {
    if (n_cond_inputs != 0 && n_cond_inputs != 1) {
        throw ValidationError("conditional flow supports 0 or 1 conditioning inputs");
    }
    ConditionalFlow f;
    f.n_cond_ = n_cond_inputs;
    f.arch_ = arch;
    for (int l = 0; l < arch.layers; ++l) {
        if (n_cond_inputs == 0) {
            // Direct raw spline parameters; zero means identity.
            f.params_.add_segment(layer_segment(l),
                                  static_cast<std::size_t>(arch.spline.raw_size()));
        } else {
            const MlpShape shape = arch.conditioner_shape();
            f.params_.add_segment(layer_segment(l), shape.param_count());
            const Mlp net = Mlp::init(shape, rng, /*zero_last=*/true);
            net.to_flat(f.params_.segment(layer_segment(l)));
        }
    }
    return f;
}

void ConditionalFlow::check_cond(const std::optional<double>& cond) const {
    if (n_cond_ == 0 && cond.has_value()) {
        throw ValidationError("flow takes no conditioning value but one was supplied");
    }
    if (n_cond_ == 1 && !cond.has_value()) {
        throw ValidationError("flow requires a conditioning value");
    }
}

SplineTransform ConditionalFlow::layer_spline(int layer, std::optional<double> cond) const {
    check_cond(cond);
    const auto seg = params_.segment(layer_segment(layer));
    if (n_cond_ == 0) {
        return SplineTransform::from_raw(seg, arch_.spline);
    }
    const Mlp net = Mlp::from_flat(arch_.conditioner_shape(), seg);
    const Eigen::VectorXd raw = net.forward(Eigen::VectorXd::Constant(1, *cond));
    return SplineTransform::from_raw({raw.data(), static_cast<std::size_t>(raw.size())},
                                     arch_.spline);
}

std::pair<double, double> ConditionalFlow::forward(std::optional<double> cond,
                                                   double eps) const {
    check_cond(cond);
    double v = eps;
    double logdet = 0.0;
    for (int l = 0; l < arch_.layers; ++l) {
        const auto [out, ld] = layer_spline(l, cond).forward(v);
        v = out;
        logdet += ld;
    }
    return {v, logdet};
}

std::pair<double, double> ConditionalFlow::inverse(std::optional<double> cond,
                                                   double value) const {
    check_cond(cond);
    double v = value;
    double logdet = 0.0;
    for (int l = arch_.layers - 1; l >= 0; --l) {
        const auto [out, ld] = layer_spline(l, cond).inverse(v);
        v = out;
        logdet += ld;
    }
    return {v, logdet};
}

Standardizer standardizer_from(const std::vector<double>& values) {
    if (values.empty()) throw ValidationError("standardizer: empty input");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    Standardizer s;
    s.mean = mean;
    s.sd = std::sqrt(var);
    if (!(s.sd > 1e-12)) s.sd = 1.0; // degenerate column; leave scale alone
    return s;
}

ScmFlowModel ScmFlowModel::identity_model(const FlowArchitecture& arch, Rng& rng) {
    ScmFlowModel m;
    m.h_z = ConditionalFlow::create(0, arch, rng);
    m.h_a = ConditionalFlow::create(1, arch, rng);
    m.h_y = ConditionalFlow::create(1, arch, rng);
    m.noise = CorrelatedGaussian::from_raw(0.0);
    return m;
}

LogLikTerms log_lik_terms(const ScmFlowModel& m, const Dataset& d) {
    if (d.empty()) throw ValidationError("log_lik_terms: empty dataset");
    LogLikTerms t;
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
        const double z = m.std_z.to_std(d.rows[i].z);
        const double a = m.std_a.to_std(d.rows[i].a);
        const double y = m.std_y.to_std(d.rows[i].y);

        const auto [ez, ld_z] = m.h_z.inverse(std::nullopt, z);
        const double l1 = standard_normal_log_density(ez) + ld_z;

        const auto [ea, ld_a] = m.h_a.inverse(z, a);
        const double l2 = standard_normal_log_density(ea) + ld_a;

        const auto [ey, ld_y] = m.h_y.inverse(a, y);
        const double l3 = m.noise.log_density_conditional(ey, ea) + ld_y;

        if (!std::isfinite(l1) || !std::isfinite(l2) || !std::isfinite(l3)) {
            throw NumericError("log_lik_terms: non-finite term at row " + std::to_string(i));
        }
        t.l1 += l1;
        t.l2 += l2;
        t.l3 += l3;
    }
    return t;
}

Dataset sample_from_model(const ScmFlowModel& m, std::size_t n, Rng& rng) {
    if (n == 0) throw ValidationError("sample: n must be >= 1");
    Dataset d;
    d.rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ez = rng.normal();
        const auto [ea, ey] = m.noise.sample_pair(rng);
        const double z = m.h_z.forward(std::nullopt, ez).first;
        const double a = m.h_a.forward(z, ea).first;
        const double y = m.h_y.forward(a, ey).first;
        d.rows.push_back({m.std_z.from_std(z), m.std_a.from_std(a), m.std_y.from_std(y)});
    }
    return d;
}

} // namespace flowiv
