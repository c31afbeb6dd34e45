#pragma once

#include "flowiv/counterfactual.hpp"
#include "flowiv/dataset.hpp"
#include "flowiv/flow.hpp"
#include "flowiv/mlp.hpp"
#include "flowiv/synthetic.hpp"

#include <functional>
#include <vector>

namespace flowiv {

// Classical linear IV slope Cov(Y,Z)/Cov(A,Z) plus an intercept for
// non-centered data (the intercept vanishes on centered samples).
struct WaldModel {
    double beta = 0.0;
    double intercept = 0.0;
};

// Throws ValidationError when |Cov(A,Z)| < 1e-12 (weak instrument).
WaldModel fit_wald(const Dataset& d);

// Abduction under linearity: eps = y - beta*a - c; prediction beta*a' + c + eps.
double counterfactual_wald(const WaldModel& m, const CounterfactualQuery& q);

// First-stage treatment model p(A | Z): either the true structural equation
// of a synthetic DGP or a fitted conditional flow.
class TreatmentSampler {
public:
    using Fn = std::function<double(double z, Rng& rng)>;

    static TreatmentSampler from_dgp(DgpId id);
    static TreatmentSampler from_model(const ScmFlowModel& m);

    double sample(double z, Rng& rng) const { return fn_(z, rng); }

private:
    explicit TreatmentSampler(Fn fn) : fn_(std::move(fn)) {}
    Fn fn_;
};

struct DeepIvConfig {
    MlpShape net{1, 1, 20, 3};
    int steps = 3000;
    AdamConfig adam; // lr 0.001
    // First-stage draws per data point in the integrated loss.
    int m_samples = 32;
    // Rows per gradient step; 0 means full batch.
    int batch = 1024;
    std::uint64_t seed = 0;
};

// Two-stage estimator with additive outcome noise: g_hat approximates
// a -> E[Y | do(A=a)] by minimizing sum_i (y_i - mean_j g(a_ij))^2 with
// a_ij drawn from the first stage at z_i.
struct DeepIvModel {
    MlpShape shape;
    Mlp g_hat;                // operates on standardized coordinates
    Standardizer std_a, std_y;

    double g(double a) const { return std_y.from_std(g_hat.forward1(std_a.to_std(a))); }
};

struct DeepIvFit {
    DeepIvModel model;
    std::vector<double> trace; // per-step loss
};

DeepIvFit fit_deep_iv(const Dataset& d, const TreatmentSampler& first_stage,
                      const DeepIvConfig& cfg);

// eps = y - g(a); prediction g(a') + eps.
double counterfactual_deep_iv(const DeepIvModel& m, const CounterfactualQuery& q);

} // namespace flowiv
