#pragma once

#include "flowiv/adam.hpp"
#include "flowiv/dataset.hpp"
#include "flowiv/mlp.hpp"
#include "flowiv/noise.hpp"
#include "flowiv/param_vector.hpp"
#include "flowiv/rng.hpp"
#include "flowiv/rq_spline.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace flowiv {

struct FlowArchitecture {
    int layers = 3;
    SplineParams spline;
    int cond_width = 20;
    int cond_hidden = 3;

    MlpShape conditioner_shape() const {
        return MlpShape{1, spline.raw_size(), cond_width, cond_hidden};
    }
};

// Stack of rational-quadratic spline layers, strictly increasing in the noise
// argument for every conditioning value. With one conditioning input each
// layer's spline parameters come from that layer's own MLP; without, they are
// direct trainable vectors. Fresh flows start at the identity map.
class ConditionalFlow {
public:
    ConditionalFlow() = default;

    static ConditionalFlow create(int n_cond_inputs, const FlowArchitecture& arch, Rng& rng);

    int n_cond_inputs() const { return n_cond_; }
    const FlowArchitecture& architecture() const { return arch_; }

    // (value, sum of log layer slopes); strictly increasing in eps.
    std::pair<double, double> forward(std::optional<double> cond, double eps) const;
    // (eps, negated forward logdet at eps); forward(cond, eps) == value to ~1e-9.
    std::pair<double, double> inverse(std::optional<double> cond, double value) const;

    SplineTransform layer_spline(int layer, std::optional<double> cond) const;

    ParamVector& params() { return params_; }
    const ParamVector& params() const { return params_; }

    static std::string layer_segment(int layer) { return "l" + std::to_string(layer); }

private:
    void check_cond(const std::optional<double>& cond) const;

    int n_cond_ = 0;
    FlowArchitecture arch_;
    ParamVector params_;
};

struct Standardizer {
    double mean = 0.0;
    double sd = 1.0;

    double to_std(double v) const { return (v - mean) / sd; }
    double from_std(double v) const { return mean + sd * v; }
};

Standardizer standardizer_from(const std::vector<double>& values);

// Fitted SCM: Z = h_Z(eps_Z), A = h_A(Z, eps_A), Y = h_Y(A, eps_Y) with
// (eps_A, eps_Y) ~ N2(rho). Flows operate on standardized coordinates; the
// standardizers are part of the model. h_Y takes only the treatment as
// conditioner; the instrument cannot reach the outcome equation.
struct ScmFlowModel {
    ConditionalFlow h_z; // unconditional
    ConditionalFlow h_a; // conditioned on standardized z
    ConditionalFlow h_y; // conditioned on standardized a
    CorrelatedGaussian noise;
    Standardizer std_z, std_a, std_y;

    static ScmFlowModel identity_model(const FlowArchitecture& arch, Rng& rng);
};

struct LogLikTerms {
    double l1 = 0.0; // sum of log f_Z(z_i)
    double l2 = 0.0; // sum of log f_{A|Z}(a_i)
    double l3 = 0.0; // sum of log f_{Y|Z,A}(y_i)
    double total() const { return l1 + l2 + l3; }
};

// Decomposed log-likelihood of the standardized data under the model.
// l1+l2+l3 equals the joint change-of-variables log-likelihood.
LogLikTerms log_lik_terms(const ScmFlowModel& m, const Dataset& d);

struct TrainConfig {
    FlowArchitecture arch;
    int steps_z = 3000;
    int steps_a = 3000;
    int steps_y = 3000;
    // Optional joint refinement of all parameters after the staged phases.
    int joint_steps = 0;
    AdamConfig adam; // lr 0.001
    std::uint64_t seed = 0;
    std::size_t min_rows = 100;
};

struct FitResult {
    ScmFlowModel model;
    // Per-step mean negative log-likelihood of each phase.
    std::vector<double> trace_z, trace_a, trace_y, trace_joint;
};

// Staged maximum likelihood: L1 over theta_Z, then L2 over theta_A, then L3
// jointly over (theta_Y, rho_raw). Deterministic for fixed (data, config).
FitResult fit_scm_flow(const Dataset& d, const TrainConfig& cfg);

// Ancestral sampling with correlated (eps_A, eps_Y).
Dataset sample_from_model(const ScmFlowModel& m, std::size_t n, Rng& rng);

struct ProfileConfig {
    TrainConfig train;
    // Steps for grid points after the first when warm-starting.
    int refit_steps = 400;
    bool warm_start = true;
};

struct ProfilePoint {
    double rho = 0.0;
    double max_l3 = 0.0;
};

// Profile likelihood over rho: h_A is fitted once, then theta_Y is refit for
// each fixed rho in the grid; reports the maximized L3 per grid value.
std::vector<ProfilePoint> profile_rho(const Dataset& d, const std::vector<double>& grid,
                                      const ProfileConfig& cfg);

void save_model(const ScmFlowModel& m, const std::string& path);
ScmFlowModel load_model(const std::string& path);

} // namespace flowiv
