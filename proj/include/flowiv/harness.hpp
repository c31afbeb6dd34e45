#pragma once

#include "flowiv/baselines.hpp"
#include "flowiv/counterfactual.hpp"
#include "flowiv/flow.hpp"
#include "flowiv/synthetic.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace flowiv {

enum class Method { UsualIv, DeepIv, FlowIv };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct ExperimentConfig {
    std::string experiment = "comparison"; // comparison | convergence | rho_sweep
    DgpId dgp = DgpId::Dgp1;
    std::vector<Method> methods = {Method::UsualIv, Method::DeepIv, Method::FlowIv};
    std::size_t n_train = 10000;
    std::size_t n_eval = 20000;
    int repetitions = 5;
    std::uint64_t seed = 1;
    // Fixed correlation for the DGP; nullopt draws rho ~ U(-1,1) per
    // repetition (for DGPs that have a correlation parameter).
    std::optional<double> rho;
    std::vector<std::size_t> n_grid = {500, 2000, 8000, 32000}; // convergence
    std::vector<double> rho_grid = {0.0, 0.4, 0.8};             // rho_sweep
    TrainConfig train;
    DeepIvConfig deep_iv;
    // Use the true structural first stage for Deep IV on synthetic data;
    // otherwise the repetition's fitted flow provides it.
    bool deep_iv_true_first_stage = true;
    int threads = 2;
    // Results CSV; existing rows are treated as completed work (resume).
    std::string output_path;
};

struct RepetitionRecord {
    std::string experiment;
    Method method = Method::UsualIv;
    DgpId dgp = DgpId::Dgp1;
    std::string rho_spec; // "uniform" or the fixed value
    std::size_t n_train = 0;
    int repetition = 0;
    double mse = 0.0; // NaN marks a recorded failure
    double seconds = 0.0;
};

struct MetricResult {
    Method method = Method::UsualIv;
    DgpId dgp = DgpId::Dgp1;
    std::string rho_spec;
    std::size_t n_train = 0;
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> per_rep;
};

MetricResult aggregate(const std::vector<RepetitionRecord>& rows, Method method,
                       DgpId dgp, const std::string& rho_spec, std::size_t n_train);

// Monte Carlo counterfactual MSE of a predictor against the oracle.
// a_prime[i] pairs with eval_set.samples[i].
double counterfactual_mse(const std::function<double(const CounterfactualQuery&)>& predict,
                          const OracleData& eval_set, const std::vector<double>& a_prime);

// a' ~ F_A via a uniformly random permutation of the observed treatments.
std::vector<double> draw_counterfactual_treatments(const OracleData& eval_set, Rng& rng);

struct ExperimentOutcome {
    std::vector<MetricResult> results;
    std::vector<RepetitionRecord> rows;
    int computed = 0;
    int skipped = 0;
    int failed = 0;
};

// Runs cfg.experiment. Repetitions execute in parallel on cfg.threads with
// derived seeds; completed (experiment, method, dgp, rho, n, rep) rows found
// in cfg.output_path are not recomputed.
ExperimentOutcome run_experiment(const ExperimentConfig& cfg);

// Convenience wrappers fixing cfg.experiment.
ExperimentOutcome run_comparison(ExperimentConfig cfg);
ExperimentOutcome run_convergence(ExperimentConfig cfg);
ExperimentOutcome run_rho_sweep(ExperimentConfig cfg);

ExperimentConfig load_experiment_config(const std::string& path);

std::vector<RepetitionRecord> load_results_csv(const std::string& path);

} // namespace flowiv
