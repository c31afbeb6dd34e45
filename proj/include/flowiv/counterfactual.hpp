#pragma once

#include "flowiv/flow.hpp"
#include "flowiv/rng.hpp"

#include <functional>
#include <string>

namespace flowiv {

// One counterfactual question: observed (z, a, y), hypothetical treatment
// a_prime. The instrument is carried for logging only; abduction under the
// fitted SCM depends on (a, y) alone.
struct CounterfactualQuery {
    double z = 0.0;
    double a = 0.0;
    double y = 0.0;
    double a_prime = 0.0;
};

// Abduction: the outcome noise consistent with observing (a, y).
double abduce(const ScmFlowModel& m, double a, double y);

// Abduction / action / prediction in one call:
// y_cf = h_Y(a_prime, abduce(a, y)).
double predict_counterfactual(const ScmFlowModel& m, const CounterfactualQuery& q);

struct MonteCarloMean {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

// E[Y | do(A=a)] by averaging h_Y(a, eps) over fresh eps ~ N(0,1).
MonteCarloMean interventional_mean(const ScmFlowModel& m, double a, std::size_t n_mc,
                                   Rng& rng);

// Batch interface shared by all estimators: reads a query CSV with header
// z,a,y,a_prime and writes the same rows with eY,y_cf columns appended.
// The predictor returns (abduced noise, counterfactual outcome).
using BatchPredictor = std::function<std::pair<double, double>(const CounterfactualQuery&)>;

std::vector<CounterfactualQuery> load_queries_csv(const std::string& path);
void run_counterfactual_batch(const BatchPredictor& predict, const std::string& in_path,
                              const std::string& out_path);

BatchPredictor batch_predictor(const ScmFlowModel& m);

} // namespace flowiv
