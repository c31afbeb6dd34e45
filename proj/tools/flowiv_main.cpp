#include "flowiv/counterfactual.hpp"
#include "flowiv/errors.hpp"
#include "flowiv/flow.hpp"
#include "flowiv/harness.hpp"
#include "flowiv/synthetic.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace flowiv;

std::vector<double> parse_grid(const std::string& spec) {
    std::vector<double> grid;
    if (spec.find(':') != std::string::npos) {
        double lo = 0, hi = 0, step = 0;
        if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3 || step <= 0) {
            throw ValidationError("grid must be 'lo:hi:step' or comma-separated values");
        }
        for (double v = lo; v <= hi + 1e-12; v += step) grid.push_back(v);
        return grid;
    }
    std::string cur;
    for (char c : spec + ",") {
        if (c == ',') {
            if (!cur.empty()) grid.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (grid.empty()) throw ValidationError("empty grid");
    return grid;
}

int cmd_generate(const std::string& dgp, std::size_t n, const std::string& rho_spec,
                 std::uint64_t seed, const std::string& output,
                 const std::string& oracle_output) {
    DgpSpec spec;
    spec.id = dgp_from_name(dgp);
    if (rho_spec != "uniform") spec.rho = std::stod(rho_spec);
    spec.seed = seed;
    const OracleData data = generate(spec, n);
    save_dataset_csv(data.observed(), output);
    std::printf("wrote %zu rows to %s (dgp=%s", n, output.c_str(), dgp.c_str());
    if (dgp_has_rho(spec.id)) std::printf(", rho=%.6g", data.rho_used);
    std::printf(")\n");
    if (!oracle_output.empty()) {
        save_oracle_csv(data, oracle_output);
        std::printf("wrote oracle file %s\n", oracle_output.c_str());
    }
    return 0;
}

int cmd_train(const std::string& input, const std::string& output, TrainConfig cfg) {
    const Dataset d = load_dataset_csv(input);
    std::printf("loaded %zu rows from %s\n", d.size(), input.c_str());
    const FitResult fit = fit_scm_flow(d, cfg);
    save_model(fit.model, output);
    const LogLikTerms ll = log_lik_terms(fit.model, d);
    std::printf("fitted model: rho_hat=%.6f  L1=%.2f  L2=%.2f  L3=%.2f\n",
                fit.model.noise.rho(), ll.l1, ll.l2, ll.l3);
    std::printf("wrote %s\n", output.c_str());
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& oracle_path,
             std::uint64_t seed) {
    const ScmFlowModel m = load_model(model_path);
    const OracleData eval = load_oracle_csv(oracle_path);
    // The DGP identity is needed to score against the true outcome function.
    Rng rng(seed);
    const auto a_prime = draw_counterfactual_treatments(eval, rng);
    const double mse = counterfactual_mse(
        [&](const CounterfactualQuery& q) { return predict_counterfactual(m, q); }, eval,
        a_prime);
    std::printf("counterfactual MSE: %.6f  (n=%zu)\n", mse, eval.samples.size());
    return 0;
}

int cmd_counterfactual(const std::string& model_path, const std::string& queries,
                       const std::string& output) {
    const ScmFlowModel m = load_model(model_path);
    run_counterfactual_batch(batch_predictor(m), queries, output);
    std::printf("wrote %s\n", output.c_str());
    return 0;
}

int cmd_profile_rho(const std::string& input, const std::string& grid_spec,
                    const std::string& output, ProfileConfig cfg) {
    const Dataset d = load_dataset_csv(input);
    const std::vector<double> grid = parse_grid(grid_spec);
    const auto profile = profile_rho(d, grid, cfg);
    std::ofstream out(output);
    if (!out) throw ValidationError("cannot write '" + output + "'");
    out << "rho,max_l3\n";
    double best_rho = profile.front().rho;
    double best = profile.front().max_l3;
    char buf[64];
    for (const auto& p : profile) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.rho, p.max_l3);
        out << buf;
        if (p.max_l3 > best) {
            best = p.max_l3;
            best_rho = p.rho;
        }
    }
    std::printf("profile argmax: rho=%.3f (max L3 %.3f); wrote %s\n", best_rho, best,
                output.c_str());
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& output_override) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!output_override.empty()) cfg.output_path = output_override;
    const ExperimentOutcome outcome = run_experiment(cfg);
    std::printf("%-10s %-12s %8s %8s  %-10s %6s\n", "method", "dgp", "rho", "n", "mse",
                "reps");
    for (const auto& r : outcome.results) {
        std::printf("%-10s %-12s %8s %8zu  %.4f +- %.4f %4zu\n",
                    method_name(r.method).c_str(), dgp_name(r.dgp).c_str(),
                    r.rho_spec.c_str(), r.n_train, r.mean, r.stddev, r.per_rep.size());
    }
    std::printf("computed=%d skipped=%d failed=%d\n", outcome.computed, outcome.skipped,
                outcome.failed);
    return outcome.failed > 0 ? 2 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow IV: counterfactual inference with instrumental variables"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Sample a synthetic DGP to CSV");
    std::string gen_dgp = "DGP1", gen_rho = "uniform", gen_out = "data.csv", gen_oracle;
    std::size_t gen_n = 10000;
    std::uint64_t gen_seed = 1;
    gen->add_option("--dgp", gen_dgp, "DGP1|DGP2|DGP3|LINEAR_GAUSS");
    gen->add_option("--n", gen_n, "number of rows");
    gen->add_option("--rho", gen_rho, "fixed correlation or 'uniform'");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--output", gen_out)->required();
    gen->add_option("--oracle-output", gen_oracle, "also write latents for evaluation");

    // train
    auto* train = app.add_subcommand("train", "Fit the flow model on a z,a,y CSV");
    std::string train_in, train_out = "model.json";
    TrainConfig tc;
    train->add_option("--input", train_in)->required();
    train->add_option("--output", train_out);
    train->add_option("--seed", tc.seed);
    train->add_option("--steps-z", tc.steps_z);
    train->add_option("--steps-a", tc.steps_a);
    train->add_option("--steps-y", tc.steps_y);
    train->add_option("--joint-steps", tc.joint_steps);
    train->add_option("--lr", tc.adam.lr);
    train->add_option("--bins", tc.arch.spline.bins);
    train->add_option("--bound", tc.arch.spline.bound);
    train->add_option("--layers", tc.arch.layers);

    // eval
    auto* eval = app.add_subcommand("eval", "Counterfactual MSE of a model on an oracle CSV");
    std::string eval_model, eval_oracle;
    std::uint64_t eval_seed = 1;
    eval->add_option("--model", eval_model)->required();
    eval->add_option("--oracle", eval_oracle)->required();
    eval->add_option("--seed", eval_seed, "seed for the a' permutation");

    // counterfactual
    auto* cf = app.add_subcommand("counterfactual", "Batch counterfactual predictions");
    std::string cf_model, cf_queries, cf_out = "predictions.csv";
    cf->add_option("--model", cf_model)->required();
    cf->add_option("--queries", cf_queries, "CSV with header z,a,y,a_prime")->required();
    cf->add_option("--output", cf_out);

    // profile-rho
    auto* prof = app.add_subcommand("profile-rho", "Profile likelihood over rho");
    std::string prof_in, prof_grid = "-0.8:0.8:0.1", prof_out = "profile.csv";
    ProfileConfig pc;
    prof->add_option("--input", prof_in)->required();
    prof->add_option("--grid", prof_grid, "'lo:hi:step' or comma-separated");
    prof->add_option("--output", prof_out);
    prof->add_option("--seed", pc.train.seed);
    prof->add_option("--steps-a", pc.train.steps_a);
    prof->add_option("--steps-y", pc.train.steps_y);
    prof->add_option("--refit-steps", pc.refit_steps);

    // experiment
    auto* exp = app.add_subcommand("experiment", "Run a configured experiment");
    std::string exp_cfg, exp_out;
    exp->add_option("--config", exp_cfg)->required();
    exp->add_option("--output", exp_out, "override results CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return cmd_generate(gen_dgp, gen_n, gen_rho, gen_seed, gen_out, gen_oracle);
        }
        if (train->parsed()) return cmd_train(train_in, train_out, tc);
        if (eval->parsed()) return cmd_eval(eval_model, eval_oracle, eval_seed);
        if (cf->parsed()) return cmd_counterfactual(cf_model, cf_queries, cf_out);
        if (prof->parsed()) return cmd_profile_rho(prof_in, prof_grid, prof_out, pc);
        if (exp->parsed()) return cmd_experiment(exp_cfg, exp_out);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
