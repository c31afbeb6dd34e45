#include "flowiv/harness.hpp"

#include "flowiv/dataset.hpp"
#include "flowiv/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace flowiv {

namespace {

using nlohmann::json;

std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string rho_spec_string(const std::optional<double>& rho) {
    return rho ? format_double(*rho) : std::string("uniform");
}

std::string row_key(const RepetitionRecord& r) {
    return r.experiment + "|" + method_name(r.method) + "|" + dgp_name(r.dgp) + "|" +
           r.rho_spec + "|" + std::to_string(r.n_train) + "|" + std::to_string(r.repetition);
}

// One (cell, repetition) unit of work; methods share the repetition's data.
struct Cell {
    DgpId dgp = DgpId::Dgp1;
    std::optional<double> rho;
    std::string rho_spec;
    std::size_t n_train = 0;
    std::size_t index = 0;
};

struct Task {
    Cell cell;
    int repetition = 0;
    std::vector<Method> methods; // methods still to compute
};

} // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::UsualIv: return "usual_iv";
        case Method::DeepIv: return "deep_iv";
        case Method::FlowIv: return "flow_iv";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "usual_iv") return Method::UsualIv;
    if (name == "deep_iv") return Method::DeepIv;
    if (name == "flow_iv") return Method::FlowIv;
    throw ValidationError("unknown method '" + name + "'");
}

double counterfactual_mse(const std::function<double(const CounterfactualQuery&)>& predict,
                          const OracleData& eval_set, const std::vector<double>& a_prime) {
    if (eval_set.samples.empty()) throw ValidationError("counterfactual_mse: empty eval set");
    if (a_prime.size() != eval_set.samples.size()) {
        throw ValidationError("counterfactual_mse: a_prime size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < eval_set.samples.size(); ++i) {
        const OracleSample& s = eval_set.samples[i];
        const CounterfactualQuery q{s.z, s.a, s.y, a_prime[i]};
        const double truth = oracle_counterfactual(eval_set.dgp, s, a_prime[i]);
        const double pred = predict(q);
        if (!std::isfinite(pred)) {
            throw NumericError("counterfactual_mse: non-finite prediction for query " +
                               std::to_string(i) + " (z=" + format_double(q.z) +
                               ", a=" + format_double(q.a) + ", y=" + format_double(q.y) +
                               ", a'=" + format_double(q.a_prime) + ")");
        }
        const double e = truth - pred;
        acc += e * e;
    }
    return acc / static_cast<double>(eval_set.samples.size());
}

std::vector<double> draw_counterfactual_treatments(const OracleData& eval_set, Rng& rng) {
    std::vector<double> a;
    a.reserve(eval_set.samples.size());
    for (const OracleSample& s : eval_set.samples) a.push_back(s.a);
    // Fisher-Yates with the seeded generator.
    for (std::size_t i = a.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(a[i - 1], a[j]);
    }
    return a;
}

MetricResult aggregate(const std::vector<RepetitionRecord>& rows, Method method,
                       DgpId dgp, const std::string& rho_spec, std::size_t n_train) {
    MetricResult r;
    r.method = method;
    r.dgp = dgp;
    r.rho_spec = rho_spec;
    r.n_train = n_train;
    std::vector<std::pair<int, double>> reps;
    for (const auto& row : rows) {
        if (row.method == method && row.dgp == dgp && row.rho_spec == rho_spec &&
            row.n_train == n_train && std::isfinite(row.mse)) {
            reps.emplace_back(row.repetition, row.mse);
        }
    }
    std::sort(reps.begin(), reps.end());
    for (const auto& [rep, mse] : reps) r.per_rep.push_back(mse);
    if (!r.per_rep.empty()) {
        const double n = static_cast<double>(r.per_rep.size());
        r.mean = std::accumulate(r.per_rep.begin(), r.per_rep.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : r.per_rep) ss += (v - r.mean) * (v - r.mean);
        r.stddev = std::sqrt(ss / n);
    }
    return r;
}

namespace {

std::vector<Cell> build_cells(const ExperimentConfig& cfg) {
    std::vector<Cell> cells;
    if (cfg.experiment == "comparison") {
        Cell c;
        c.dgp = cfg.dgp;
        c.rho = dgp_has_rho(cfg.dgp) ? cfg.rho : std::nullopt;
        c.rho_spec = dgp_has_rho(cfg.dgp) ? rho_spec_string(cfg.rho) : std::string("-");
        c.n_train = cfg.n_train;
        cells.push_back(c);
    } else if (cfg.experiment == "convergence") {
        if (cfg.n_grid.empty()) throw ValidationError("convergence: empty n_grid");
        for (std::size_t n : cfg.n_grid) {
            Cell c;
            c.dgp = cfg.dgp;
            c.rho = dgp_has_rho(cfg.dgp) ? cfg.rho : std::nullopt;
            c.rho_spec = dgp_has_rho(cfg.dgp) ? rho_spec_string(cfg.rho) : std::string("-");
            c.n_train = n;
            cells.push_back(c);
        }
    } else if (cfg.experiment == "rho_sweep") {
        if (cfg.rho_grid.empty()) throw ValidationError("rho_sweep: empty rho_grid");
        if (!dgp_has_rho(cfg.dgp)) {
            throw ValidationError("rho_sweep: DGP has no correlation parameter");
        }
        for (double rho : cfg.rho_grid) {
            Cell c;
            c.dgp = cfg.dgp;
            c.rho = rho;
            c.rho_spec = format_double(rho);
            c.n_train = cfg.n_train;
            cells.push_back(c);
        }
    } else {
        throw ValidationError("unknown experiment '" + cfg.experiment + "'");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i].index = i;
    return cells;
}

// Everything one repetition computes, independent of other repetitions.
std::vector<RepetitionRecord> run_task(const ExperimentConfig& cfg, const Task& task) {
    const Cell& cell = task.cell;
    const std::uint64_t task_seed =
        mix_seed(cfg.seed, cell.index * 1000003ULL + static_cast<std::uint64_t>(task.repetition));

    std::optional<double> rho = cell.rho;
    if (dgp_has_rho(cell.dgp) && !rho) {
        Rng rho_rng(mix_seed(task_seed, 4));
        rho = rho_rng.uniform(-1.0, 1.0);
    }

    DgpSpec train_spec{cell.dgp, rho, mix_seed(task_seed, 1)};
    DgpSpec eval_spec{cell.dgp, rho, mix_seed(task_seed, 2)};
    const OracleData train_oracle = generate(train_spec, cell.n_train);
    const OracleData eval_oracle = generate(eval_spec, cfg.n_eval);
    // Estimators only ever see the latent-free view.
    const Dataset train = train_oracle.observed();

    Rng perm_rng(mix_seed(task_seed, 3));
    const std::vector<double> a_prime = draw_counterfactual_treatments(eval_oracle, perm_rng);

    std::optional<ScmFlowModel> flow_model;
    auto ensure_flow = [&]() -> const ScmFlowModel& {
        if (!flow_model) {
            TrainConfig tc = cfg.train;
            tc.seed = mix_seed(task_seed, 5);
            flow_model = fit_scm_flow(train, tc).model;
        }
        return *flow_model;
    };

    std::vector<RepetitionRecord> rows;
    for (Method method : task.methods) {
        RepetitionRecord rec;
        rec.experiment = cfg.experiment;
        rec.method = method;
        rec.dgp = cell.dgp;
        rec.rho_spec = cell.rho_spec;
        rec.n_train = cell.n_train;
        rec.repetition = task.repetition;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            double mse = 0.0;
            switch (method) {
                case Method::UsualIv: {
                    const WaldModel m = fit_wald(train);
                    mse = counterfactual_mse(
                        [&](const CounterfactualQuery& q) { return counterfactual_wald(m, q); },
                        eval_oracle, a_prime);
                    break;
                }
                case Method::DeepIv: {
                    DeepIvConfig dc = cfg.deep_iv;
                    dc.seed = mix_seed(task_seed, 6);
                    const TreatmentSampler fs =
                        cfg.deep_iv_true_first_stage
                            ? TreatmentSampler::from_dgp(cell.dgp)
                            : TreatmentSampler::from_model(ensure_flow());
                    const DeepIvModel m = fit_deep_iv(train, fs, dc).model;
                    mse = counterfactual_mse(
                        [&](const CounterfactualQuery& q) { return counterfactual_deep_iv(m, q); },
                        eval_oracle, a_prime);
                    break;
                }
                case Method::FlowIv: {
                    const ScmFlowModel& m = ensure_flow();
                    mse = counterfactual_mse(
                        [&](const CounterfactualQuery& q) { return predict_counterfactual(m, q); },
                        eval_oracle, a_prime);
                    break;
                }
            }
            rec.mse = mse;
        } catch (const std::exception& e) {
            rec.mse = std::nan("");
            std::fprintf(stderr, "[experiment] %s rep %d failed: %s\n",
                         method_name(method).c_str(), task.repetition, e.what());
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back(rec);
    }
    return rows;
}

void write_row(std::ofstream& out, const RepetitionRecord& r) {
    out << r.experiment << "," << method_name(r.method) << "," << dgp_name(r.dgp) << ","
        << r.rho_spec << "," << r.n_train << "," << r.repetition << ","
        << format_double(r.mse) << "," << format_double(r.seconds) << "\n";
    out.flush();
}

} // namespace

std::vector<RepetitionRecord> load_results_csv(const std::string& path) {
    std::vector<RepetitionRecord> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    if (!std::getline(in, line)) return rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 8) {
            throw ValidationError(path + ": line " + std::to_string(line_no) +
                                  ": expected 8 fields");
        }
        RepetitionRecord r;
        r.experiment = f[0];
        r.method = method_from_name(f[1]);
        r.dgp = dgp_from_name(f[2]);
        r.rho_spec = f[3];
        r.n_train = static_cast<std::size_t>(std::stoull(f[4]));
        r.repetition = std::stoi(f[5]);
        r.mse = f[6] == "nan" || f[6] == "-nan" ? std::nan("") : std::stod(f[6]);
        r.seconds = std::stod(f[7]);
        rows.push_back(r);
    }
    return rows;
}

ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
    if (cfg.repetitions < 1) throw ValidationError("repetitions must be >= 1");
    if (cfg.n_eval < 1) throw ValidationError("n_eval must be >= 1");
    if (cfg.methods.empty()) throw ValidationError("no methods selected");

    const std::vector<Cell> cells = build_cells(cfg);

    ExperimentOutcome outcome;
    std::set<std::string> done;
    if (!cfg.output_path.empty() && std::filesystem::exists(cfg.output_path)) {
        for (const auto& r : load_results_csv(cfg.output_path)) {
            if (r.experiment != cfg.experiment) continue;
            done.insert(row_key(r));
            outcome.rows.push_back(r);
        }
    }

    std::vector<Task> tasks;
    for (const Cell& cell : cells) {
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
            Task t;
            t.cell = cell;
            t.repetition = rep;
            for (Method m : cfg.methods) {
                RepetitionRecord probe;
                probe.experiment = cfg.experiment;
                probe.method = m;
                probe.dgp = cell.dgp;
                probe.rho_spec = cell.rho_spec;
                probe.n_train = cell.n_train;
                probe.repetition = rep;
                if (done.count(row_key(probe))) {
                    ++outcome.skipped;
                } else {
                    t.methods.push_back(m);
                }
            }
            if (!t.methods.empty()) tasks.push_back(std::move(t));
        }
    }

    std::ofstream out;
    if (!cfg.output_path.empty()) {
        const bool existed = std::filesystem::exists(cfg.output_path);
        out.open(cfg.output_path, std::ios::app);
        if (!out) throw ValidationError("cannot write '" + cfg.output_path + "'");
        if (!existed) {
            out << "experiment,method,dgp,rho,n_train,repetition,mse,seconds\n";
            out.flush();
        }
    }

    std::mutex mu;
    std::size_t next = 0;
    const int threads = std::max(1, cfg.threads);
    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= tasks.size()) return;
                i = next++;
            }
            auto rows = run_task(cfg, tasks[i]);
            {
                std::lock_guard<std::mutex> lock(mu);
                for (const auto& r : rows) {
                    if (out.is_open()) write_row(out, r);
                    outcome.rows.push_back(r);
                    if (std::isfinite(r.mse)) {
                        ++outcome.computed;
                    } else {
                        ++outcome.failed;
                    }
                }
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    for (const Cell& cell : cells) {
        for (Method m : cfg.methods) {
            outcome.results.push_back(
                aggregate(outcome.rows, m, cell.dgp, cell.rho_spec, cell.n_train));
        }
    }
    return outcome;
}

ExperimentOutcome run_comparison(ExperimentConfig cfg) {
    cfg.experiment = "comparison";
    return run_experiment(cfg);
}

ExperimentOutcome run_convergence(ExperimentConfig cfg) {
    cfg.experiment = "convergence";
    return run_experiment(cfg);
}

ExperimentOutcome run_rho_sweep(ExperimentConfig cfg) {
    cfg.experiment = "rho_sweep";
    return run_experiment(cfg);
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("config '" + path + "': " + e.what());
    }

    ExperimentConfig cfg;
    cfg.experiment = j.value("experiment", cfg.experiment);
    if (j.contains("dgp")) cfg.dgp = dgp_from_name(j.at("dgp").get<std::string>());
    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : j.at("methods")) {
            cfg.methods.push_back(method_from_name(m.get<std::string>()));
        }
    }
    cfg.n_train = j.value("n_train", cfg.n_train);
    cfg.n_eval = j.value("n_eval", cfg.n_eval);
    cfg.repetitions = j.value("repetitions", cfg.repetitions);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("rho") && !j.at("rho").is_string()) {
        cfg.rho = j.at("rho").get<double>();
    }
    if (j.contains("n_grid")) cfg.n_grid = j.at("n_grid").get<std::vector<std::size_t>>();
    if (j.contains("rho_grid")) cfg.rho_grid = j.at("rho_grid").get<std::vector<double>>();
    cfg.threads = j.value("threads", cfg.threads);
    cfg.deep_iv_true_first_stage =
        j.value("deep_iv_true_first_stage", cfg.deep_iv_true_first_stage);
    cfg.output_path = j.value("output", cfg.output_path);

    if (j.contains("train")) {
        const json& t = j.at("train");
        cfg.train.steps_z = t.value("steps_z", cfg.train.steps_z);
        cfg.train.steps_a = t.value("steps_a", cfg.train.steps_a);
        cfg.train.steps_y = t.value("steps_y", cfg.train.steps_y);
        cfg.train.joint_steps = t.value("joint_steps", cfg.train.joint_steps);
        cfg.train.adam.lr = t.value("lr", cfg.train.adam.lr);
        cfg.train.arch.layers = t.value("layers", cfg.train.arch.layers);
        cfg.train.arch.spline.bins = t.value("bins", cfg.train.arch.spline.bins);
        cfg.train.arch.spline.bound = t.value("bound", cfg.train.arch.spline.bound);
    }
    if (j.contains("deep_iv")) {
        const json& t = j.at("deep_iv");
        cfg.deep_iv.steps = t.value("steps", cfg.deep_iv.steps);
        cfg.deep_iv.m_samples = t.value("m_samples", cfg.deep_iv.m_samples);
        cfg.deep_iv.batch = t.value("batch", cfg.deep_iv.batch);
        cfg.deep_iv.adam.lr = t.value("lr", cfg.deep_iv.adam.lr);
    }
    return cfg;
}

} // namespace flowiv
