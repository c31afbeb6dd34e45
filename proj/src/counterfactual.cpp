#include "flowiv/counterfactual.hpp"

#include "flowiv/dataset.hpp"
#include "flowiv/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace flowiv {

double abduce(const ScmFlowModel& m, double a, double y) {
    return m.h_y.inverse(m.std_a.to_std(a), m.std_y.to_std(y)).first;
}

double predict_counterfactual(const ScmFlowModel& m, const CounterfactualQuery& q) {
    const double eps_y = abduce(m, q.a, q.y);
    const double y_std = m.h_y.forward(m.std_a.to_std(q.a_prime), eps_y).first;
    return m.std_y.from_std(y_std);
}

MonteCarloMean interventional_mean(const ScmFlowModel& m, double a, std::size_t n_mc,
                                   Rng& rng) {
    if (n_mc == 0) throw ValidationError("interventional_mean: n_mc must be >= 1");
    const double cond = m.std_a.to_std(a);
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        const double y = m.std_y.from_std(m.h_y.forward(cond, rng.normal()).first);
        sum += y;
        sumsq += y * y;
    }
    MonteCarloMean out;
    out.n = n_mc;
    out.mean = sum / static_cast<double>(n_mc);
    const double var =
        std::max(0.0, sumsq / static_cast<double>(n_mc) - out.mean * out.mean);
    out.std_error = std::sqrt(var / static_cast<double>(n_mc));
    return out;
}

std::vector<CounterfactualQuery> load_queries_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    ++line_no;
    auto header = split_csv_line(line);
    if (header.size() != 4 || header[0] != "z" || header[1] != "a" || header[2] != "y" ||
        header[3] != "a_prime") {
        throw ValidationError(path + ": expected header 'z,a,y,a_prime'");
    }
    std::vector<CounterfactualQuery> queries;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4) {
            throw ValidationError(path + ": line " + std::to_string(line_no) +
                                  ": expected 4 fields");
        }
        CounterfactualQuery q;
        q.z = parse_csv_number(fields[0], path, line_no);
        q.a = parse_csv_number(fields[1], path, line_no);
        q.y = parse_csv_number(fields[2], path, line_no);
        q.a_prime = parse_csv_number(fields[3], path, line_no);
        queries.push_back(q);
    }
    if (queries.empty()) throw ValidationError(path + ": no query rows");
    return queries;
}

void run_counterfactual_batch(const BatchPredictor& predict, const std::string& in_path,
                              const std::string& out_path) {
    const auto queries = load_queries_csv(in_path);
    std::ofstream out(out_path);
    if (!out) throw ValidationError("cannot write '" + out_path + "'");
    out << "z,a,y,a_prime,eY,y_cf\n";
    char buf[192];
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& q = queries[i];
        const auto [eps, y_cf] = predict(q);
        if (!std::isfinite(y_cf)) {
            throw NumericError("counterfactual batch: non-finite prediction for query " +
                               std::to_string(i + 1));
        }
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", q.z, q.a,
                      q.y, q.a_prime, eps, y_cf);
        out << buf;
    }
}

BatchPredictor batch_predictor(const ScmFlowModel& m) {
    return [&m](const CounterfactualQuery& q) {
        const double eps = abduce(m, q.a, q.y);
        const double y_std = m.h_y.forward(m.std_a.to_std(q.a_prime), eps).first;
        return std::make_pair(eps, m.std_y.from_std(y_std));
    };
}

} // namespace flowiv
