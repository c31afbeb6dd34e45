#include "flowiv/synthetic.hpp"

#include "flowiv/errors.hpp"
#include "flowiv/noise.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace flowiv {

std::string dgp_name(DgpId id) {
    switch (id) {
        case DgpId::Dgp1: return "DGP1";
        case DgpId::Dgp2: return "DGP2";
        case DgpId::Dgp3: return "DGP3";
        case DgpId::LinearGauss: return "LINEAR_GAUSS";
    }
    return "?";
}

DgpId dgp_from_name(const std::string& name) {
    if (name == "DGP1") return DgpId::Dgp1;
    if (name == "DGP2") return DgpId::Dgp2;
    if (name == "DGP3") return DgpId::Dgp3;
    if (name == "LINEAR_GAUSS") return DgpId::LinearGauss;
    throw ValidationError("unknown DGP '" + name + "'");
}

bool dgp_has_rho(DgpId id) { return id != DgpId::Dgp3; }

double dgp_treatment(DgpId id, double z, double eps_a) {
    switch (id) {
        case DgpId::Dgp1: return z + 0.2 * eps_a;
        case DgpId::Dgp2:
        case DgpId::Dgp3:
        case DgpId::LinearGauss: return z + eps_a;
    }
    return 0.0;
}

double dgp_outcome(DgpId id, double a, double eps_y) {
    switch (id) {
        case DgpId::Dgp1: return 0.5 * a * a + eps_y;
        case DgpId::Dgp2: return (std::sin(a + 1.5) + 1.0) * eps_y;
        case DgpId::Dgp3:
        case DgpId::LinearGauss: return 0.6 * a + eps_y;
    }
    return 0.0;
}

Dataset OracleData::observed() const {
    Dataset d;
    d.rows.reserve(samples.size());
    for (const OracleSample& s : samples) d.rows.push_back({s.z, s.a, s.y});
    return d;
}

OracleData generate(const DgpSpec& spec, std::size_t n) {
    if (n == 0) throw ValidationError("generate: n must be >= 1");
    if (spec.rho && !(std::abs(*spec.rho) <= 1.0)) {
        throw ValidationError("generate: |rho| must be <= 1");
    }

    Rng rng(spec.seed);
    OracleData out;
    out.dgp = spec.id;

    double rho = 0.0;
    if (dgp_has_rho(spec.id)) {
        rho = spec.rho ? *spec.rho : rng.uniform(-1.0, 1.0);
        // Keep the noise law nondegenerate under uniform draws near +-1.
        rho = std::clamp(rho, -0.999999, 0.999999);
    }
    out.rho_used = rho;

    const CorrelatedGaussian noise =
        dgp_has_rho(spec.id) ? CorrelatedGaussian::from_rho(rho) : CorrelatedGaussian();

    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        OracleSample s;
        const double eps_z = rng.normal();
        if (spec.id == DgpId::Dgp3) {
            s.eps_a = rng.normal();
            const double eta = rng.normal();
            s.eps_y = s.eps_a * s.eps_a + eta / 8.0 - 1.0;
        } else {
            const auto [ea, ey] = noise.sample_pair(rng);
            s.eps_a = ea;
            s.eps_y = ey;
        }
        s.z = eps_z;
        s.a = dgp_treatment(spec.id, s.z, s.eps_a);
        s.y = dgp_outcome(spec.id, s.a, s.eps_y);
        out.samples.push_back(s);
    }
    return out;
}

double oracle_counterfactual(DgpId id, const OracleSample& s, double a_prime) {
    return dgp_outcome(id, a_prime, s.eps_y);
}

OracleData load_oracle_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    ++line_no;
    auto header = split_csv_line(line);
    if (header.size() != 5 || header[0] != "z" || header[1] != "a" || header[2] != "y" ||
        header[3] != "eps_A" || header[4] != "eps_Y") {
        throw ValidationError(path + ": expected header 'z,a,y,eps_A,eps_Y'");
    }
    OracleData d;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 5) {
            throw ValidationError(path + ": line " + std::to_string(line_no) +
                                  ": expected 5 fields");
        }
        OracleSample s;
        s.z = parse_csv_number(fields[0], path, line_no);
        s.a = parse_csv_number(fields[1], path, line_no);
        s.y = parse_csv_number(fields[2], path, line_no);
        s.eps_a = parse_csv_number(fields[3], path, line_no);
        s.eps_y = parse_csv_number(fields[4], path, line_no);
        d.samples.push_back(s);
    }
    if (d.samples.empty()) throw ValidationError(path + ": no data rows");
    return d;
}

void save_oracle_csv(const OracleData& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << "z,a,y,eps_A,eps_Y\n";
    char buf[160];
    for (const OracleSample& s : d.samples) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n", s.z, s.a, s.y,
                      s.eps_a, s.eps_y);
        out << buf;
    }
}

} // namespace flowiv
