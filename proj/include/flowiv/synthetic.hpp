#pragma once

#include "flowiv/dataset.hpp"
#include "flowiv/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flowiv {

// The three benchmark data-generating processes plus the linear-Gaussian
// variant used by the convergence study:
//   Dgp1:        Z = eZ, A = Z + 0.2 eA, Y = 0.5 A^2 + eY,  (eA,eY) ~ N2(rho)
//   Dgp2:        Z = eZ, A = Z + eA,     Y = (sin(A+1.5)+1) eY, (eA,eY) ~ N2(rho)
//   Dgp3:        Z = eZ, A = Z + eA,     Y = 0.6 A + eY, eY = eA^2 + eta/8 - 1
//   LinearGauss: Z = eZ, A = Z + eA,     Y = 0.6 A + eY,  (eA,eY) ~ N2(rho)
enum class DgpId { Dgp1, Dgp2, Dgp3, LinearGauss };

std::string dgp_name(DgpId id);
DgpId dgp_from_name(const std::string& name);
// Whether the DGP has a free correlation parameter (Dgp3 does not).
bool dgp_has_rho(DgpId id);

struct DgpSpec {
    DgpId id = DgpId::Dgp1;
    // Fixed correlation; nullopt draws rho ~ U(-1,1) from the seed.
    std::optional<double> rho;
    std::uint64_t seed = 0;
};

// A generated observation with its latents retained for oracle scoring.
// y == g_Y(a, eps_y) exactly under the generating DGP.
struct OracleSample {
    double z = 0.0;
    double a = 0.0;
    double y = 0.0;
    double eps_a = 0.0;
    double eps_y = 0.0;
};

struct OracleData {
    DgpId dgp = DgpId::Dgp1;
    double rho_used = 0.0; // meaningless for Dgp3
    std::vector<OracleSample> samples;

    // Latent-free view handed to estimators.
    Dataset observed() const;
};

OracleData generate(const DgpSpec& spec, std::size_t n);

// Structural equations, exposed so tests can push latents through directly.
double dgp_treatment(DgpId id, double z, double eps_a);
double dgp_outcome(DgpId id, double a, double eps_y);

// True counterfactual: g_Y applied to (a_prime, s.eps_y).
double oracle_counterfactual(DgpId id, const OracleSample& s, double a_prime);

// Oracle CSV: header z,a,y,eps_A,eps_Y. Only the evaluation harness reads
// these files; estimators receive plain z,a,y datasets.
OracleData load_oracle_csv(const std::string& path);
void save_oracle_csv(const OracleData& d, const std::string& path);

} // namespace flowiv
