#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace flowiv {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction over a flat parameter vector.
class AdamState {
public:
    AdamState(std::size_t dim, AdamConfig cfg = {});

    // In-place update; throws NumericError on non-finite gradients.
    void step(std::span<double> params, std::span<const double> grads);

    std::int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<double>& first_moment() const { return m_; }
    const std::vector<double>& second_moment() const { return v_; }

private:
    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

} // namespace flowiv
