#pragma once

#include "flowiv/rng.hpp"
#include "flowiv/tape.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace flowiv {

// Fully connected network with tanh at hidden layers and a linear head.
struct MlpShape {
    int d_in = 1;
    int d_out = 1;
    int width = 20;
    int hidden = 3;

    std::size_t param_count() const;
    int layer_count() const { return hidden + 1; }
};

// Weight holder with a plain (double) forward pass. Training happens on the
// flat parameter storage through the tape helpers below; this type exists for
// inference paths and tests. Layout in flat storage is
// [W0 col-major, b0, W1, b1, ..., Wout, bout].
class Mlp {
public:
    Mlp() = default;

    static Mlp zeros(const MlpShape& shape);
    // Symmetric uniform init scaled by 1/sqrt(fan_in). With zero_last the
    // output layer starts at zero so downstream transforms start at identity.
    static Mlp init(const MlpShape& shape, Rng& rng, bool zero_last);
    static Mlp from_flat(const MlpShape& shape, std::span<const double> flat);

    void to_flat(std::span<double> flat) const;

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
    double forward1(double input) const; // d_in == 1, d_out == 1 convenience

    const MlpShape& shape() const { return shape_; }

private:
    MlpShape shape_;
    std::vector<Mat> weights_;
    std::vector<Eigen::RowVectorXd> biases_;
};

// Leaves for every weight/bias of an MLP stored flat, in layout order.
std::vector<Var> mlp_leaves(Tape& tape, const MlpShape& shape,
                            std::span<const double> flat);
// Same tensors as constants (no gradient tracking).
std::vector<Var> mlp_constants(Tape& tape, const MlpShape& shape,
                               std::span<const double> flat);

// Batched forward: input NxD_in, result NxD_out.
Var mlp_forward_on_tape(Tape& tape, const MlpShape& shape,
                        const std::vector<Var>& params, Var input);

// Writes per-tensor gradients back into a flat gradient span.
void mlp_accumulate_grads(const Tape& tape, const MlpShape& shape,
                          const std::vector<Var>& params, std::span<double> flat_grad);

} // namespace flowiv
