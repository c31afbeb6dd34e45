#include "flowiv/mlp.hpp"

#include "flowiv/errors.hpp"

#include <cmath>

namespace flowiv {

namespace {

struct LayerDims {
    int in;
    int out;
};

std::vector<LayerDims> layer_dims(const MlpShape& s) {
    std::vector<LayerDims> dims;
    if (s.hidden == 0) {
        dims.push_back({s.d_in, s.d_out});
        return dims;
    }
    dims.push_back({s.d_in, s.width});
    for (int i = 1; i < s.hidden; ++i) dims.push_back({s.width, s.width});
    dims.push_back({s.width, s.d_out});
    return dims;
}

} // namespace

std::size_t MlpShape::param_count() const {
    std::size_t n = 0;
    for (const auto& d : layer_dims(*this)) {
        n += static_cast<std::size_t>(d.in) * d.out + d.out;
    }
    return n;
}

Mlp Mlp::zeros(const MlpShape& shape) {
    Mlp m;
    m.shape_ = shape;
    for (const auto& d : layer_dims(shape)) {
        m.weights_.push_back(Mat::Zero(d.in, d.out));
        m.biases_.push_back(Eigen::RowVectorXd::Zero(d.out));
    }
    return m;
}

Mlp Mlp::init(const MlpShape& shape, Rng& rng, bool zero_last) {
    Mlp m = zeros(shape);
    const int last = static_cast<int>(m.weights_.size()) - 1;
    for (int l = 0; l <= last; ++l) {
        if (zero_last && l == last) break;
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.weights_[l].rows()));
        for (Eigen::Index i = 0; i < m.weights_[l].rows(); ++i) {
            for (Eigen::Index j = 0; j < m.weights_[l].cols(); ++j) {
                m.weights_[l](i, j) = rng.uniform(-bound, bound);
            }
        }
        for (Eigen::Index j = 0; j < m.biases_[l].cols(); ++j) {
            m.biases_[l](j) = rng.uniform(-bound, bound);
        }
    }
    return m;
}

Mlp Mlp::from_flat(const MlpShape& shape, std::span<const double> flat) {
    if (flat.size() != shape.param_count()) {
        throw ValidationError("mlp: flat parameter span has wrong size");
    }
    Mlp m = zeros(shape);
    std::size_t pos = 0;
    for (std::size_t l = 0; l < m.weights_.size(); ++l) {
        Mat& w = m.weights_[l];
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                w(i, j) = flat[pos++];
            }
        }
        for (Eigen::Index j = 0; j < m.biases_[l].cols(); ++j) {
            m.biases_[l](j) = flat[pos++];
        }
    }
    return m;
}

void Mlp::to_flat(std::span<double> flat) const {
    if (flat.size() != shape_.param_count()) {
        throw ValidationError("mlp: flat parameter span has wrong size");
    }
    std::size_t pos = 0;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        const Mat& w = weights_[l];
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                flat[pos++] = w(i, j);
            }
        }
        for (Eigen::Index j = 0; j < biases_[l].cols(); ++j) {
            flat[pos++] = biases_[l](j);
        }
    }
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
    if (input.size() != shape_.d_in) {
        throw ValidationError("mlp forward: input has length " +
                              std::to_string(input.size()) + ", expected " +
                              std::to_string(shape_.d_in));
    }
    Eigen::RowVectorXd h = input.transpose();
    const std::size_t last = weights_.size() - 1;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = h * weights_[l] + biases_[l];
        if (l != last) h = h.array().tanh();
    }
    return h.transpose();
}

double Mlp::forward1(double input) const {
    Eigen::VectorXd x(1);
    x(0) = input;
    return forward(x)(0);
}

std::vector<Var> mlp_leaves(Tape& tape, const MlpShape& shape,
                            std::span<const double> flat) {
    if (flat.size() != shape.param_count()) {
        throw ValidationError("mlp leaves: flat parameter span has wrong size");
    }
    std::vector<Var> vars;
    std::size_t pos = 0;
    for (const auto& d : layer_dims(shape)) {
        vars.push_back(tape.leaf(
            Eigen::Map<const Mat>(flat.data() + pos, d.in, d.out)));
        pos += static_cast<std::size_t>(d.in) * d.out;
        vars.push_back(tape.leaf(
            Eigen::Map<const Eigen::RowVectorXd>(flat.data() + pos, d.out)));
        pos += d.out;
    }
    return vars;
}

std::vector<Var> mlp_constants(Tape& tape, const MlpShape& shape,
                               std::span<const double> flat) {
    if (flat.size() != shape.param_count()) {
        throw ValidationError("mlp constants: flat parameter span has wrong size");
    }
    std::vector<Var> vars;
    std::size_t pos = 0;
    for (const auto& d : layer_dims(shape)) {
        vars.push_back(tape.constant(
            Eigen::Map<const Mat>(flat.data() + pos, d.in, d.out)));
        pos += static_cast<std::size_t>(d.in) * d.out;
        vars.push_back(tape.constant(
            Eigen::Map<const Eigen::RowVectorXd>(flat.data() + pos, d.out)));
        pos += d.out;
    }
    return vars;
}

Var mlp_forward_on_tape(Tape& tape, const MlpShape& shape,
                        const std::vector<Var>& params, Var input) {
    if (tape.value(input).cols() != shape.d_in) {
        throw ValidationError("mlp forward: input has width " +
                              std::to_string(tape.value(input).cols()) +
                              ", expected " + std::to_string(shape.d_in));
    }
    const std::size_t layers = params.size() / 2;
    Var h = input;
    for (std::size_t l = 0; l < layers; ++l) {
        h = tape.add(tape.matmul(h, params[2 * l]), params[2 * l + 1]);
        if (l != layers - 1) h = tape.tanh_(h);
    }
    return h;
}

void mlp_accumulate_grads(const Tape& tape, const MlpShape& shape,
                          const std::vector<Var>& params, std::span<double> flat_grad) {
    if (flat_grad.size() != shape.param_count()) {
        throw ValidationError("mlp grads: flat span has wrong size");
    }
    std::size_t pos = 0;
    std::size_t vi = 0;
    for (const auto& d : layer_dims(shape)) {
        const Mat gw = tape.grad(params[vi++]);
        for (Eigen::Index j = 0; j < d.out; ++j) {
            for (Eigen::Index i = 0; i < d.in; ++i) {
                flat_grad[pos++] += gw(i, j);
            }
        }
        const Mat gb = tape.grad(params[vi++]);
        for (Eigen::Index j = 0; j < d.out; ++j) {
            flat_grad[pos++] += gb(0, j);
        }
    }
}

} // namespace flowiv
