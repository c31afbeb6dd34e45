#include "flowiv/tape.hpp"

#include "flowiv/errors.hpp"

#include <cmath>
#include <utility>

namespace flowiv {

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ValidationError(std::string(op) + ": shape mismatch (" +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                              " vs " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + ")");
    }
}

bool is_scalar(const Mat& m) { return m.rows() == 1 && m.cols() == 1; }

} // namespace

Var Tape::push(Mat value, bool requires_grad, std::function<void(Tape&)> bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::constant_scalar(double value) {
    Mat m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
}

Var Tape::leaf(Mat value) { return push(std::move(value), true, nullptr); }

Mat Tape::grad(Var v) const {
    const Node& n = nodes_[v.idx];
    if (n.grad.size() > 0) return n.grad;
    return Mat::Zero(n.value.rows(), n.value.cols());
}

Mat& Tape::grad_ref(int idx) {
    Node& n = nodes_[idx];
    if (n.grad.size() == 0) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

void Tape::accum(int idx, const Mat& g) {
    if (!nodes_[idx].requires_grad) return;
    grad_ref(idx) += g;
}

void Tape::backward(Var root) {
    const Node& r = nodes_[root.idx];
    if (r.value.rows() != 1 || r.value.cols() != 1) {
        throw ValidationError("backward: root must be a 1x1 scalar");
    }
    if (!r.requires_grad) return;
    grad_ref(root.idx).setOnes();
    for (int i = root.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.backward && n.grad.size() > 0) n.backward(*this);
    }
}

// --- binary elementwise -----------------------------------------------------

Var Tape::add(Var a, Var b) {
    const Mat& va = nodes_[a.idx].value;
    const Mat& vb = nodes_[b.idx].value;
    const bool rg = nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad;
    if (va.rows() > 1 && vb.rows() == 1 && vb.cols() == va.cols() && vb.cols() > 1) {
        // NxM + 1xM row broadcast
        Mat out = va.rowwise() + vb.row(0);
        Var r = push(std::move(out), rg, nullptr);
        if (rg) {
            const int ri = r.idx;
            nodes_[ri].backward = [a, b, ri](Tape& t) {
                const Mat& g = t.nodes_[ri].grad;
                t.accum(a.idx, g);
                if (t.nodes_[b.idx].requires_grad) {
                    t.accum(b.idx, g.colwise().sum());
                }
            };
        }
        return r;
    }
    Mat out;
    if (is_scalar(va) && !is_scalar(vb)) {
        out = vb.array() + va(0, 0);
    } else if (is_scalar(vb) && !is_scalar(va)) {
        out = va.array() + vb(0, 0);
    } else {
        check_same_shape(va, vb, "add");
        out = va + vb;
    }
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, b, ri](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            const Mat& va2 = t.nodes_[a.idx].value;
            const Mat& vb2 = t.nodes_[b.idx].value;
            if (is_scalar(va2) && !is_scalar(vb2)) {
                if (t.nodes_[a.idx].requires_grad) {
                    Mat s(1, 1);
                    s(0, 0) = g.sum();
                    t.accum(a.idx, s);
                }
                t.accum(b.idx, g);
            } else if (is_scalar(vb2) && !is_scalar(va2)) {
                t.accum(a.idx, g);
                if (t.nodes_[b.idx].requires_grad) {
                    Mat s(1, 1);
                    s(0, 0) = g.sum();
                    t.accum(b.idx, s);
                }
            } else {
                t.accum(a.idx, g);
                t.accum(b.idx, g);
            }
        };
    }
    return r;
}

Var Tape::sub(Var a, Var b) { return add(a, neg(b)); }

Var Tape::mul(Var a, Var b) {
    const Mat& va = nodes_[a.idx].value;
    const Mat& vb = nodes_[b.idx].value;
    const bool rg = nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad;
    Mat out;
    if (is_scalar(va) && !is_scalar(vb)) {
        out = vb.array() * va(0, 0);
    } else if (is_scalar(vb) && !is_scalar(va)) {
        out = va.array() * vb(0, 0);
    } else {
        check_same_shape(va, vb, "mul");
        out = va.cwiseProduct(vb);
    }
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, b, ri](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            const Mat& va2 = t.nodes_[a.idx].value;
            const Mat& vb2 = t.nodes_[b.idx].value;
            if (is_scalar(va2) && !is_scalar(vb2)) {
                if (t.nodes_[a.idx].requires_grad) {
                    Mat s(1, 1);
                    s(0, 0) = g.cwiseProduct(vb2).sum();
                    t.accum(a.idx, s);
                }
                if (t.nodes_[b.idx].requires_grad) t.accum(b.idx, g * va2(0, 0));
            } else if (is_scalar(vb2) && !is_scalar(va2)) {
                if (t.nodes_[a.idx].requires_grad) t.accum(a.idx, g * vb2(0, 0));
                if (t.nodes_[b.idx].requires_grad) {
                    Mat s(1, 1);
                    s(0, 0) = g.cwiseProduct(va2).sum();
                    t.accum(b.idx, s);
                }
            } else {
                if (t.nodes_[a.idx].requires_grad) t.accum(a.idx, g.cwiseProduct(vb2));
                if (t.nodes_[b.idx].requires_grad) t.accum(b.idx, g.cwiseProduct(va2));
            }
        };
    }
    return r;
}

Var Tape::div(Var a, Var b) {
    const Mat& va = nodes_[a.idx].value;
    const Mat& vb = nodes_[b.idx].value;
    const bool rg = nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad;
    Mat out;
    if (is_scalar(vb) && !is_scalar(va)) {
        out = va.array() / vb(0, 0);
    } else if (is_scalar(va) && !is_scalar(vb)) {
        out = va(0, 0) / vb.array();
    } else {
        check_same_shape(va, vb, "div");
        out = va.cwiseQuotient(vb);
    }
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, b, ri](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            const Mat& va2 = t.nodes_[a.idx].value;
            const Mat& vb2 = t.nodes_[b.idx].value;
            const Mat& out2 = t.nodes_[ri].value;
            if (is_scalar(vb2) && !is_scalar(va2)) {
                if (t.nodes_[a.idx].requires_grad) t.accum(a.idx, g / vb2(0, 0));
                if (t.nodes_[b.idx].requires_grad) {
                    Mat s(1, 1);
                    s(0, 0) = -g.cwiseProduct(out2).sum() / vb2(0, 0);
                    t.accum(b.idx, s);
                }
            } else if (is_scalar(va2) && !is_scalar(vb2)) {
                if (t.nodes_[a.idx].requires_grad) {
                    Mat s(1, 1);
                    s(0, 0) = g.cwiseQuotient(vb2).sum();
                    t.accum(a.idx, s);
                }
                if (t.nodes_[b.idx].requires_grad) {
                    t.accum(b.idx, -g.cwiseProduct(out2).cwiseQuotient(vb2));
                }
            } else {
                if (t.nodes_[a.idx].requires_grad) t.accum(a.idx, g.cwiseQuotient(vb2));
                if (t.nodes_[b.idx].requires_grad) {
                    t.accum(b.idx, -g.cwiseProduct(out2).cwiseQuotient(vb2));
                }
            }
        };
    }
    return r;
}

Var Tape::matmul(Var a, Var b) {
    const Mat& va = nodes_[a.idx].value;
    const Mat& vb = nodes_[b.idx].value;
    if (va.cols() != vb.rows()) {
        throw ValidationError("matmul: inner dimensions disagree (" +
                              std::to_string(va.cols()) + " vs " +
                              std::to_string(vb.rows()) + ")");
    }
    const bool rg = nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad;
    Var r = push(va * vb, rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, b, ri](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            if (t.nodes_[a.idx].requires_grad) {
                t.accum(a.idx, g * t.nodes_[b.idx].value.transpose());
            }
            if (t.nodes_[b.idx].requires_grad) {
                t.accum(b.idx, t.nodes_[a.idx].value.transpose() * g);
            }
        };
    }
    return r;
}

// --- unary ------------------------------------------------------------------

Var Tape::neg(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(-nodes_[a.idx].value, rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) { t.accum(a.idx, -t.nodes_[ri].grad); };
    }
    return r;
}

Var Tape::exp_(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value.array().exp(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            t.accum(a.idx, t.nodes_[ri].grad.cwiseProduct(t.nodes_[ri].value));
        };
    }
    return r;
}

Var Tape::log_(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value.array().log(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            t.accum(a.idx, t.nodes_[ri].grad.cwiseQuotient(t.nodes_[a.idx].value));
        };
    }
    return r;
}

Var Tape::sqrt_(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value.array().sqrt(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            t.accum(a.idx, (t.nodes_[ri].grad.array() /
                            (2.0 * t.nodes_[ri].value.array()))
                               .matrix());
        };
    }
    return r;
}

Var Tape::square(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value.array().square(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            t.accum(a.idx, 2.0 * t.nodes_[ri].grad.cwiseProduct(t.nodes_[a.idx].value));
        };
    }
    return r;
}

Var Tape::tanh_(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value.array().tanh(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            const auto& y = t.nodes_[ri].value.array();
            t.accum(a.idx, (t.nodes_[ri].grad.array() * (1.0 - y.square())).matrix());
        };
    }
    return r;
}

Var Tape::softplus(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    // log(1+exp(x)) = max(x,0) + log1p(exp(-|x|))
    const auto& x = nodes_[a.idx].value.array();
    Mat out = (x.max(0.0) + (-x.abs()).exp().log1p()).matrix();
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            const auto& x2 = t.nodes_[a.idx].value.array();
            // sigmoid(x) = 1/(1+exp(-x))
            t.accum(a.idx, (t.nodes_[ri].grad.array() / (1.0 + (-x2).exp())).matrix());
        };
    }
    return r;
}

Var Tape::scale(Var a, double c) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value * c, rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri, c](Tape& t) { t.accum(a.idx, t.nodes_[ri].grad * c); };
    }
    return r;
}

Var Tape::add_const(Var a, double c) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push((nodes_[a.idx].value.array() + c).matrix(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) { t.accum(a.idx, t.nodes_[ri].grad); };
    }
    return r;
}

Var Tape::transpose(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(nodes_[a.idx].value.transpose(), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            t.accum(a.idx, t.nodes_[ri].grad.transpose());
        };
    }
    return r;
}

Var Tape::reshape(Var a, int rows, int cols) {
    const Mat& va = nodes_[a.idx].value;
    if (va.size() != static_cast<Eigen::Index>(rows) * cols) {
        throw ValidationError("reshape: element count mismatch");
    }
    Mat out = Eigen::Map<const Mat>(va.data(), rows, cols);
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            const Mat& va2 = t.nodes_[a.idx].value;
            t.accum(a.idx, Eigen::Map<const Mat>(g.data(), va2.rows(), va2.cols()));
        };
    }
    return r;
}

// --- reductions ---------------------------------------------------------------

Var Tape::sum(Var a) {
    const bool rg = nodes_[a.idx].requires_grad;
    Mat out(1, 1);
    out(0, 0) = nodes_[a.idx].value.sum();
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            const double g = t.nodes_[ri].grad(0, 0);
            const Mat& va = t.nodes_[a.idx].value;
            t.accum(a.idx, Mat::Constant(va.rows(), va.cols(), g));
        };
    }
    return r;
}

Var Tape::mean(Var a) {
    const double n = static_cast<double>(nodes_[a.idx].value.size());
    return scale(sum(a), 1.0 / n);
}

// --- structured ops -----------------------------------------------------------

Var Tape::softmax_rows(Var a) {
    const Mat& va = nodes_[a.idx].value;
    Mat out(va.rows(), va.cols());
    for (Eigen::Index i = 0; i < va.rows(); ++i) {
        const double m = va.row(i).maxCoeff();
        Eigen::RowVectorXd e = (va.row(i).array() - m).exp();
        out.row(i) = e / e.sum();
    }
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            const Mat& s = t.nodes_[ri].value;
            Mat gx(g.rows(), g.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                const double dot = g.row(i).dot(s.row(i));
                gx.row(i) = s.row(i).cwiseProduct(g.row(i)) - dot * s.row(i);
            }
            t.accum(a.idx, gx);
        };
    }
    return r;
}

Var Tape::cumsum0_rows(Var a) {
    const Mat& va = nodes_[a.idx].value;
    const Eigen::Index n = va.rows(), k = va.cols();
    Mat out = Mat::Zero(n, k + 1);
    for (Eigen::Index j = 0; j < k; ++j) {
        out.col(j + 1) = out.col(j) + va.col(j);
    }
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri, k](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            Mat gx(g.rows(), k);
            // d/dx_j = sum of output grads for columns > j
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(g.rows());
            for (Eigen::Index j = k - 1; j >= 0; --j) {
                acc += g.col(j + 1);
                gx.col(j) = acc;
            }
            t.accum(a.idx, gx);
        };
    }
    return r;
}

Var Tape::pad_ones(Var a) {
    const Mat& va = nodes_[a.idx].value;
    const Eigen::Index n = va.rows(), k = va.cols();
    Mat out(n, k + 2);
    out.col(0).setOnes();
    out.block(0, 1, n, k) = va;
    out.col(k + 1).setOnes();
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri, n, k](Tape& t) {
            t.accum(a.idx, t.nodes_[ri].grad.block(0, 1, n, k));
        };
    }
    return r;
}

Var Tape::slice_cols(Var a, int first, int count) {
    const Mat& va = nodes_[a.idx].value;
    if (first < 0 || first + count > va.cols()) {
        throw ValidationError("slice_cols: range out of bounds");
    }
    Mat out = va.middleCols(first, count);
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri, first, count](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            Mat gx = Mat::Zero(t.nodes_[a.idx].value.rows(), t.nodes_[a.idx].value.cols());
            gx.middleCols(first, count) = g;
            t.accum(a.idx, gx);
        };
    }
    return r;
}

Var Tape::gather_cols(Var a, const std::vector<int>& idx) {
    const Mat& va = nodes_[a.idx].value;
    const bool broadcast = (va.rows() == 1);
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    if (!broadcast && va.rows() != n) {
        throw ValidationError("gather_cols: index count does not match row count");
    }
    Mat out(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        out(i, 0) = va(broadcast ? 0 : i, idx[i]);
    }
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        auto indices = idx;
        nodes_[ri].backward = [a, ri, broadcast, indices = std::move(indices)](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            const Mat& va2 = t.nodes_[a.idx].value;
            Mat gx = Mat::Zero(va2.rows(), va2.cols());
            for (std::size_t i = 0; i < indices.size(); ++i) {
                gx(broadcast ? 0 : static_cast<Eigen::Index>(i), indices[i]) +=
                    g(static_cast<Eigen::Index>(i), 0);
            }
            t.accum(a.idx, gx);
        };
    }
    return r;
}

Var Tape::select_rows(const std::vector<char>& mask, Var a, Var b) {
    const Mat& va = nodes_[a.idx].value;
    const Mat& vb = nodes_[b.idx].value;
    check_same_shape(va, vb, "select_rows");
    if (va.cols() != 1 || va.rows() != static_cast<Eigen::Index>(mask.size())) {
        throw ValidationError("select_rows: operands must be Nx1 with N == mask size");
    }
    Mat out(va.rows(), 1);
    for (Eigen::Index i = 0; i < va.rows(); ++i) {
        out(i, 0) = mask[static_cast<std::size_t>(i)] ? va(i, 0) : vb(i, 0);
    }
    const bool rg = nodes_[a.idx].requires_grad || nodes_[b.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        auto m = mask;
        nodes_[ri].backward = [a, b, ri, m = std::move(m)](Tape& t) {
            const Mat& g = t.nodes_[ri].grad;
            if (t.nodes_[a.idx].requires_grad) {
                Mat ga = Mat::Zero(g.rows(), 1);
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    if (m[static_cast<std::size_t>(i)]) ga(i, 0) = g(i, 0);
                }
                t.accum(a.idx, ga);
            }
            if (t.nodes_[b.idx].requires_grad) {
                Mat gb = Mat::Zero(g.rows(), 1);
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    if (!m[static_cast<std::size_t>(i)]) gb(i, 0) = g(i, 0);
                }
                t.accum(b.idx, gb);
            }
        };
    }
    return r;
}

Var Tape::repeat_rows(Var a, int n) {
    const Mat& va = nodes_[a.idx].value;
    if (va.rows() != 1) throw ValidationError("repeat_rows: input must be 1xM");
    Mat out = va.replicate(n, 1);
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri](Tape& t) {
            t.accum(a.idx, t.nodes_[ri].grad.colwise().sum());
        };
    }
    return r;
}

Var Tape::group_mean(Var a, int g) {
    const Mat& va = nodes_[a.idx].value;
    if (va.cols() != 1 || va.rows() % g != 0) {
        throw ValidationError("group_mean: input must be (N*g)x1");
    }
    const Eigen::Index n = va.rows() / g;
    Mat out(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        out(i, 0) = va.block(i * g, 0, g, 1).mean();
    }
    const bool rg = nodes_[a.idx].requires_grad;
    Var r = push(std::move(out), rg, nullptr);
    if (rg) {
        const int ri = r.idx;
        nodes_[ri].backward = [a, ri, g, n](Tape& t) {
            const Mat& gr = t.nodes_[ri].grad;
            Mat gx(n * g, 1);
            for (Eigen::Index i = 0; i < n; ++i) {
                gx.block(i * g, 0, g, 1).setConstant(gr(i, 0) / g);
            }
            t.accum(a.idx, gx);
        };
    }
    return r;
}

// --- ParamVector entry points ---------------------------------------------------

namespace {

ParamLeaves make_leaves(Tape& tape, const ParamVector& at) {
    ParamLeaves leaves;
    for (const auto& s : at.segments()) {
        Mat m(static_cast<Eigen::Index>(s.size), 1);
        for (std::size_t i = 0; i < s.size; ++i) {
            m(static_cast<Eigen::Index>(i), 0) = at[s.offset + i];
        }
        leaves.emplace(s.name, tape.leaf(std::move(m)));
    }
    return leaves;
}

} // namespace

double eval_loss(const LossBuilder& loss, const ParamVector& at) {
    Tape tape;
    ParamLeaves leaves = make_leaves(tape, at);
    Var l = loss(tape, leaves);
    return tape.value(l)(0, 0);
}

ParamVector grad(const LossBuilder& loss, const ParamVector& at) {
    Tape tape;
    ParamLeaves leaves = make_leaves(tape, at);
    Var l = loss(tape, leaves);
    const double value = tape.value(l)(0, 0);
    if (!std::isfinite(value)) {
        if (auto seg = at.first_nonfinite_segment()) {
            throw NumericError("non-finite loss: parameter segment '" + *seg +
                               "' contains non-finite values");
        }
        throw NumericError("non-finite loss value (all parameter segments finite)");
    }
    tape.backward(l);

    ParamVector out;
    for (const auto& s : at.segments()) {
        out.add_segment(s.name, s.size);
    }
    for (const auto& s : at.segments()) {
        const Mat g = tape.grad(leaves.at(s.name));
        auto dst = out.segment(s.name);
        for (std::size_t i = 0; i < s.size; ++i) {
            dst[i] = g(static_cast<Eigen::Index>(i), 0);
        }
    }
    if (auto seg = out.first_nonfinite_segment()) {
        throw NumericError("non-finite gradient in parameter segment '" + *seg + "'");
    }
    return out;
}

} // namespace flowiv
