#pragma once

#include "flowiv/rq_spline.hpp"
#include "flowiv/tape.hpp"

#include <utility>

namespace flowiv {

// Spline quantities as tape nodes, built from a raw parameter block of shape
// Rx(3K-1). R may be 1 (shared spline broadcast over all rows) or N (one
// spline per row, e.g. conditioner outputs).
struct SplineBlocks {
    Var widths;  // RxK
    Var heights; // RxK
    Var derivs;  // Rx(K+1), first/last columns pinned to 1
    Var xknots;  // Rx(K+1)
    Var yknots;  // Rx(K+1)
    int rows = 0;
};

SplineBlocks spline_blocks_on_tape(Tape& tape, Var raw, const SplineParams& p);

// Batched transform of an Nx1 column. Returns (output, logdet) where logdet
// is log t'(x) for forward and -log t'(x) for inverse, zero in the identity
// tails. Bin membership is decided from node values and treated as constant
// under differentiation.
std::pair<Var, Var> spline_forward_on_tape(Tape& tape, const SplineBlocks& b, Var x,
                                           const SplineParams& p);
std::pair<Var, Var> spline_inverse_on_tape(Tape& tape, const SplineBlocks& b, Var y,
                                           const SplineParams& p);

} // namespace flowiv
