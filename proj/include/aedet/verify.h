#pragma once

#include "aedet/excitation.h"
#include "aedet/gradcheck.h"
#include "aedet/model.h"

#include <iostream>

namespace aedet {

struct VerifyOptions {
    int instances_per_op = 10;
    double fd_tolerance = 1e-4;
    double jacobian_tolerance = 1e-8;
    std::uint64_t seed = 12345;
};

/// Finite-difference checks for every differentiable op (conv2d,
/// leaky_relu away from the kink, max_pool2d away from ties,
/// channel_mean, detection_loss, ae_forward under all three
/// strategies), plus the closed-form AE Jacobian check. Prints one line
/// per sub-suite; returns true iff every tolerance holds.
bool run_gradient_suite(std::ostream& out, const VerifyOptions& options = {});

/// Max abs deviation of the backward-computed AE Jacobian from
/// delta_{cc'} + alpha*g_{ij}/d (channel-average strategy, 64-bit) on a
/// random tensor of the given shape.
double ae_jacobian_error(Shape shape, double alpha, std::uint64_t seed);

}  // namespace aedet
