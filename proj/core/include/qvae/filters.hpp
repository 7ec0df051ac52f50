#pragma once

#include "qvae/rng.hpp"
#include "qvae/tensor.hpp"

namespace qvae {

// Single-qubit readout: prepare |0>, rotate by R_Y(theta), measure Pauli-Z.
// The state is (cos(theta/2), sin(theta/2)), so <Z> = cos^2 - sin^2 = cos(theta).
double quantum_expectation(double theta);

// d<Z>/dtheta. Equals the parameter-shift value (f(theta+pi/2) - f(theta-pi/2)) / 2.
double quantum_encode_grad(double theta);

// Keeps the top-left pixel of every 2x2 window. Differentiable (grad routes to
// the kept pixel). Spatial extents must be even.
Tensor window_pool_first(const Tensor& img);

// Per pixel p in [0,1]: theta = angle_scale * p, output <Z>. Differentiable
// with the analytic gradient -angle_scale * sin(theta). Adds no parameters.
Tensor quantum_encode(const Tensor& pooled, double angle_scale);

// Finite-shot estimate of the same measurement: mean of `shots` +/-1 draws
// with P(+1) = cos^2(theta/2). Evaluation only, never part of the graph.
Tensor quantum_encode_sampled(const Tensor& pooled, double angle_scale, int shots,
                              Rng& rng);

}  // namespace qvae
