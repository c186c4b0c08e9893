#pragma once

// Homogenization-commutator observable and its CLT-type variance scaling.
//
// For a test vector field h compactly supported inside the domain, the
// commutator pairs the coefficient fluctuation (a^eps - a_bar) with the
// two-scale gradient defect:
//   H^eps = integral of h . (a^eps - a_bar)(grad u_eps - grad u_bar
//                                           - (grad phi_i)^eps eta d_i u_bar).
// Its standard deviation over the ensemble should shrink like
// eps^{d/2 + 1} = eps^2 (up to logarithmic factors) in two dimensions.

#include <cstdint>
#include <string>
#include <vector>

#include "homlab/grid.hpp"
#include "homlab/two_scale.hpp"
#include "homlab/util.hpp"

namespace homlab {

struct FluctuationSample {
    double h_value = 0.0;
    double epsilon = 0.0;
    int sample_index = -1;
};

/**
 * Smooth bump test field supported in the inner half of the bounding box:
 * both components carry the profile prod_i sin^2(2 pi (x_i - E/4) / E) on
 * [E/4, 3E/4]^2, zero outside and on cells outside the domain.
 */
void test_field_h(const DomainMask& mask, std::vector<double>& hx, std::vector<double>& hy);

/**
 * The commutator quadrature over inside cells.  m_i = eta d_i u_bar uses the
 * cut-off pair; gradients are Q1 cell-center gradients of the nodal inputs.
 * Throws config_error when the support of (hx, hy) touches the 2 eps boundary
 * layer (the observable needs compact support), or on any size or epsilon
 * mismatch between the corrector and cut-off inputs.
 */
double commutator_H(const DomainMask& mask, const std::vector<double>& a_eps, const Mat2& a_bar,
                    const std::vector<double>& u_eps, const std::vector<double>& u_bar,
                    const ScaledCorrectors& correctors, const CutoffPair& cutoffs,
                    const std::vector<double>& hx, const std::vector<double>& hy);

struct VarianceFit {
    double exponent = 0.0;   // slope of ln std(H) against ln eps
    double intercept = 0.0;
    double r_squared = 0.0;
    bool zero_variance = false;  // some eps had identical samples; fit skipped
    int n_samples = 0;           // per epsilon
    std::vector<double> epsilons;
    std::vector<double> std_per_eps;
    std::vector<double> moment4_per_eps;  // centered 4th-root moments; empty below 64 samples
    BootstrapCI exponent_ci;
};

/**
 * Least-squares fit of the standard-deviation scaling across epsilon.
 * Needs >= 3 epsilon values and >= 16 samples for each (all equal counts);
 * the empirical mean is removed before moments.  The exponent CI is a
 * percentile bootstrap over samples, resampled per epsilon.
 */
VarianceFit variance_scaling(const std::vector<std::vector<double>>& h_samples,
                             const std::vector<double>& epsilons, int n_boot = 256,
                             uint64_t seed = 17);

/** CSV rows: epsilon,sample,H. */
void export_fluctuation_csv(const std::vector<FluctuationSample>& samples,
                            const std::string& path);

/** JSON report: exponent, CI bounds, r_squared, n per epsilon, stds. */
void export_variance_fit_json(const VarianceFit& fit, const std::string& path);

}  // namespace homlab
