#pragma once

#include <string>
#include <vector>

#include "homlab/correctors.hpp"
#include "homlab/fem.hpp"
#include "homlab/grid.hpp"

namespace homlab {

/**
 * Boundary cut-off pair built as linear ramps of the exact distance field:
 *   eta  = clamp((delta - 3 eps)/eps, 0, 1)   (0 on O_{3eps}, 1 off O_{4eps})
 *   eta~ = clamp((delta - 7 eps)/eps, 0, 1)   (0 on O_{7eps}, 1 off O_{8eps})
 * so that (1 - eta) * eta~ = 0 everywhere. Ramps are exact, and their
 * discrete gradients inherit the 1/eps Lipschitz bound from delta.
 */
struct CutoffPair {
    double epsilon = 0.0;
    std::vector<double> eta;        // per cell, in [0,1], zero outside the domain
    std::vector<double> eta_tilde;  // per cell, in [0,1], zero outside the domain
    double grad_bound = 0.0;        // max discrete |grad eta| (1/length)
};

/** Throws config_error unless 8 eps < r0/2 (ramps need room inside the domain). */
CutoffPair make_cutoffs(const DomainMask& mask, double epsilon);

/**
 * Degenerate fallback for epsilon too coarse for make_cutoffs: both ramps
 * identically zero, which annihilates the corrector term of the expansion.
 */
CutoffPair zero_cutoffs(const DomainMask& mask, double epsilon);

/**
 * f(x/eps): periodic wrap of the unit-cell field plus bilinear interpolation
 * between cell centers, sampled at the target grid's cell centers.
 * Preconditions: target.extent / (eps * unit.extent) is a power of two
 * (the rescaled torus tiles the target exactly) and the target resolves the
 * rescaled micro cells, target.h() <= eps * unit.h().
 */
std::vector<double> rescale_field(const Grid& unit, const std::vector<double>& cell_field,
                                  double epsilon, const Grid& target);

/**
 * Correctors pulled to the target grid at scale eps:
 *   phi[i]  = phi_i(x/eps)            so the expansion term is eps * phi[i]
 *   grad[i] = (grad phi_i)(x/eps)     which equals grad(eps * phi_i(x/eps))
 * by the chain rule.
 */
struct ScaledCorrectors {
    double epsilon = 0.0;
    std::vector<double> phi[2];
    CellGradient grad[2];
};

ScaledCorrectors rescale_correctors(const Grid& unit, const CorrectorSet& set,
                                    double epsilon, const Grid& target);

/**
 * Wrap correctors that were solved directly on the target grid with micro
 * structure already at scale eps (a scale-resolved sample): the solved field
 * is eps * phi(x/eps) itself, so phi[i] = phi_solved / eps and grad[i] is the
 * solved gradient unchanged.
 */
ScaledCorrectors scaled_correctors_from_fields(const Grid& target, double epsilon,
                                               const std::vector<double>& phi1,
                                               const std::vector<double>& phi2,
                                               const CellGradient& g1,
                                               const CellGradient& g2);

/**
 * Variable-radius smoothing: at each cell center x the field is averaged
 * against the polynomial bump zeta(y) ~ (1 - 4|y|^2)^3 supported on |y| < 1/2,
 * dilated to radius r(x) = eps * chi(x) (support radius r/2) and normalized
 * discretely to unit mass. chi is the regularized minimal-radius field mapped
 * to macroscopic length units at x/eps. Torus fields wrap; masked fields are
 * zero-extended. Throws degenerate_kernel_error when r/2 < 2h.
 */
std::vector<double> smoothing_apply(const Grid& grid, const std::vector<double>& f,
                                    const std::vector<double>& chi_macro, double epsilon,
                                    const DomainMask* mask = nullptr);

/**
 * Two-scale expansion error z = u_eps - u_bar - eps phi_i(./eps) m_i with the
 * multiplier m_i = eta * d_i u_bar (optionally smoothed). The gradient is
 * assembled by the product rule rather than by differencing z.
 */
struct ExpansionError {
    std::vector<double> z;  // nodal
    CellGradient grad_z;    // per cell, product-rule assembly
    double l2 = 0.0;        // cell-averaged L2 of z over inside cells
    double h1 = 0.0;        // L2 of grad_z over inside cells
    double epsilon = 0.0;
    int sample_index = -1;
};

ExpansionError expansion_error(const DomainMask& mask, const std::vector<double>& u_eps,
                               const std::vector<double>& u_bar,
                               const ScaledCorrectors& correctors, const CutoffPair& cutoffs,
                               int sample_index = -1,
                               const std::vector<double>* smoothing_chi = nullptr);

/**
 * Boundary-layer diagnostics of the effective solution:
 *   layer            = || grad u_bar ||_{L2(O_{4 eps})}
 *   colayer          = || grad^2 u_bar * delta^{1/2} ||_{L2(domain \ O_eps)}
 *   layer_weighted   = ( int_{O_eps} |grad u_bar|^{2s'} )^{1/(2s')}
 *   colayer_weighted = ( int_{domain \ O_eps} |grad^2 u_bar|^{2s'} delta^{2s'-1} )^{1/(2s')}
 * with s' = s/(s-1). Second derivatives come from one-sided differences of
 * the Q1 gradient field, evaluated only off the eps-layer.
 */
struct LayerNorms {
    double layer = 0.0;
    double colayer = 0.0;
    double layer_weighted = 0.0;
    double colayer_weighted = 0.0;
};

LayerNorms layer_colayer_norms(const DomainMask& mask, const std::vector<double>& u_bar,
                               double epsilon, double s = 2.0);

}  // namespace homlab
