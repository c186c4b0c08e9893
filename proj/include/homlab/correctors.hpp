#pragma once

// Extended correctors on periodic representative cells.
//
// For each coordinate direction i the corrector phi_i solves
//     div( a (grad phi_i + e_i) ) = 0
// on the torus with the mean-zero gauge, the effective tensor is
//     a_eff e_i = < a (grad phi_i + e_i) >,
// the flux is q_i = a (grad phi_i + e_i) - a_eff e_i, and the flux corrector
// sigma_i12 solves the constant-coefficient problem
//     -Lap sigma_i12 = d1 q_i2 - d2 q_i1
// (the only independent component in two dimensions; sigma_i21 = -sigma_i12).
// The vector potential property is checked a posteriori: div sigma_i =
// (d2 sigma_i12, -d1 sigma_i12) should reproduce q_i, and the relative L2
// residual of that identity is recorded per direction.

#include <array>
#include <utility>
#include <vector>

#include "homlab/fem.hpp"
#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace homlab {

struct CorrectorSet {
    double cell_size = 0.0;  // torus side length

    // Nodal correctors (mean zero) and their cell-center interpolations.
    std::array<std::vector<double>, 2> phi;
    std::array<std::vector<double>, 2> phi_cell;
    std::array<CellGradient, 2> grad_phi;

    // Fluxes q_i (cell vector fields, mean zero by the definition of a_eff).
    std::array<CellGradient, 2> flux;

    // Flux correctors: only sigma_i12 is stored; sigma_i21 = -sigma_i12.
    std::array<std::vector<double>, 2> sigma;       // nodal, mean zero
    std::array<std::vector<double>, 2> sigma_cell;  // cell-center values
    std::array<CellGradient, 2> div_sigma;          // (d2 sigma, -d1 sigma)
    std::array<double, 2> sigma_residual = {0.0, 0.0};  // rel L2 vs q_i

    Mat2 a_eff;
    std::array<SolveReport, 2> phi_report;
    std::array<SolveReport, 2> sigma_report;
};

// Solve the periodic mean-zero corrector problem in direction i (0 or 1):
// the divergence load with f = a e_i makes e_i + grad phi_i a-harmonic.
std::pair<std::vector<double>, SolveReport> solve_corrector(
    const Grid& grid, const std::vector<double>& a, int i);

// a_eff e_i = cell average of a (grad phi_i + e_i).  The spectrum is checked
// against [lambda, 1/lambda] on e1, e2, and the diagonal direction; a
// violation signals a solver or sampling bug.
Mat2 effective_tensor(const Grid& grid, const std::vector<double>& a,
                      const std::array<CellGradient, 2>& grad_phi,
                      double lambda);

// Solve -Lap sigma = d1 q2 - d2 q1 (periodic mean zero) for one direction's
// flux q = (q1, q2); the right-hand side is the divergence of (q2, -q1).
std::pair<std::vector<double>, SolveReport> solve_flux_corrector(
    const Grid& grid, const CellGradient& q);

// Full pipeline for one coefficient sample.
CorrectorSet solve_corrector_set(const Grid& grid, const std::vector<double>& a,
                                 double lambda);

// Per-radius sublinearity diagnostics of the combined field (phi, sigma),
// ensemble-averaged over corrector sets:
//   oscillation_moment = < avg_{B_2R} |(phi,sigma) - (phi,sigma)_{B_2R}|^{2p} >
//   increment_moment   = < |phi(x0 + R e1) - phi(x0)|^2 >^{1/2}
// with balls centered at the torus midpoint x0.
struct SublinearityPoint {
    double radius = 0.0;
    double oscillation_moment = 0.0;
    double increment_moment = 0.0;
};

std::vector<SublinearityPoint> sublinearity_profile(
    const Grid& grid, const std::vector<const CorrectorSet*>& sets,
    const std::vector<double>& radii, int p = 2);

// Cell-center interpolation of a nodal torus field (average of the four
// corner values).
std::vector<double> node_to_cell(const Grid& grid, const std::vector<double>& u);

}  // namespace homlab
