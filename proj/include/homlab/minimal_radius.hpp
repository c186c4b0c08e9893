#pragma once

// Minimal radius chi_* of a corrector sample, its 1/L-Lipschitz
// regularization, the envelope statistic X_R, and empirical moment reports.
//
// All radii and Lipschitz constants in this module are measured in CELLS of
// the corrector torus; consumers convert to physical units with the grid
// spacing of the torus the correctors were solved on.  chi_*(x) is the
// smallest dyadic l such that
//   (1/R)^{1/(gamma p')} [ (avg_{B_2R} |(phi,sigma)-(phi,sigma)_{2R}|^{2p})^{1/p}
//                        + (avg_{B_2R} |grad phi|^{2p})^{1/p} ] <= theta
// for every dyadic R in [l, R_max], maximized with the floor theta^{-p}.
// The corollary variant multiplies by the envelope X_R and adds 1 inside
// the bracket, with the exponent reduced by kappa.

#include <cstdint>
#include <vector>

#include "homlab/correctors.hpp"
#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace homlab {

struct MinRadParams {
    double theta = 0.25;
    int p = 2;
    // Conjugate-pair bookkeeping: gamma' is kept as a knob close to 1 (its
    // conjugate gamma = gamma'/(gamma'-1) is large); for symmetric scalar
    // coefficients gamma = 1 is admissible and is the default.
    double gamma_prime = 1.05;
    bool symmetric_gamma = true;
    double kappa = 0.25;     // corollary variant only; must stay < exponent()
    double L = 8.0;          // Lipschitz constant, cells
    std::vector<int> radii;  // dyadic scan radii, cells

    double gamma() const { return symmetric_gamma ? 1.0 : gamma_prime / (gamma_prime - 1.0); }
    double p_prime() const { return static_cast<double>(p) / (p - 1.0); }
    double exponent() const { return 1.0 / (gamma() * p_prime()); }
    double floor() const { return std::pow(theta, -static_cast<double>(p)); }
    void validate() const;
};

// {1, 2, 4, ..., largest power of two <= r_max}.
std::vector<int> dyadic_radii(int r_max);

// L = max{R0, d-1, 8} with the domain scale R0 expressed in cells.
double lipschitz_constant(double r0_cells);

struct ChiStarResult {
    double chi = 0.0;
    bool saturated = false;
};

// Minimal radius at the anchor cell (ax, ay) of a corrector torus; radii
// must satisfy R_max <= n/4.
ChiStarResult chi_star(const Grid& grid, const CorrectorSet& set, int ax, int ay,
                       const MinRadParams& params);

// Corollary variant: the scan quantity is
//   (1/R)^{exponent - kappa} * X_R(x) * [ bracket + 1 ]
// where X_R is computed from a per-cell field of plain chi_* values.
ChiStarResult chi_star_corollary(const Grid& grid, const CorrectorSet& set,
                                 int ax, int ay, const MinRadParams& params,
                                 const std::vector<double>& chi_plain);

// Exact inf-convolution with the cone |.|/L over seed points (torus metric
// in cells), evaluated at every cell of the grid: the largest 1/L-Lipschitz
// function below the seeded values.  Seeds may be a sparse anchor set or
// every cell.
std::vector<double> lipschitz_regularize(const Grid& grid,
                                         const std::vector<int>& seed_x,
                                         const std::vector<int>& seed_y,
                                         const std::vector<double>& chi,
                                         double L);

// X_R(x0) = R^{-kappa} * max over cells within the (torus) ball B_R(x0) of
// |chi|; R in cells.
double envelope_X(const Grid& grid, const std::vector<double>& chi, double R,
                  int cx0, int cy0, double kappa);

// Minimal radius field of one corrector sample on an anchor sublattice of
// stride cells, with the dense Lipschitz regularization.
struct MinimalRadiusField {
    MinRadParams params;
    std::vector<int> anchor_x, anchor_y;  // cells
    std::vector<double> chi;              // per anchor
    std::vector<double> regularized;      // per cell
    int saturated_count = 0;
};

MinimalRadiusField minimal_radius_field(const Grid& grid, const CorrectorSet& set,
                                        const MinRadParams& params, int stride);

// Empirical beta-th moments of pooled chi values with percentile bootstrap
// confidence intervals; samples are resampled as whole blocks (the unit of
// statistical independence).  Requires >= 8 samples of >= 16 anchors each.
struct MomentEntry {
    double beta = 0.0;
    double moment = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

std::vector<MomentEntry> moment_report(
    const std::vector<std::vector<double>>& chi_samples,
    const std::vector<double>& betas, int n_boot = 400, uint64_t seed = 0);

// Stability across grid sizes: true when every common-beta pair of moments
// differs by at most twice the larger bootstrap half-width.
bool moments_stable(const std::vector<MomentEntry>& a,
                    const std::vector<MomentEntry>& b);

// Per-anchor CSV rows "x,y,chi,chi_regularized" (regularized sampled at the
// anchor cells).
void export_chi_csv(const Grid& grid, const MinimalRadiusField& field,
                    const std::string& path);

}  // namespace homlab
