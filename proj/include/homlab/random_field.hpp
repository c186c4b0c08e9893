#pragma once

#include <string>
#include <vector>

#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace homlab {

enum class Covariance { gaussian_bump, truncated_exponential };

/**
 * Stationary log-type Gaussian ensemble. Covariance kinds:
 *   gaussian-bump          c(v) = exp(-|v|^2 / corr_len^2)
 *   truncated-exponential  c(v) = exp(-|v| / corr_len) for |v| <= 5 corr_len, else 0
 * Sampling is exact on the torus via circulant embedding; the per-sample
 * stream is derived from (master_seed, sample_index) only.
 */
struct EnsembleSpec {
    double lambda = 0.25;
    double corr_len = 0.05;
    Covariance covariance = Covariance::gaussian_bump;
    uint64_t master_seed = 1;
    int n_samples = 8;
};

/** Validates invariants that experiments rely on (lambda in (0,1), corr_len >= 2h). */
void validate_spec(const EnsembleSpec& spec, const Grid& grid);

/** Periodized covariance row c(offset) on the torus, cell layout. */
std::vector<double> covariance_row(const Grid& grid, const EnsembleSpec& spec);

/**
 * One mean-zero unit-variance Gaussian field on the grid's periodic
 * super-torus. Throws embedding_error when clipped negative spectral mass
 * exceeds 1% of the total. corr_len resolvability is the caller's contract
 * (experiments go through validate_spec).
 */
std::vector<double> sample_gaussian(const Grid& grid, const EnsembleSpec& spec, int sample_index);

/** a = lambda + (1/lambda - lambda) * Phi(g); Phi the standard normal CDF. */
std::vector<double> to_coefficient(const std::vector<double>& g, double lambda);

std::vector<double> sample_coefficient(const Grid& grid, const EnsembleSpec& spec, int sample_index);

/** Two-phase i.i.d. fixture: each cell alpha or beta with probability 1/2. */
// Replicate each coarse cell into a factor x factor block of fine cells
// (fine side = n_coarse * factor), so a coarse microstructure can be solved
// on a finer grid that resolves it.
std::vector<double> block_refine(const std::vector<double>& coarse, int n_coarse,
                                 int factor);

std::vector<double> checkerboard(const Grid& grid, double alpha, double beta, uint64_t master_seed,
                                 int sample_index);

/**
 * Deterministic layered fixture: horizontal stripes of height stripe_cells
 * alternating alpha/beta, periodic in y (n must be divisible by
 * 2*stripe_cells).  Closed-form effective tensor: arithmetic mean along the
 * stripes (a11), harmonic mean across them (a22), zero off-diagonal.
 */
std::vector<double> laminate(const Grid& grid, double alpha, double beta, int stripe_cells);

void export_field_csv(const Grid& grid, const std::vector<double>& a, const std::string& path);

}  // namespace homlab
