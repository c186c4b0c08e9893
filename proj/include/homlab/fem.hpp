#pragma once

// Q1 finite elements on the structured grids of grid.hpp.
//
// Discretizes the divergence-form problem
//     -div(a grad u) = div f        (load = -integral f . grad v)
// and its scalar-load variant -div(a grad u) = f, with either homogeneous
// Dirichlet conditions (masked domains: every node touching a cell outside
// the domain is pinned to zero) or periodic boundary conditions with the
// mean-zero normalization (tori).
//
// The coefficient a is constant per cell, so each element matrix is the
// reference Q1 stiffness scaled by the cell value; the reference matrix is
// the exact 2x2 Gauss quadrature of grad N_i . grad N_j and is independent
// of the mesh size in two dimensions.  The assembled operator is stored as
// a 9-point stencil per node instead of a general sparse matrix.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "homlab/grid.hpp"
#include "homlab/util.hpp"

namespace homlab {

enum class Constraint {
    dirichlet_zero,
    periodic_mean_zero,
};

struct SolveReport {
    int iterations = 0;
    double relative_residual = 0.0;
    double wall_time = 0.0;  // seconds
};

// Raised when conjugate gradients fails to reach the tolerance; carries the
// report of the failed solve.
class solver_failure : public solver_error {
  public:
    solver_failure(const std::string& what, SolveReport rep)
        : solver_error(what), report(rep) {}
    SolveReport report;
};

// Reference Q1 element stiffness for unit coefficient, local corner order
// (0,0), (1,0), (1,1), (0,1).
std::array<std::array<double, 4>, 4> element_stiffness();

// Symmetric positive semi-definite nodal operator stored as one 9-point
// stencil per node; entry k = (dy+1)*3 + (dx+1) couples a node to its
// neighbour at offset (dx, dy).  On tori offsets wrap, so for tiny grids
// several stencil slots may address the same physical neighbour; the
// matrix-vector product accumulates them, which reproduces the aliased
// matrix exactly.
class LinearSystem {
  public:
    Grid grid;
    Constraint constraint = Constraint::periodic_mean_zero;
    int nodes_per_side = 0;            // n on tori, n+1 on masked domains
    std::vector<double> stencil;       // node_count() * 9
    std::vector<std::uint8_t> free_node;  // 1 = unknown, 0 = pinned to zero
    std::vector<std::uint8_t> inside_cell;  // empty on tori (all cells count)

    int node_count() const { return nodes_per_side * nodes_per_side; }
    int node_index(int ix, int iy) const { return iy * nodes_per_side + ix; }

    // out = A u; pinned nodes pass through (identity rows).
    void apply(const std::vector<double>& u, std::vector<double>& out) const;
    std::vector<double> diagonal() const;
    bool cell_counts(int cx, int cy) const {
        return inside_cell.empty() || inside_cell[grid.cell_index(cx, cy)] != 0;
    }
};

// Assemble the stiffness operator for piecewise-constant a (one value per
// cell).  For Dirichlet problems a mask is required and only inside cells
// are integrated; for periodic problems the mask must be null.
LinearSystem assemble(const Grid& grid, const std::vector<double>& a,
                      Constraint constraint, const DomainMask* mask = nullptr);

// Assemble the stiffness operator for a constant symmetric positive-definite
// 2x2 tensor (the effective-coefficient problem); same constraint rules as
// assemble.  The element matrix adds the exact mixed-derivative integrals
// weighted by the off-diagonal entry, so anisotropic tensors are discretized
// without splitting into scalar problems.
LinearSystem assemble_tensor(const Grid& grid, const Mat2& a, Constraint constraint,
                             const DomainMask* mask = nullptr);

// Nodal load for the right-hand side div f with f constant per cell:
// rhs_i = -sum_cells f_c . integral_cell grad N_i.  Pinned rows are zero.
std::vector<double> load_div(const LinearSystem& system,
                             const std::vector<double>& f1,
                             const std::vector<double>& f2);

// Nodal load for a scalar right-hand side f constant per cell:
// rhs_i = sum_cells f_c integral_cell N_i.
std::vector<double> load_scalar(const LinearSystem& system,
                                const std::vector<double>& f);

// Inhomogeneous Dirichlet data by lifting: with g holding boundary values on
// pinned nodes (zero elsewhere), returns -K g restricted to free rows, so the
// full solution is g + solve(system, rhs).  Dirichlet systems only.
std::vector<double> load_lift(const LinearSystem& system,
                              const std::vector<double>& a,
                              const std::vector<double>& g);

// Diagonally preconditioned conjugate gradients down to
// ||b - A u|| <= tol * ||b||; for the mean-zero constraint the iterate is
// projected onto mean-zero every step.  Throws solver_failure when max_iter
// is exhausted first.
std::pair<std::vector<double>, SolveReport> solve(
    const LinearSystem& system, const std::vector<double>& rhs,
    double tol = 1e-9, int max_iter = 100000);

// Convenience composition: build the divergence load for f and solve.
std::pair<std::vector<double>, SolveReport> solve_div_f(
    const LinearSystem& system, const std::vector<double>& f1,
    const std::vector<double>& f2, double tol = 1e-9, int max_iter = 100000);

// Q1 gradient of a nodal field evaluated at cell centers; returns one value
// per cell for each component.
struct CellGradient {
    std::vector<double> gx;
    std::vector<double> gy;
};
CellGradient gradient(const Grid& grid, const std::vector<double>& u);

// (sum_cells a |v|^2 h^2)^{1/2} over cell-center values of a gradient field.
double energy_norm(const Grid& grid, const std::vector<double>& a,
                   const std::vector<double>& gx, const std::vector<double>& gy);

// Nodal solution as CSV rows "x,y,u".
void export_solution_csv(const Grid& grid, const std::vector<double>& u,
                         const std::string& path);

}  // namespace homlab
