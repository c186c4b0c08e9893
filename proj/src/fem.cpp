#include "homlab/fem.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace homlab {
namespace {

// Local corner offsets within one cell, order (0,0), (1,0), (1,1), (0,1).
constexpr int kCornerX[4] = {0, 1, 1, 0};
constexpr int kCornerY[4] = {0, 0, 1, 1};

int stencil_slot(int dx, int dy) { return (dy + 1) * 3 + (dx + 1); }

int wrap(int i, int n) {
    i %= n;
    return i < 0 ? i + n : i;
}

void project_mean_zero(std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double& x : v) x -= mean;
}

}  // namespace

std::array<std::array<double, 4>, 4> element_stiffness() {
    // Exact 2x2 Gauss quadrature of grad N_i . grad N_j on a square cell;
    // the mesh size cancels in two dimensions.
    return {{{2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0},
             {-1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0},
             {-1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0, -1.0 / 6.0},
             {-1.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, 2.0 / 3.0}}};
}

void LinearSystem::apply(const std::vector<double>& u,
                         std::vector<double>& out) const {
    const int m = nodes_per_side;
    out.assign(u.size(), 0.0);
    const bool torus = grid.topology == Topology::periodic_torus;
    for (int iy = 0; iy < m; ++iy) {
        for (int ix = 0; ix < m; ++ix) {
            const int i = node_index(ix, iy);
            if (!free_node[i]) {
                out[i] = u[i];
                continue;
            }
            const double* row = &stencil[static_cast<size_t>(i) * 9];
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const double w = row[stencil_slot(dx, dy)];
                    if (w == 0.0) continue;
                    int jx = ix + dx;
                    int jy = iy + dy;
                    if (torus) {
                        jx = wrap(jx, m);
                        jy = wrap(jy, m);
                    } else if (jx < 0 || jy < 0 || jx >= m || jy >= m) {
                        continue;
                    }
                    acc += w * u[node_index(jx, jy)];
                }
            }
            out[i] = acc;
        }
    }
}

std::vector<double> LinearSystem::diagonal() const {
    std::vector<double> d(node_count(), 1.0);
    for (int i = 0; i < node_count(); ++i)
        if (free_node[i]) d[i] = stencil[static_cast<size_t>(i) * 9 + 4];
    return d;
}

namespace {

LinearSystem init_system(const Grid& grid, Constraint constraint, const DomainMask* mask,
                         const char* who) {
    const bool torus = grid.topology == Topology::periodic_torus;
    if (torus && constraint != Constraint::periodic_mean_zero)
        throw config_error(std::string(who) + ": tori require the periodic mean-zero constraint");
    if (!torus && constraint != Constraint::dirichlet_zero)
        throw config_error(std::string(who) + ": masked domains require the Dirichlet constraint");
    if (!torus && mask == nullptr)
        throw config_error(std::string(who) + ": masked domains require a domain mask");
    if (torus && mask != nullptr)
        throw config_error(std::string(who) + ": tori do not take a domain mask");

    LinearSystem sys;
    sys.grid = grid;
    sys.constraint = constraint;
    sys.nodes_per_side = torus ? grid.n : grid.n + 1;
    sys.stencil.assign(static_cast<size_t>(sys.node_count()) * 9, 0.0);
    sys.free_node.assign(sys.node_count(), 0);

    if (torus) {
        std::fill(sys.free_node.begin(), sys.free_node.end(), 1);
    } else {
        sys.inside_cell = mask->inside;
        // A node is an unknown only when all four surrounding cells lie in
        // the domain; every other node carries the zero Dirichlet value.
        for (int iy = 1; iy < grid.n; ++iy) {
            for (int ix = 1; ix < grid.n; ++ix) {
                const bool interior =
                    mask->inside[grid.cell_index(ix - 1, iy - 1)] &&
                    mask->inside[grid.cell_index(ix, iy - 1)] &&
                    mask->inside[grid.cell_index(ix - 1, iy)] &&
                    mask->inside[grid.cell_index(ix, iy)];
                if (interior) sys.free_node[sys.node_index(ix, iy)] = 1;
            }
        }
    }
    return sys;
}

// Scatter one element matrix into the stencil rows of its four corner nodes.
void scatter_element(LinearSystem& sys, int cx, int cy,
                     const std::array<std::array<double, 4>, 4>& Ke) {
    const bool torus = sys.grid.topology == Topology::periodic_torus;
    const int m = sys.nodes_per_side;
    int gn[4];
    for (int c = 0; c < 4; ++c) {
        int nx = cx + kCornerX[c];
        int ny = cy + kCornerY[c];
        if (torus) {
            nx = wrap(nx, m);
            ny = wrap(ny, m);
        }
        gn[c] = sys.node_index(nx, ny);
    }
    for (int r = 0; r < 4; ++r) {
        if (!sys.free_node[gn[r]]) continue;
        for (int c = 0; c < 4; ++c) {
            if (!sys.free_node[gn[c]]) continue;  // pinned columns carry zero
            const int dx = kCornerX[c] - kCornerX[r];
            const int dy = kCornerY[c] - kCornerY[r];
            sys.stencil[static_cast<size_t>(gn[r]) * 9 + stencil_slot(dx, dy)] += Ke[r][c];
        }
    }
}

}  // namespace

LinearSystem assemble(const Grid& grid, const std::vector<double>& a,
                      Constraint constraint, const DomainMask* mask) {
    if (a.size() != static_cast<size_t>(grid.cells()))
        throw config_error("assemble: coefficient size does not match the grid");
    LinearSystem sys = init_system(grid, constraint, mask, "assemble");
    const auto K = element_stiffness();
    auto Ke = K;
    for (int cy = 0; cy < grid.n; ++cy) {
        for (int cx = 0; cx < grid.n; ++cx) {
            if (!sys.cell_counts(cx, cy)) continue;
            const double ac = a[grid.cell_index(cx, cy)];
            if (!(ac > 0.0))
                throw config_error("assemble: coefficient must be positive on cells in scope");
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) Ke[r][c] = ac * K[r][c];
            scatter_element(sys, cx, cy, Ke);
        }
    }
    return sys;
}

LinearSystem assemble_tensor(const Grid& grid, const Mat2& a, Constraint constraint,
                             const DomainMask* mask) {
    const auto [lo, hi] = a.eigenvalues();
    if (!(lo > 0.0))
        throw config_error("assemble_tensor: tensor must be positive definite");
    LinearSystem sys = init_system(grid, constraint, mask, "assemble_tensor");
    // Exact unit-square integrals of the shape-function derivative products;
    // grad N factorizes, so the mixed matrix is rank one:
    //   Kxy[r][c] = (int dx N_r) (int dy N_c) = Fx[r] * Gy[c].
    static const std::array<std::array<double, 4>, 4> Kxx = {
        {{1.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0, 1.0 / 6.0},
         {-1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, -1.0 / 6.0},
         {-1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, -1.0 / 3.0},
         {1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0, 1.0 / 3.0}}};
    static const std::array<std::array<double, 4>, 4> Kyy = {
        {{1.0 / 3.0, 1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0},
         {1.0 / 6.0, 1.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0},
         {-1.0 / 6.0, -1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0},
         {-1.0 / 3.0, -1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0}}};
    static const std::array<double, 4> Fx = {-0.5, 0.5, 0.5, -0.5};
    static const std::array<double, 4> Gy = {-0.5, -0.5, 0.5, 0.5};
    std::array<std::array<double, 4>, 4> Ke;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            Ke[r][c] = a.a11 * Kxx[r][c] + a.a22 * Kyy[r][c] +
                       a.a12 * (Fx[r] * Gy[c] + Fx[c] * Gy[r]);
    for (int cy = 0; cy < grid.n; ++cy)
        for (int cx = 0; cx < grid.n; ++cx)
            if (sys.cell_counts(cx, cy)) scatter_element(sys, cx, cy, Ke);
    return sys;
}

std::vector<double> load_div(const LinearSystem& system,
                             const std::vector<double>& f1,
                             const std::vector<double>& f2) {
    const Grid& grid = system.grid;
    if (f1.size() != static_cast<size_t>(grid.cells()) || f2.size() != f1.size())
        throw config_error("load_div: field size does not match the grid");
    const bool torus = grid.topology == Topology::periodic_torus;
    const int m = system.nodes_per_side;
    const double h = grid.h();
    std::vector<double> rhs(system.node_count(), 0.0);
    // integral_cell grad N_c = (sx, sy) * h/2 with signs set by the corner.
    static constexpr double kSx[4] = {-1.0, 1.0, 1.0, -1.0};
    static constexpr double kSy[4] = {-1.0, -1.0, 1.0, 1.0};
    for (int cy = 0; cy < grid.n; ++cy) {
        for (int cx = 0; cx < grid.n; ++cx) {
            if (!system.cell_counts(cx, cy)) continue;
            const int ci = grid.cell_index(cx, cy);
            for (int c = 0; c < 4; ++c) {
                int nx = cx + kCornerX[c];
                int ny = cy + kCornerY[c];
                if (torus) {
                    nx = wrap(nx, m);
                    ny = wrap(ny, m);
                }
                const int i = system.node_index(nx, ny);
                if (!system.free_node[i]) continue;
                rhs[i] -= 0.5 * h * (f1[ci] * kSx[c] + f2[ci] * kSy[c]);
            }
        }
    }
    return rhs;
}

std::vector<double> load_scalar(const LinearSystem& system,
                                const std::vector<double>& f) {
    const Grid& grid = system.grid;
    if (f.size() != static_cast<size_t>(grid.cells()))
        throw config_error("load_scalar: field size does not match the grid");
    const bool torus = grid.topology == Topology::periodic_torus;
    const int m = system.nodes_per_side;
    const double q = 0.25 * grid.h() * grid.h();  // integral_cell N_c
    std::vector<double> rhs(system.node_count(), 0.0);
    for (int cy = 0; cy < grid.n; ++cy) {
        for (int cx = 0; cx < grid.n; ++cx) {
            if (!system.cell_counts(cx, cy)) continue;
            const double fc = f[grid.cell_index(cx, cy)];
            for (int c = 0; c < 4; ++c) {
                int nx = cx + kCornerX[c];
                int ny = cy + kCornerY[c];
                if (torus) {
                    nx = wrap(nx, m);
                    ny = wrap(ny, m);
                }
                const int i = system.node_index(nx, ny);
                if (!system.free_node[i]) continue;
                rhs[i] += q * fc;
            }
        }
    }
    return rhs;
}

std::vector<double> load_lift(const LinearSystem& system,
                              const std::vector<double>& a,
                              const std::vector<double>& g) {
    const Grid& grid = system.grid;
    if (system.constraint != Constraint::dirichlet_zero)
        throw config_error("load_lift: only Dirichlet systems take boundary data");
    if (a.size() != static_cast<size_t>(grid.cells()))
        throw config_error("load_lift: coefficient size does not match the grid");
    if (g.size() != static_cast<size_t>(system.node_count()))
        throw config_error("load_lift: data size does not match the node count");
    const auto K = element_stiffness();
    const int m = system.nodes_per_side;
    std::vector<double> rhs(system.node_count(), 0.0);
    for (int cy = 0; cy < grid.n; ++cy) {
        for (int cx = 0; cx < grid.n; ++cx) {
            if (!system.cell_counts(cx, cy)) continue;
            const double ac = a[grid.cell_index(cx, cy)];
            int idx[4];
            for (int c = 0; c < 4; ++c)
                idx[c] = system.node_index(cx + kCornerX[c], cy + kCornerY[c]);
            for (int r = 0; r < 4; ++r) {
                if (!system.free_node[idx[r]]) continue;
                for (int c = 0; c < 4; ++c) {
                    if (system.free_node[idx[c]]) continue;  // free-free lives in the stencil
                    rhs[idx[r]] -= ac * K[r][c] * g[idx[c]];
                }
            }
        }
    }
    return rhs;
}

std::pair<std::vector<double>, SolveReport> solve(const LinearSystem& system,
                                                  const std::vector<double>& rhs,
                                                  double tol, int max_iter) {
    if (rhs.size() != static_cast<size_t>(system.node_count()))
        throw config_error("solve: right-hand side size does not match the system");
    const auto t0 = std::chrono::steady_clock::now();
    const bool mean_zero = system.constraint == Constraint::periodic_mean_zero;
    const int n = system.node_count();

    std::vector<double> b = rhs;
    if (mean_zero) project_mean_zero(b);
    double bnorm = 0.0;
    for (double v : b) bnorm += v * v;
    bnorm = std::sqrt(bnorm);

    SolveReport rep;
    std::vector<double> x(n, 0.0);
    if (bnorm == 0.0) {
        rep.wall_time = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        return {x, rep};
    }

    const std::vector<double> diag = system.diagonal();
    std::vector<double> r = b;
    std::vector<double> z(n), p(n), Ap(n);
    auto precondition = [&](const std::vector<double>& in, std::vector<double>& out) {
        for (int i = 0; i < n; ++i) out[i] = in[i] / diag[i];
        if (mean_zero) project_mean_zero(out);
    };
    precondition(r, z);
    p = z;
    double rz = 0.0;
    for (int i = 0; i < n; ++i) rz += r[i] * z[i];
    double rnorm = bnorm;

    for (int it = 1; it <= max_iter; ++it) {
        system.apply(p, Ap);
        double pAp = 0.0;
        for (int i = 0; i < n; ++i) pAp += p[i] * Ap[i];
        if (!(pAp > 0.0))
            throw solver_failure("solve: conjugate gradients lost positive definiteness", rep);
        const double alpha = rz / pAp;
        for (int i = 0; i < n; ++i) x[i] += alpha * p[i];
        if (mean_zero) project_mean_zero(x);
        if (it % 50 == 0) {
            // Periodic refresh against accumulated recurrence drift.
            system.apply(x, Ap);
            for (int i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
        } else {
            for (int i = 0; i < n; ++i) r[i] -= alpha * Ap[i];
        }
        rnorm = 0.0;
        for (int i = 0; i < n; ++i) rnorm += r[i] * r[i];
        rnorm = std::sqrt(rnorm);
        rep.iterations = it;
        rep.relative_residual = rnorm / bnorm;
        if (rep.relative_residual <= tol) {
            // Accept only a true residual below tolerance.
            system.apply(x, Ap);
            double tr = 0.0;
            for (int i = 0; i < n; ++i) {
                const double ri = b[i] - Ap[i];
                tr += ri * ri;
            }
            rep.relative_residual = std::sqrt(tr) / bnorm;
            if (rep.relative_residual <= tol) {
                rep.wall_time = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - t0)
                                    .count();
                return {x, rep};
            }
            for (int i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
            rnorm = rep.relative_residual * bnorm;
        }
        precondition(r, z);
        double rz_next = 0.0;
        for (int i = 0; i < n; ++i) rz_next += r[i] * z[i];
        const double beta = rz_next / rz;
        rz = rz_next;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    rep.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    throw solver_failure("solve: conjugate gradients did not converge within max_iter", rep);
}

std::pair<std::vector<double>, SolveReport> solve_div_f(
    const LinearSystem& system, const std::vector<double>& f1,
    const std::vector<double>& f2, double tol, int max_iter) {
    return solve(system, load_div(system, f1, f2), tol, max_iter);
}

CellGradient gradient(const Grid& grid, const std::vector<double>& u) {
    const bool torus = grid.topology == Topology::periodic_torus;
    const int m = torus ? grid.n : grid.n + 1;
    if (u.size() != static_cast<size_t>(m) * m)
        throw config_error("gradient: nodal field size does not match the grid");
    CellGradient g;
    g.gx.assign(grid.cells(), 0.0);
    g.gy.assign(grid.cells(), 0.0);
    const double inv2h = 1.0 / (2.0 * grid.h());
    for (int cy = 0; cy < grid.n; ++cy) {
        for (int cx = 0; cx < grid.n; ++cx) {
            const int x1 = torus ? wrap(cx + 1, m) : cx + 1;
            const int y1 = torus ? wrap(cy + 1, m) : cy + 1;
            const double u00 = u[static_cast<size_t>(cy) * m + cx];
            const double u10 = u[static_cast<size_t>(cy) * m + x1];
            const double u01 = u[static_cast<size_t>(y1) * m + cx];
            const double u11 = u[static_cast<size_t>(y1) * m + x1];
            const int ci = grid.cell_index(cx, cy);
            g.gx[ci] = (u10 + u11 - u00 - u01) * inv2h;
            g.gy[ci] = (u01 + u11 - u00 - u10) * inv2h;
        }
    }
    return g;
}

double energy_norm(const Grid& grid, const std::vector<double>& a,
                   const std::vector<double>& gx, const std::vector<double>& gy) {
    if (a.size() != static_cast<size_t>(grid.cells()) || gx.size() != a.size() ||
        gy.size() != a.size())
        throw config_error("energy_norm: field sizes do not match the grid");
    const double h2 = grid.h() * grid.h();
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        acc += a[i] * (gx[i] * gx[i] + gy[i] * gy[i]) * h2;
    return std::sqrt(acc);
}

void export_solution_csv(const Grid& grid, const std::vector<double>& u,
                         const std::string& path) {
    const bool torus = grid.topology == Topology::periodic_torus;
    const int m = torus ? grid.n : grid.n + 1;
    if (u.size() != static_cast<size_t>(m) * m)
        throw config_error("export_solution_csv: nodal field size does not match the grid");
    std::ofstream out(path);
    if (!out) throw config_error("export_solution_csv: cannot open " + path);
    out << "x,y,u\n";
    const double h = grid.h();
    for (int iy = 0; iy < m; ++iy)
        for (int ix = 0; ix < m; ++ix)
            out << format_g17(ix * h) << ',' << format_g17(iy * h) << ','
                << format_g17(u[static_cast<size_t>(iy) * m + ix]) << '\n';
}

}  // namespace homlab
