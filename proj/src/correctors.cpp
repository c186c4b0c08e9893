#include "homlab/correctors.hpp"

#include <cmath>

namespace homlab {

std::vector<double> node_to_cell(const Grid& grid, const std::vector<double>& u) {
    if (u.size() != static_cast<size_t>(grid.nodes()))
        throw config_error("node_to_cell: nodal field size does not match the grid");
    const int n = grid.n;
    const bool torus = grid.topology == Topology::periodic_torus;
    const int nps = grid.nodes_per_side();
    std::vector<double> c(grid.cells());
    for (int cy = 0; cy < n; ++cy) {
        const int y1 = torus ? grid.wrap(cy + 1) : cy + 1;
        for (int cx = 0; cx < n; ++cx) {
            const int x1 = torus ? grid.wrap(cx + 1) : cx + 1;
            c[grid.cell_index(cx, cy)] =
                0.25 * (u[static_cast<size_t>(cy) * nps + cx] +
                        u[static_cast<size_t>(cy) * nps + x1] +
                        u[static_cast<size_t>(y1) * nps + cx] +
                        u[static_cast<size_t>(y1) * nps + x1]);
        }
    }
    return c;
}

std::pair<std::vector<double>, SolveReport> solve_corrector(
    const Grid& grid, const std::vector<double>& a, int i) {
    if (grid.topology != Topology::periodic_torus)
        throw config_error("solve_corrector: corrector problems live on tori");
    if (i != 0 && i != 1) throw config_error("solve_corrector: direction must be 0 or 1");
    const auto sys = assemble(grid, a, Constraint::periodic_mean_zero);
    std::vector<double> zero(grid.cells(), 0.0);
    return i == 0 ? solve_div_f(sys, a, zero) : solve_div_f(sys, zero, a);
}

Mat2 effective_tensor(const Grid& grid, const std::vector<double>& a,
                      const std::array<CellGradient, 2>& grad_phi,
                      double lambda) {
    if (!(lambda > 0.0) || !(lambda < 1.0))
        throw config_error("effective_tensor: lambda must lie in (0,1)");
    const int cells = grid.cells();
    double col[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // col[i] = a_eff e_i
    for (int i = 0; i < 2; ++i) {
        const auto& g = grad_phi[i];
        for (int c = 0; c < cells; ++c) {
            col[i][0] += a[c] * (g.gx[c] + (i == 0 ? 1.0 : 0.0));
            col[i][1] += a[c] * (g.gy[c] + (i == 1 ? 1.0 : 0.0));
        }
        col[i][0] /= cells;
        col[i][1] /= cells;
    }
    Mat2 ae;
    ae.a11 = col[0][0];
    ae.a22 = col[1][1];
    ae.a12 = 0.5 * (col[0][1] + col[1][0]);
    const double xi[3][2] = {{1.0, 0.0}, {0.0, 1.0}, {M_SQRT1_2, M_SQRT1_2}};
    for (const auto& x : xi) {
        const double q = ae.quadratic(x[0], x[1]);
        if (q < lambda * (1.0 - 1e-9) || q > (1.0 + 1e-9) / lambda)
            throw solver_error(
                "effective_tensor: spectrum left the ellipticity interval "
                "(solver or sampling bug)");
    }
    return ae;
}

std::pair<std::vector<double>, SolveReport> solve_flux_corrector(
    const Grid& grid, const CellGradient& q) {
    if (grid.topology != Topology::periodic_torus)
        throw config_error("solve_flux_corrector: expects a periodic torus");
    const std::vector<double> ones(grid.cells(), 1.0);
    const auto sys = assemble(grid, ones, Constraint::periodic_mean_zero);
    std::vector<double> f1(q.gy), f2(q.gx);
    for (double& v : f2) v = -v;
    return solve_div_f(sys, f1, f2);
}

CorrectorSet solve_corrector_set(const Grid& grid, const std::vector<double>& a,
                                 double lambda) {
    CorrectorSet set;
    set.cell_size = grid.extent;
    for (int i = 0; i < 2; ++i) {
        auto [phi, rep] = solve_corrector(grid, a, i);
        set.phi[i] = std::move(phi);
        set.phi_report[i] = rep;
        set.phi_cell[i] = node_to_cell(grid, set.phi[i]);
        set.grad_phi[i] = gradient(grid, set.phi[i]);
    }
    set.a_eff = effective_tensor(grid, a, set.grad_phi, lambda);

    const int cells = grid.cells();
    for (int i = 0; i < 2; ++i) {
        const double e[2] = {i == 0 ? 1.0 : 0.0, i == 1 ? 1.0 : 0.0};
        const double ae[2] = {set.a_eff.a11 * e[0] + set.a_eff.a12 * e[1],
                              set.a_eff.a12 * e[0] + set.a_eff.a22 * e[1]};
        auto& q = set.flux[i];
        q.gx.resize(cells);
        q.gy.resize(cells);
        for (int c = 0; c < cells; ++c) {
            q.gx[c] = a[c] * (set.grad_phi[i].gx[c] + e[0]) - ae[0];
            q.gy[c] = a[c] * (set.grad_phi[i].gy[c] + e[1]) - ae[1];
        }

        auto [sg, rep] = solve_flux_corrector(grid, q);
        set.sigma[i] = std::move(sg);
        set.sigma_report[i] = rep;
        set.sigma_cell[i] = node_to_cell(grid, set.sigma[i]);
        const auto gs = gradient(grid, set.sigma[i]);
        auto& ds = set.div_sigma[i];
        ds.gx.resize(cells);
        ds.gy.resize(cells);
        double num = 0.0, den = 0.0, ref = 0.0;
        for (int c = 0; c < cells; ++c) {
            ds.gx[c] = gs.gy[c];
            ds.gy[c] = -gs.gx[c];
            const double dx = ds.gx[c] - q.gx[c];
            const double dy = ds.gy[c] - q.gy[c];
            num += dx * dx + dy * dy;
            den += q.gx[c] * q.gx[c] + q.gy[c] * q.gy[c];
            const double tx = a[c] * (set.grad_phi[i].gx[c] + e[0]);
            const double ty = a[c] * (set.grad_phi[i].gy[c] + e[1]);
            ref += tx * tx + ty * ty;
        }
        // A flux at rounding level below the raw flux scale means q = 0
        // analytically; the ratio would only compare noise with noise.
        set.sigma_residual[i] = den > 1e-24 * ref ? std::sqrt(num / den) : 0.0;
    }
    return set;
}

std::vector<SublinearityPoint> sublinearity_profile(
    const Grid& grid, const std::vector<const CorrectorSet*>& sets,
    const std::vector<double>& radii, int p) {
    if (grid.topology != Topology::periodic_torus)
        throw config_error("sublinearity_profile: expects a periodic torus");
    if (sets.empty()) throw config_error("sublinearity_profile: no samples");
    if (p < 1) throw config_error("sublinearity_profile: p must be >= 1");
    for (double r : radii)
        if (!(r > 0.0) || r > 0.25 * grid.extent)
            throw config_error(
                "sublinearity_profile: radii must lie in (0, cell_size/4] "
                "to avoid periodicity contamination");

    const int n = grid.n;
    const double h = grid.h();
    const int cx0 = n / 2, cy0 = n / 2;
    std::vector<SublinearityPoint> out(radii.size());
    for (size_t k = 0; k < radii.size(); ++k) {
        out[k].radius = radii[k];
        const int rc = static_cast<int>(std::floor(2.0 * radii[k] / h + 1e-12));
        const int ri = static_cast<int>(std::llround(radii[k] / h));
        double osc = 0.0, inc = 0.0;
        for (const CorrectorSet* s : sets) {
            // Ball B_{2R} around the midpoint: mean of each component first,
            // then the 2p-th moment of the joint deviation.
            const double r2 = static_cast<double>(rc) * rc * (1.0 + 1e-12);
            double mean[4] = {0.0, 0.0, 0.0, 0.0};
            int count = 0;
            const std::vector<double>* comp[4] = {&s->phi_cell[0], &s->phi_cell[1],
                                                  &s->sigma_cell[0], &s->sigma_cell[1]};
            for (int dy = -rc; dy <= rc; ++dy)
                for (int dx = -rc; dx <= rc; ++dx) {
                    if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > r2)
                        continue;
                    const int ci = grid.cell_index(grid.wrap(cx0 + dx), grid.wrap(cy0 + dy));
                    for (int m = 0; m < 4; ++m) mean[m] += (*comp[m])[ci];
                    ++count;
                }
            for (double& m : mean) m /= count;
            double acc = 0.0;
            for (int dy = -rc; dy <= rc; ++dy)
                for (int dx = -rc; dx <= rc; ++dx) {
                    if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > r2)
                        continue;
                    const int ci = grid.cell_index(grid.wrap(cx0 + dx), grid.wrap(cy0 + dy));
                    double dev2 = 0.0;
                    for (int m = 0; m < 4; ++m) {
                        const double d = (*comp[m])[ci] - mean[m];
                        dev2 += d * d;
                    }
                    acc += std::pow(dev2, p);
                }
            osc += acc / count;

            // Stationarity lets the ensemble average be estimated jointly
            // with a spatial average over all base points.
            double d2 = 0.0;
            for (int cy = 0; cy < n; ++cy)
                for (int cx = 0; cx < n; ++cx) {
                    const int c0 = grid.cell_index(cx, cy);
                    const int c1 = grid.cell_index(grid.wrap(cx + ri), cy);
                    for (int i = 0; i < 2; ++i) {
                        const double d = s->phi_cell[i][c1] - s->phi_cell[i][c0];
                        d2 += d * d;
                    }
                }
            inc += d2 / grid.cells();
        }
        out[k].oscillation_moment = osc / sets.size();
        out[k].increment_moment = std::sqrt(inc / sets.size());
    }
    return out;
}

}  // namespace homlab
