#include "homlab/two_scale.hpp"

#include <algorithm>
#include <cmath>

namespace homlab {
namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Bilinear interpolation of cell-centered periodic data at a physical point.
double sample_periodic(const Grid& g, const std::vector<double>& f, double px, double py) {
    const double h = g.h();
    const double fx = px / h - 0.5, fy = py / h - 0.5;
    const int ix = static_cast<int>(std::floor(fx));
    const int iy = static_cast<int>(std::floor(fy));
    const double tx = fx - ix, ty = fy - iy;
    const int x0 = g.wrap(ix), x1 = g.wrap(ix + 1);
    const int y0 = g.wrap(iy), y1 = g.wrap(iy + 1);
    return (1.0 - tx) * (1.0 - ty) * f[g.cell_index(x0, y0)] +
           tx * (1.0 - ty) * f[g.cell_index(x1, y0)] +
           (1.0 - tx) * ty * f[g.cell_index(x0, y1)] +
           tx * ty * f[g.cell_index(x1, y1)];
}

void check_rescale(const Grid& unit, double epsilon, const Grid& target) {
    if (!(epsilon > 0.0)) throw config_error("rescale_field: epsilon must be positive");
    const double ratio = target.extent / (epsilon * unit.extent);
    const double k = std::round(std::log2(ratio));
    if (k < 0.0 || std::abs(ratio - std::exp2(k)) > 1e-9 * ratio)
        throw config_error(
            "rescale_field: epsilon must tile the target (extent ratio a power of two)");
    if (target.h() > epsilon * unit.h() * (1.0 + 1e-12))
        throw config_error(
            "rescale_field: target grid too coarse to resolve the rescaled micro cells");
}

// Central difference of a cell field, one-sided at the grid edge. Fields fed
// here vanish near the boundary (cut-off), so the edge choice is immaterial.
CellGradient cell_fd_gradient(const Grid& g, const std::vector<double>& f) {
    const int n = g.n;
    const double h = g.h();
    CellGradient out;
    out.gx.assign(g.cells(), 0.0);
    out.gy.assign(g.cells(), 0.0);
    auto fd = [&](int cx, int cy, int dx, int dy) {
        const int fx = cx + dx, fy = cy + dy;
        const int bx = cx - dx, by = cy - dy;
        const bool fok = fx >= 0 && fx < n && fy >= 0 && fy < n;
        const bool bok = bx >= 0 && bx < n && by >= 0 && by < n;
        const double vc = f[g.cell_index(cx, cy)];
        if (fok && bok)
            return (f[g.cell_index(fx, fy)] - f[g.cell_index(bx, by)]) / (2.0 * h);
        if (fok) return (f[g.cell_index(fx, fy)] - vc) / h;
        if (bok) return (vc - f[g.cell_index(bx, by)]) / h;
        return 0.0;
    };
    for (int cy = 0; cy < n; ++cy)
        for (int cx = 0; cx < n; ++cx) {
            const int c = g.cell_index(cx, cy);
            out.gx[c] = fd(cx, cy, 1, 0);
            out.gy[c] = fd(cx, cy, 0, 1);
        }
    return out;
}

}  // namespace

CutoffPair make_cutoffs(const DomainMask& mask, double epsilon) {
    if (!(epsilon > 0.0)) throw config_error("make_cutoffs: epsilon must be positive");
    if (!(8.0 * epsilon < 0.5 * mask.r0))
        throw config_error("make_cutoffs: epsilon too large for the domain (needs 8 eps < r0/2)");
    const Grid& g = mask.grid;
    CutoffPair cut;
    cut.epsilon = epsilon;
    cut.eta.assign(g.cells(), 0.0);
    cut.eta_tilde.assign(g.cells(), 0.0);
    for (int c = 0; c < g.cells(); ++c) {
        if (!mask.inside[c]) continue;
        const double d = mask.delta[c];
        cut.eta[c] = clamp01((d - 3.0 * epsilon) / epsilon);
        cut.eta_tilde[c] = clamp01((d - 7.0 * epsilon) / epsilon);
    }
    const double h = g.h();
    double gb = 0.0;
    for (int cy = 0; cy < g.n; ++cy)
        for (int cx = 0; cx < g.n; ++cx) {
            const int c = g.cell_index(cx, cy);
            if (!mask.inside[c]) continue;
            if (cx + 1 < g.n && mask.inside[g.cell_index(cx + 1, cy)])
                gb = std::max(gb, std::abs(cut.eta[g.cell_index(cx + 1, cy)] - cut.eta[c]) / h);
            if (cy + 1 < g.n && mask.inside[g.cell_index(cx, cy + 1)])
                gb = std::max(gb, std::abs(cut.eta[g.cell_index(cx, cy + 1)] - cut.eta[c]) / h);
        }
    cut.grad_bound = gb;
    return cut;
}

CutoffPair zero_cutoffs(const DomainMask& mask, double epsilon) {
    if (!(epsilon > 0.0)) throw config_error("zero_cutoffs: epsilon must be positive");
    CutoffPair cut;
    cut.epsilon = epsilon;
    cut.eta.assign(mask.grid.cells(), 0.0);
    cut.eta_tilde.assign(mask.grid.cells(), 0.0);
    return cut;
}

std::vector<double> rescale_field(const Grid& unit, const std::vector<double>& cell_field,
                                  double epsilon, const Grid& target) {
    if (cell_field.size() != static_cast<size_t>(unit.cells()))
        throw config_error("rescale_field: field size does not match the unit grid");
    check_rescale(unit, epsilon, target);
    std::vector<double> out(target.cells());
    for (int cy = 0; cy < target.n; ++cy)
        for (int cx = 0; cx < target.n; ++cx) {
            const Vec2 x = target.cell_center(cx, cy);
            const double px = std::fmod(x.x / epsilon, unit.extent);
            const double py = std::fmod(x.y / epsilon, unit.extent);
            out[target.cell_index(cx, cy)] = sample_periodic(unit, cell_field, px, py);
        }
    return out;
}

ScaledCorrectors rescale_correctors(const Grid& unit, const CorrectorSet& set,
                                    double epsilon, const Grid& target) {
    ScaledCorrectors sc;
    sc.epsilon = epsilon;
    for (int i = 0; i < 2; ++i) {
        sc.phi[i] = rescale_field(unit, set.phi_cell[i], epsilon, target);
        sc.grad[i].gx = rescale_field(unit, set.grad_phi[i].gx, epsilon, target);
        sc.grad[i].gy = rescale_field(unit, set.grad_phi[i].gy, epsilon, target);
    }
    return sc;
}

ScaledCorrectors scaled_correctors_from_fields(const Grid& target, double epsilon,
                                               const std::vector<double>& phi1,
                                               const std::vector<double>& phi2,
                                               const CellGradient& g1,
                                               const CellGradient& g2) {
    if (!(epsilon > 0.0))
        throw config_error("scaled_correctors_from_fields: epsilon must be positive");
    const size_t nc = static_cast<size_t>(target.cells());
    if (phi1.size() != nc || phi2.size() != nc || g1.gx.size() != nc || g1.gy.size() != nc ||
        g2.gx.size() != nc || g2.gy.size() != nc)
        throw config_error("scaled_correctors_from_fields: field sizes do not match the grid");
    ScaledCorrectors sc;
    sc.epsilon = epsilon;
    const std::vector<double>* phis[2] = {&phi1, &phi2};
    const CellGradient* grads[2] = {&g1, &g2};
    for (int i = 0; i < 2; ++i) {
        sc.phi[i].resize(nc);
        for (size_t c = 0; c < nc; ++c) sc.phi[i][c] = (*phis[i])[c] / epsilon;
        sc.grad[i] = *grads[i];
    }
    return sc;
}

std::vector<double> smoothing_apply(const Grid& grid, const std::vector<double>& f,
                                    const std::vector<double>& chi_macro, double epsilon,
                                    const DomainMask* mask) {
    if (f.size() != static_cast<size_t>(grid.cells()) || chi_macro.size() != f.size())
        throw config_error("smoothing_apply: field sizes do not match the grid");
    if (!(epsilon > 0.0)) throw config_error("smoothing_apply: epsilon must be positive");
    const bool wrap = grid.topology == Topology::periodic_torus;
    if (!wrap && mask == nullptr)
        throw config_error("smoothing_apply: masked grids need the domain mask");
    const int n = grid.n;
    const double h = grid.h();
    std::vector<double> out(grid.cells(), 0.0);
    for (int cy = 0; cy < n; ++cy)
        for (int cx = 0; cx < n; ++cx) {
            const int c = grid.cell_index(cx, cy);
            if (!wrap && !mask->inside[c]) continue;
            const double r = epsilon * chi_macro[c];
            const double rho = 0.5 * r;  // support radius of the dilated bump
            if (rho < 2.0 * h)
                throw degenerate_kernel_error(
                    "smoothing_apply: kernel radius below 2h, refine the grid");
            const int m = static_cast<int>(std::ceil(rho / h));
            double sw = 0.0, swf = 0.0;
            for (int dy = -m; dy <= m; ++dy)
                for (int dx = -m; dx <= m; ++dx) {
                    const double z2 = (dx * dx + dy * dy) * h * h;
                    if (z2 >= rho * rho) continue;
                    const double t = 1.0 - 4.0 * z2 / (r * r);
                    const double w = t * t * t;
                    double val = 0.0;
                    if (wrap) {
                        val = f[grid.cell_index(grid.wrap(cx + dx), grid.wrap(cy + dy))];
                    } else {
                        const int qx = cx + dx, qy = cy + dy;
                        if (qx >= 0 && qx < n && qy >= 0 && qy < n) {
                            const int q = grid.cell_index(qx, qy);
                            if (mask->inside[q]) val = f[q];  // zero-extended
                        }
                    }
                    sw += w;
                    swf += w * val;
                }
            out[c] = swf / sw;
        }
    return out;
}

ExpansionError expansion_error(const DomainMask& mask, const std::vector<double>& u_eps,
                               const std::vector<double>& u_bar,
                               const ScaledCorrectors& correctors, const CutoffPair& cutoffs,
                               int sample_index, const std::vector<double>* smoothing_chi) {
    const Grid& g = mask.grid;
    const size_t nn = static_cast<size_t>(g.nodes());
    const size_t nc = static_cast<size_t>(g.cells());
    if (u_eps.size() != nn || u_bar.size() != nn)
        throw config_error("expansion_error: nodal field sizes do not match the grid");
    if (cutoffs.eta.size() != nc || correctors.phi[0].size() != nc ||
        correctors.phi[1].size() != nc)
        throw config_error("expansion_error: cell field sizes do not match the grid");
    if (std::abs(correctors.epsilon - cutoffs.epsilon) >
        1e-12 * std::max(correctors.epsilon, cutoffs.epsilon))
        throw config_error("expansion_error: correctors and cut-offs disagree on epsilon");
    const double eps = cutoffs.epsilon;

    const CellGradient geps = gradient(g, u_eps);
    const CellGradient gbar = gradient(g, u_bar);

    // Multipliers m_i = eta d_i u_bar, optionally replaced by their smoothed
    // version (the smoothing-operator variant of the expansion).
    std::vector<double> m[2];
    for (int i = 0; i < 2; ++i) {
        m[i].resize(nc);
        const std::vector<double>& gi = (i == 0) ? gbar.gx : gbar.gy;
        for (size_t c = 0; c < nc; ++c) m[i][c] = cutoffs.eta[c] * gi[c];
        if (smoothing_chi != nullptr)
            m[i] = smoothing_apply(g, m[i], *smoothing_chi, eps, &mask);
    }

    // Corrector term per cell and its nodal average.
    std::vector<double> corr(nc);
    for (size_t c = 0; c < nc; ++c)
        corr[c] = eps * (correctors.phi[0][c] * m[0][c] + correctors.phi[1][c] * m[1][c]);

    ExpansionError err;
    err.epsilon = eps;
    err.sample_index = sample_index;
    err.z.assign(nn, 0.0);
    const int nps = g.nodes_per_side();
    for (int iy = 0; iy < nps; ++iy)
        for (int ix = 0; ix < nps; ++ix) {
            double sum = 0.0;
            int cnt = 0;
            for (int dy = -1; dy <= 0; ++dy)
                for (int dx = -1; dx <= 0; ++dx) {
                    const int cx = ix + dx, cy = iy + dy;
                    if (cx < 0 || cx >= g.n || cy < 0 || cy >= g.n) continue;
                    const int c = g.cell_index(cx, cy);
                    if (!mask.inside[c]) continue;
                    sum += corr[c];
                    ++cnt;
                }
            const int node = iy * nps + ix;
            err.z[node] = u_eps[node] - u_bar[node] - (cnt > 0 ? sum / cnt : 0.0);
        }

    // Product-rule gradient assembly.
    const CellGradient dm0 = cell_fd_gradient(g, m[0]);
    const CellGradient dm1 = cell_fd_gradient(g, m[1]);
    err.grad_z.gx.assign(nc, 0.0);
    err.grad_z.gy.assign(nc, 0.0);
    for (size_t c = 0; c < nc; ++c) {
        err.grad_z.gx[c] = geps.gx[c] - gbar.gx[c] -
                           (correctors.grad[0].gx[c] * m[0][c] +
                            correctors.grad[1].gx[c] * m[1][c]) -
                           eps * (correctors.phi[0][c] * dm0.gx[c] +
                                  correctors.phi[1][c] * dm1.gx[c]);
        err.grad_z.gy[c] = geps.gy[c] - gbar.gy[c] -
                           (correctors.grad[0].gy[c] * m[0][c] +
                            correctors.grad[1].gy[c] * m[1][c]) -
                           eps * (correctors.phi[0][c] * dm0.gy[c] +
                                  correctors.phi[1][c] * dm1.gy[c]);
    }

    const std::vector<double> zc = node_to_cell(g, err.z);
    const double h2 = g.h() * g.h();
    double l2 = 0.0, h1 = 0.0;
    for (size_t c = 0; c < nc; ++c) {
        if (!mask.inside[c]) continue;
        l2 += zc[c] * zc[c] * h2;
        h1 += (err.grad_z.gx[c] * err.grad_z.gx[c] + err.grad_z.gy[c] * err.grad_z.gy[c]) * h2;
    }
    err.l2 = std::sqrt(l2);
    err.h1 = std::sqrt(h1);
    return err;
}

LayerNorms layer_colayer_norms(const DomainMask& mask, const std::vector<double>& u_bar,
                               double epsilon, double s) {
    const Grid& g = mask.grid;
    if (u_bar.size() != static_cast<size_t>(g.nodes()))
        throw config_error("layer_colayer_norms: nodal field size does not match the grid");
    if (!(epsilon > 0.0)) throw config_error("layer_colayer_norms: epsilon must be positive");
    if (!(s > 1.0)) throw config_error("layer_colayer_norms: s must exceed 1");
    const double sp = s / (s - 1.0);
    const double e = 2.0 * sp;
    const double h = g.h(), h2 = h * h;

    const CellGradient grad = gradient(g, u_bar);
    // One-sided differences of the Q1 gradient, inside cells only.
    auto fd = [&](const std::vector<double>& v, int cx, int cy, int dx, int dy) {
        const int fx = cx + dx, fy = cy + dy;
        const int bx = cx - dx, by = cy - dy;
        const bool fok = fx >= 0 && fx < g.n && fy >= 0 && fy < g.n &&
                         mask.inside[g.cell_index(fx, fy)];
        const bool bok = bx >= 0 && bx < g.n && by >= 0 && by < g.n &&
                         mask.inside[g.cell_index(bx, by)];
        const double vc = v[g.cell_index(cx, cy)];
        if (fok && bok)
            return (v[g.cell_index(fx, fy)] - v[g.cell_index(bx, by)]) / (2.0 * h);
        if (fok) return (v[g.cell_index(fx, fy)] - vc) / h;
        if (bok) return (vc - v[g.cell_index(bx, by)]) / h;
        return 0.0;
    };

    double lay2 = 0.0, colay2 = 0.0, layw = 0.0, colayw = 0.0;
    for (int cy = 0; cy < g.n; ++cy)
        for (int cx = 0; cx < g.n; ++cx) {
            const int c = g.cell_index(cx, cy);
            if (!mask.inside[c]) continue;
            const double d = mask.delta[c];
            const double g2 = grad.gx[c] * grad.gx[c] + grad.gy[c] * grad.gy[c];
            if (d <= 4.0 * epsilon) lay2 += g2 * h2;
            if (d <= epsilon) layw += std::pow(g2, 0.5 * e) * h2;
            if (d > epsilon) {
                const double hxx = fd(grad.gx, cx, cy, 1, 0);
                const double hxy = fd(grad.gx, cx, cy, 0, 1);
                const double hyx = fd(grad.gy, cx, cy, 1, 0);
                const double hyy = fd(grad.gy, cx, cy, 0, 1);
                const double h2norm = hxx * hxx + hxy * hxy + hyx * hyx + hyy * hyy;
                colay2 += h2norm * d * h2;
                colayw += std::pow(h2norm, 0.5 * e) * std::pow(d, e - 1.0) * h2;
            }
        }
    LayerNorms out;
    out.layer = std::sqrt(lay2);
    out.colayer = std::sqrt(colay2);
    out.layer_weighted = std::pow(layw, 1.0 / e);
    out.colayer_weighted = std::pow(colayw, 1.0 / e);
    return out;
}

}  // namespace homlab
