#include "homlab/minimal_radius.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace homlab {
namespace {

double ipow(double x, int p) {
    double r = 1.0;
    for (int k = 0; k < p; ++k) r *= x;
    return r;
}

int min_image(int d, int n) {
    d = ((d % n) + n) % n;
    return std::min(d, n - d);
}

struct Bracket {
    double osc = 0.0;   // (avg |(phi,sigma)-mean|^{2p})^{1/p}
    double grad = 0.0;  // (avg |grad phi|^{2p})^{1/p}
};

Bracket ball_bracket(const Grid& grid, const CorrectorSet& set, int ax, int ay,
                     int ball_radius_cells, int p) {
    const int n = grid.n;
    const int rc = ball_radius_cells;
    const double r2 = static_cast<double>(rc) * rc * (1.0 + 1e-12);
    const std::vector<double>* comp[4] = {&set.phi_cell[0], &set.phi_cell[1],
                                          &set.sigma_cell[0], &set.sigma_cell[1]};
    double mean[4] = {0.0, 0.0, 0.0, 0.0};
    int count = 0;
    for (int dy = -rc; dy <= rc; ++dy)
        for (int dx = -rc; dx <= rc; ++dx) {
            if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > r2)
                continue;
            const int ci = grid.cell_index(grid.wrap(ax + dx), grid.wrap(ay + dy));
            for (int m = 0; m < 4; ++m) mean[m] += (*comp[m])[ci];
            ++count;
        }
    for (double& m : mean) m /= count;

    double osc = 0.0, grd = 0.0;
    for (int dy = -rc; dy <= rc; ++dy)
        for (int dx = -rc; dx <= rc; ++dx) {
            if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > r2)
                continue;
            const int ci = grid.cell_index(grid.wrap(ax + dx), grid.wrap(ay + dy));
            double dev2 = 0.0;
            for (int m = 0; m < 4; ++m) {
                const double d = (*comp[m])[ci] - mean[m];
                dev2 += d * d;
            }
            osc += ipow(dev2, p);
            double g2 = 0.0;
            for (int i = 0; i < 2; ++i) {
                g2 += set.grad_phi[i].gx[ci] * set.grad_phi[i].gx[ci] +
                      set.grad_phi[i].gy[ci] * set.grad_phi[i].gy[ci];
            }
            grd += ipow(g2, p);
        }
    Bracket b;
    b.osc = std::pow(osc / count, 1.0 / p);
    b.grad = std::pow(grd / count, 1.0 / p);
    return b;
}

void check_radii(const Grid& grid, const MinRadParams& params) {
    params.validate();
    for (size_t k = 0; k < params.radii.size(); ++k) {
        if (params.radii[k] > grid.n / 4)
            throw config_error(
                "chi_star: scan radii must satisfy R_max <= n/4 "
                "(periodicity contamination)");
        if (k > 0 && params.radii[k] != 2 * params.radii[k - 1])
            throw config_error("chi_star: radii must be consecutive dyadic");
    }
}

// Smallest dyadic l such that quantity(R) <= theta for every scanned
// R >= l; R_max sentinel with the saturation flag when none qualifies.
ChiStarResult scan_suffix(const std::vector<int>& radii,
                          const std::vector<double>& quantity, double theta,
                          double floor_value) {
    int first_good = static_cast<int>(radii.size());
    for (int k = static_cast<int>(radii.size()) - 1; k >= 0; --k) {
        if (quantity[k] <= theta)
            first_good = k;
        else
            break;
    }
    ChiStarResult res;
    if (first_good == static_cast<int>(radii.size())) {
        res.saturated = true;
        res.chi = std::max(static_cast<double>(radii.back()), floor_value);
    } else {
        res.chi = std::max(static_cast<double>(radii[first_good]), floor_value);
    }
    return res;
}

}  // namespace

void MinRadParams::validate() const {
    if (!(theta > 0.0) || !(theta < 1.0))
        throw config_error("MinRadParams: theta must lie in (0,1)");
    if (p < 2)
        throw config_error("MinRadParams: p must be >= 2 for a finite conjugate");
    if (!(gamma_prime > 1.0))
        throw config_error("MinRadParams: gamma_prime must exceed 1");
    if (!(L > 0.0)) throw config_error("MinRadParams: L must be positive");
    if (radii.empty() || radii.front() < 1)
        throw config_error("MinRadParams: radii must be a nonempty dyadic list");
    if (!(exponent() > 0.0))
        throw config_error("MinRadParams: scan exponent must be positive");
}

std::vector<int> dyadic_radii(int r_max) {
    if (r_max < 1) throw config_error("dyadic_radii: r_max must be >= 1");
    std::vector<int> out;
    for (int r = 1; r <= r_max; r *= 2) out.push_back(r);
    return out;
}

double lipschitz_constant(double r0_cells) {
    return std::max({r0_cells, 1.0, 8.0});
}

ChiStarResult chi_star(const Grid& grid, const CorrectorSet& set, int ax, int ay,
                       const MinRadParams& params) {
    check_radii(grid, params);
    const double ex = params.exponent();
    std::vector<double> quantity(params.radii.size());
    for (size_t k = 0; k < params.radii.size(); ++k) {
        const int R = params.radii[k];
        const Bracket b = ball_bracket(grid, set, ax, ay, 2 * R, params.p);
        quantity[k] = std::pow(1.0 / R, ex) * (b.osc + b.grad);
    }
    return scan_suffix(params.radii, quantity, params.theta, params.floor());
}

ChiStarResult chi_star_corollary(const Grid& grid, const CorrectorSet& set,
                                 int ax, int ay, const MinRadParams& params,
                                 const std::vector<double>& chi_plain) {
    check_radii(grid, params);
    if (chi_plain.size() != static_cast<size_t>(grid.cells()))
        throw config_error("chi_star_corollary: chi field size does not match the grid");
    const double ex = params.exponent();
    if (!(params.kappa > 0.0) || !(params.kappa < ex))
        throw config_error("chi_star_corollary: kappa must lie in (0, exponent)");
    std::vector<double> quantity(params.radii.size());
    for (size_t k = 0; k < params.radii.size(); ++k) {
        const int R = params.radii[k];
        const Bracket b = ball_bracket(grid, set, ax, ay, 2 * R, params.p);
        const double xr = envelope_X(grid, chi_plain, R, ax, ay, params.kappa);
        quantity[k] = std::pow(1.0 / R, ex - params.kappa) * xr * (b.osc + b.grad + 1.0);
    }
    return scan_suffix(params.radii, quantity, params.theta, params.floor());
}

std::vector<double> lipschitz_regularize(const Grid& grid,
                                         const std::vector<int>& seed_x,
                                         const std::vector<int>& seed_y,
                                         const std::vector<double>& chi,
                                         double L) {
    if (seed_x.size() != seed_y.size() || seed_x.size() != chi.size() || chi.empty())
        throw config_error("lipschitz_regularize: seed arrays must be equal-sized and nonempty");
    if (!(L > 0.0)) throw config_error("lipschitz_regularize: L must be positive");
    const int n = grid.n;
    // Value-ascending order allows an exact early exit: once the running
    // minimum is below the next seed value, no later seed can improve it.
    std::vector<int> order(chi.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return chi[a] < chi[b]; });

    std::vector<double> out(grid.cells());
    for (int qy = 0; qy < n; ++qy)
        for (int qx = 0; qx < n; ++qx) {
            double best = std::numeric_limits<double>::infinity();
            for (int s : order) {
                if (chi[s] >= best) break;
                const double dx = min_image(qx - seed_x[s], n);
                const double dy = min_image(qy - seed_y[s], n);
                const double cand = chi[s] + std::sqrt(dx * dx + dy * dy) / L;
                best = std::min(best, cand);
            }
            out[grid.cell_index(qx, qy)] = best;
        }
    return out;
}

double envelope_X(const Grid& grid, const std::vector<double>& chi, double R,
                  int cx0, int cy0, double kappa) {
    if (chi.size() != static_cast<size_t>(grid.cells()))
        throw config_error("envelope_X: chi field size does not match the grid");
    if (!(R > 0.0)) throw config_error("envelope_X: R must be positive");
    const int rc = static_cast<int>(std::floor(R * (1.0 + 1e-12)));
    const double r2 = R * R * (1.0 + 1e-12);
    double sup = 0.0;
    for (int dy = -rc; dy <= rc; ++dy)
        for (int dx = -rc; dx <= rc; ++dx) {
            if (static_cast<double>(dx) * dx + static_cast<double>(dy) * dy > r2)
                continue;
            const int ci = grid.cell_index(grid.wrap(cx0 + dx), grid.wrap(cy0 + dy));
            sup = std::max(sup, std::abs(chi[ci]));
        }
    return std::pow(R, -kappa) * sup;
}

MinimalRadiusField minimal_radius_field(const Grid& grid, const CorrectorSet& set,
                                        const MinRadParams& params, int stride) {
    if (stride < 1 || grid.n % stride != 0)
        throw config_error("minimal_radius_field: stride must divide n");
    MinimalRadiusField field;
    field.params = params;
    for (int ay = 0; ay < grid.n; ay += stride)
        for (int ax = 0; ax < grid.n; ax += stride) {
            const auto res = chi_star(grid, set, ax, ay, params);
            field.anchor_x.push_back(ax);
            field.anchor_y.push_back(ay);
            field.chi.push_back(res.chi);
            if (res.saturated) ++field.saturated_count;
        }
    field.regularized =
        lipschitz_regularize(grid, field.anchor_x, field.anchor_y, field.chi, params.L);
    return field;
}

std::vector<MomentEntry> moment_report(
    const std::vector<std::vector<double>>& chi_samples,
    const std::vector<double>& betas, int n_boot, uint64_t seed) {
    if (chi_samples.size() < 8)
        throw config_error("moment_report: needs at least 8 Monte Carlo samples");
    for (const auto& s : chi_samples)
        if (s.size() < 16)
            throw config_error("moment_report: each sample needs >= 16 anchors");
    if (n_boot < 2) throw config_error("moment_report: n_boot too small");

    const int S = static_cast<int>(chi_samples.size());
    std::vector<MomentEntry> out;
    for (double beta : betas) {
        // Pooled empirical moment.
        double acc = 0.0;
        size_t total = 0;
        std::vector<double> per_sample_sum(S), per_sample_count(S);
        for (int s = 0; s < S; ++s) {
            double local = 0.0;
            for (double v : chi_samples[s]) local += std::pow(v, beta);
            per_sample_sum[s] = local;
            per_sample_count[s] = static_cast<double>(chi_samples[s].size());
            acc += local;
            total += chi_samples[s].size();
        }
        MomentEntry e;
        e.beta = beta;
        e.moment = acc / total;

        // Block bootstrap over whole samples (the independence unit).
        Rng rng(derive_seed(seed, static_cast<uint64_t>(out.size()) + 101));
        std::vector<double> boots(n_boot);
        for (int b = 0; b < n_boot; ++b) {
            double bs = 0.0, bc = 0.0;
            for (int k = 0; k < S; ++k) {
                const int pick = rng.uniform_int(S);
                bs += per_sample_sum[pick];
                bc += per_sample_count[pick];
            }
            boots[b] = bs / bc;
        }
        std::sort(boots.begin(), boots.end());
        e.ci_lo = boots[static_cast<size_t>(0.025 * (n_boot - 1))];
        e.ci_hi = boots[static_cast<size_t>(std::ceil(0.975 * (n_boot - 1)))];
        out.push_back(e);
    }
    return out;
}

bool moments_stable(const std::vector<MomentEntry>& a,
                    const std::vector<MomentEntry>& b) {
    for (const auto& ea : a)
        for (const auto& eb : b) {
            if (ea.beta != eb.beta) continue;
            const double hw = std::max(0.5 * (ea.ci_hi - ea.ci_lo),
                                       0.5 * (eb.ci_hi - eb.ci_lo));
            if (std::abs(ea.moment - eb.moment) > 2.0 * hw) return false;
        }
    return true;
}

void export_chi_csv(const Grid& grid, const MinimalRadiusField& field,
                    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("export_chi_csv: cannot open " + path);
    out << "x,y,chi,chi_regularized\n";
    for (size_t k = 0; k < field.chi.size(); ++k) {
        const Vec2 c = grid.cell_center(field.anchor_x[k], field.anchor_y[k]);
        const double reg =
            field.regularized[grid.cell_index(field.anchor_x[k], field.anchor_y[k])];
        out << format_g17(c.x) << ',' << format_g17(c.y) << ','
            << format_g17(field.chi[k]) << ',' << format_g17(reg) << '\n';
    }
}

}  // namespace homlab
