#include "homlab/cz_norms.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "homlab/util.hpp"

namespace homlab {

namespace {

void check_weight(const Grid& grid, const Weight& weight, const char* who) {
    if (weight.values.size() != static_cast<size_t>(grid.cells()))
        throw config_error(std::string(who) + ": weight size mismatch");
    for (double v : weight.values)
        if (!(v > 0.0) || !std::isfinite(v))
            throw config_error(std::string(who) + ": weight must be strictly positive and finite");
}

void check_cell_field(const Grid& grid, const std::vector<double>& f, const char* who) {
    if (f.size() != static_cast<size_t>(grid.cells()))
        throw config_error(std::string(who) + ": cell field size mismatch");
}

void check_radius(const Grid& grid, const DomainMask* mask, const std::vector<double>& radius,
                  const char* who) {
    check_cell_field(grid, radius, who);
    for (int c = 0; c < grid.cells(); ++c) {
        if (mask && !mask->inside[c]) continue;
        if (!(radius[c] >= grid.h()))
            throw config_error(std::string(who) + ": ball radius below one cell");
    }
}

std::vector<double> squared_magnitude(const CellGradient& g) {
    std::vector<double> out(g.gx.size());
    for (size_t c = 0; c < out.size(); ++c) out[c] = g.gx[c] * g.gx[c] + g.gy[c] * g.gy[c];
    return out;
}

std::vector<double> squared(const std::vector<double>& f) {
    std::vector<double> out(f.size());
    for (size_t c = 0; c < out.size(); ++c) out[c] = f[c] * f[c];
    return out;
}

/** Point on the mask polygon at arclength s from the first vertex (wraps). */
Vec2 polygon_point(const DomainMask& mask, double s) {
    double perimeter = 0.0;
    const size_t m = mask.polygon.size();
    for (size_t i = 0; i < m; ++i) {
        const Vec2 a = mask.polygon[i], b = mask.polygon[(i + 1) % m];
        perimeter += std::hypot(b.x - a.x, b.y - a.y);
    }
    s = std::fmod(s, perimeter);
    if (s < 0.0) s += perimeter;
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const Vec2 a = mask.polygon[i], b = mask.polygon[(i + 1) % m];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        if (s <= acc + len || i + 1 == m) {
            const double t = len > 0.0 ? (s - acc) / len : 0.0;
            return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
        }
        acc += len;
    }
    return mask.polygon[0];
}

int nearest_cell_coord(const Grid& grid, double x) {
    return std::clamp(static_cast<int>(std::floor(x / grid.h())), 0, grid.n - 1);
}

/** Max of 1/w over (inside) cells whose center lies in the ball. */
double ball_max_inverse(const Grid& grid, const DomainMask* mask, const std::vector<double>& w,
                        int cx, int cy, double radius) {
    const double h = grid.h();
    const int R = static_cast<int>(std::floor(radius / h + 1e-12));
    const double q = radius * radius / (h * h) * (1.0 + 1e-12);
    const bool torus = grid.topology == Topology::periodic_torus;
    double best = 0.0;
    for (int dy = -R; dy <= R; ++dy) {
        int iy = cy + dy;
        if (torus)
            iy = grid.wrap(iy);
        else if (iy < 0 || iy >= grid.n)
            continue;
        const int wspan =
            static_cast<int>(std::floor(std::sqrt(std::max(0.0, q - double(dy) * dy)) + 1e-12));
        for (int dx = -wspan; dx <= wspan; ++dx) {
            int ix = cx + dx;
            if (torus)
                ix = grid.wrap(ix);
            else if (ix < 0 || ix >= grid.n)
                continue;
            const int c = grid.cell_index(ix, iy);
            if (mask && !mask->inside[c]) continue;
            best = std::max(best, 1.0 / w[c]);
        }
    }
    return best;
}

}  // namespace

const char* weight_kind_name(WeightKind kind) {
    switch (kind) {
        case WeightKind::unit: return "unit";
        case WeightKind::distance_power: return "distance-power";
        case WeightKind::radial_power: return "radial-power";
    }
    return "?";
}

const char* cz_flavor_name(CzFlavor flavor) {
    switch (flavor) {
        case CzFlavor::quenched_A: return "quenched-A";
        case CzFlavor::annealed_B: return "annealed-B";
        case CzFlavor::weighted_C: return "weighted-C";
        case CzFlavor::weighted_D: return "weighted-D";
    }
    return "?";
}

Weight unit_weight(const Grid& grid) {
    Weight w;
    w.kind = WeightKind::unit;
    w.exponent = 0.0;
    w.values.assign(grid.cells(), 1.0);
    return w;
}

Weight distance_power_weight(const DomainMask& mask, double sigma, double offset) {
    if (!(offset > 0.0))
        throw config_error("distance_power_weight: enlargement offset must be positive");
    Weight w;
    w.kind = WeightKind::distance_power;
    w.exponent = sigma;
    w.values.resize(mask.grid.cells());
    // Distance to the boundary of the Minkowski enlargement equals the
    // distance to the original boundary plus the offset, everywhere inside.
    for (int c = 0; c < mask.grid.cells(); ++c)
        w.values[c] = std::pow(mask.delta[c] + offset, sigma);
    check_weight(mask.grid, w, "distance_power_weight");
    return w;
}

Weight radial_power_weight(const Grid& grid, double alpha, Vec2 center) {
    Weight w;
    w.kind = WeightKind::radial_power;
    w.exponent = alpha;
    w.values.resize(grid.cells());
    for (int cy = 0; cy < grid.n; ++cy)
        for (int cx = 0; cx < grid.n; ++cx) {
            const Vec2 p = grid.cell_center(cx, cy);
            const double r = std::hypot(p.x - center.x, p.y - center.y);
            w.values[grid.cell_index(cx, cy)] = std::pow(r, alpha);
        }
    check_weight(grid, w, "radial_power_weight");
    return w;
}

MuckenhouptEstimate muckenhoupt_constant(const Grid& grid, const Weight& weight, double q,
                                         const BallSampler& sampler, const DomainMask* mask) {
    if (q < 1.0) throw config_error("muckenhoupt_constant: q must be >= 1");
    if (sampler.n_balls < 1) throw config_error("muckenhoupt_constant: empty ball budget");
    check_weight(grid, weight, "muckenhoupt_constant");
    const double h = grid.h();
    const double rmin = std::max(sampler.min_radius > 0.0 ? sampler.min_radius : 2.0 * h, h);
    const double rmax = sampler.max_radius > 0.0 ? sampler.max_radius : grid.extent / 3.0;
    if (!(rmax >= rmin)) throw config_error("muckenhoupt_constant: empty radius window");

    std::vector<int> centers;
    if (mask) {
        for (int c = 0; c < grid.cells(); ++c)
            if (mask->inside[c]) centers.push_back(c);
        if (centers.empty()) throw config_error("muckenhoupt_constant: no inside cells");
    }

    const BallAverager avg_w(grid, weight.values, mask);
    std::vector<double> inv_pow;
    if (q > 1.0) {
        inv_pow.resize(weight.values.size());
        for (size_t c = 0; c < inv_pow.size(); ++c)
            inv_pow[c] = std::pow(weight.values[c], -1.0 / (q - 1.0));
    }
    const BallAverager avg_inv(grid, q > 1.0 ? inv_pow : weight.values, mask);

    Rng rng(sampler.seed);
    MuckenhouptEstimate est;
    est.q = q;
    est.balls = sampler.n_balls;
    est.constant = 0.0;
    for (int b = 0; b < sampler.n_balls; ++b) {
        int c;
        if (mask)
            c = centers[rng.uniform_int(static_cast<int>(centers.size()))];
        else
            c = rng.uniform_int(grid.cells());
        const int cx = c % grid.n, cy = c / grid.n;
        const double r = std::exp(rng.uniform(std::log(rmin), std::log(rmax)));
        const double mw = avg_w.average(cx, cy, r);
        if (std::isnan(mw)) continue;
        double quotient;
        if (q > 1.0)
            quotient = mw * std::pow(avg_inv.average(cx, cy, r), q - 1.0);
        else
            quotient = mw * ball_max_inverse(grid, mask, weight.values, cx, cy, r);
        est.constant = std::max(est.constant, quotient);
    }
    return est;
}

bool muckenhoupt_diverges(const std::function<Weight(const Grid&)>& make_weight, int n_base,
                          double extent, Topology topology, double q, const BallSampler& sampler,
                          int levels, double growth_factor) {
    if (levels < 1) throw config_error("muckenhoupt_diverges: need >= 1 refinement");
    double first = 0.0, last = 0.0;
    for (int l = 0; l <= levels; ++l) {
        const Grid g = make_grid(n_base << l, extent, topology);
        const Weight w = make_weight(g);
        const double est = muckenhoupt_constant(g, w, q, sampler).constant;
        if (l == 0) first = est;
        last = est;
    }
    return last > growth_factor * first;
}

double CzFunctional::ratio() const {
    if (rhs > 0.0) return lhs / rhs;
    return lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

bool exponent_in_window(double p, double theta) {
    return std::abs(1.0 / p - 0.5) <= 0.25 + theta;
}

CzFunctional cz_quenched(const DomainMask& mask, const CellGradient& grad_u,
                         const std::vector<double>& f, const std::vector<double>& radius, double p,
                         double theta_window) {
    const Grid& grid = mask.grid;
    if (!(p > 1.0)) throw config_error("cz_quenched: p must exceed 1");
    check_cell_field(grid, grad_u.gx, "cz_quenched");
    check_cell_field(grid, grad_u.gy, "cz_quenched");
    check_cell_field(grid, f, "cz_quenched");
    check_radius(grid, &mask, radius, "cz_quenched");

    const BallAverager avg_g(grid, squared_magnitude(grad_u), &mask);
    const BallAverager avg_f(grid, squared(f), &mask);
    const double area = grid.h() * grid.h();
    double acc_l = 0.0, acc_r = 0.0;
    for (int cy = 0; cy < grid.n; ++cy)
        for (int cx = 0; cx < grid.n; ++cx) {
            const int c = grid.cell_index(cx, cy);
            if (!mask.inside[c]) continue;
            acc_l += std::pow(avg_g.average(cx, cy, radius[c]), 0.5 * p) * area;
            acc_r += std::pow(avg_f.average(cx, cy, radius[c]), 0.5 * p) * area;
        }

    CzFunctional out;
    out.flavor = CzFlavor::quenched_A;
    out.p = p;
    out.q = p;
    out.lhs = std::pow(acc_l, 1.0 / p);
    out.rhs = std::pow(acc_r, 1.0 / p);
    out.exponents_in_window = exponent_in_window(p, theta_window);
    return out;
}

namespace {

/**
 * Shared annealed core: ensemble bracket <(avg |grad u|^2)^{p/2}>^{q/p} on
 * the gradient side, (avg |f|^2)^{q/2} on the data side, weighted integral,
 * with either a fixed eps radius (radius empty) or a per-cell radius field.
 */
CzFunctional annealed_core(const DomainMask& mask, const std::vector<CellGradient>& grads,
                           const std::vector<double>& f, double epsilon,
                           const std::vector<double>& radius, double p, double q,
                           const Weight& weight, const char* who) {
    const Grid& grid = mask.grid;
    if (grads.size() < 8) throw config_error(std::string(who) + ": needs >= 8 samples");
    if (!(p > 1.0) || !(q > 1.0)) throw config_error(std::string(who) + ": p, q must exceed 1");
    check_cell_field(grid, f, who);
    check_weight(grid, weight, who);
    const bool star = !radius.empty();
    if (star)
        check_radius(grid, &mask, radius, who);
    else if (!(epsilon >= grid.h()))
        throw config_error(std::string(who) + ": epsilon below one cell");

    const int cells = grid.cells();
    std::vector<double> bracket(cells, 0.0);
    for (const CellGradient& g : grads) {
        check_cell_field(grid, g.gx, who);
        check_cell_field(grid, g.gy, who);
        const BallAverager avg_g(grid, squared_magnitude(g), &mask);
        for (int cy = 0; cy < grid.n; ++cy)
            for (int cx = 0; cx < grid.n; ++cx) {
                const int c = grid.cell_index(cx, cy);
                if (!mask.inside[c]) continue;
                bracket[c] += std::pow(avg_g.average(cx, cy, star ? radius[c] : epsilon), 0.5 * p);
            }
    }

    const BallAverager avg_f(grid, squared(f), &mask);
    const double area = grid.h() * grid.h();
    const double inv_s = 1.0 / static_cast<double>(grads.size());
    double acc_l = 0.0, acc_r = 0.0;
    for (int cy = 0; cy < grid.n; ++cy)
        for (int cx = 0; cx < grid.n; ++cx) {
            const int c = grid.cell_index(cx, cy);
            if (!mask.inside[c]) continue;
            acc_l += std::pow(bracket[c] * inv_s, q / p) * weight.values[c] * area;
            acc_r += std::pow(avg_f.average(cx, cy, star ? radius[c] : epsilon), 0.5 * q) *
                     weight.values[c] * area;
        }

    CzFunctional out;
    out.p = p;
    out.q = q;
    out.epsilon = star ? 0.0 : epsilon;
    out.lhs = std::pow(acc_l, 1.0 / q);
    out.rhs = std::pow(acc_r, 1.0 / q);
    out.weight_kind = weight.kind;
    return out;
}

}  // namespace

CzFunctional cz_annealed(const DomainMask& mask, const std::vector<CellGradient>& grads,
                         const std::vector<double>& f, double epsilon, double p, double q,
                         double p_bar, const Weight& weight, double theta_window) {
    if (!(p_bar > p)) throw config_error("cz_annealed: p_bar must exceed p");
    CzFunctional out = annealed_core(mask, grads, f, epsilon, {}, p, q, weight, "cz_annealed");
    out.flavor = weight.kind == WeightKind::unit ? CzFlavor::annealed_B : CzFlavor::weighted_D;
    out.p_bar = p_bar;
    out.exponents_in_window =
        exponent_in_window(p, theta_window) && exponent_in_window(q, theta_window);
    return out;
}

CzFunctional cz_weighted_star(const DomainMask& mask, const std::vector<CellGradient>& grads,
                              const std::vector<double>& f, const std::vector<double>& radius,
                              double p, double q, const Weight& weight, double theta_window) {
    if (radius.empty()) throw config_error("cz_weighted_star: radius field required");
    CzFunctional out =
        annealed_core(mask, grads, f, 0.0, radius, p, q, weight, "cz_weighted_star");
    out.flavor = CzFlavor::weighted_C;
    out.exponents_in_window =
        exponent_in_window(p, theta_window) && exponent_in_window(q, theta_window);
    return out;
}

double geometry_check(const Grid& grid, const DomainMask* mask, const std::vector<double>& field,
                      const std::vector<double>& radius, GeometryMode mode, double s, int n_probes,
                      uint64_t seed) {
    if (mask && grid.topology != Topology::masked_domain)
        throw config_error("geometry_check: mask supplied for a torus");
    if (!mask && grid.topology != Topology::periodic_torus)
        throw config_error("geometry_check: masked grids need the mask");
    check_cell_field(grid, field, "geometry_check");
    check_radius(grid, mask, radius, "geometry_check");
    if (!(s > 0.0)) throw config_error("geometry_check: s must be positive");
    if (n_probes < 1) throw config_error("geometry_check: need probes");
    for (int c = 0; c < grid.cells(); ++c)
        if (field[c] < 0.0) throw config_error("geometry_check: field must be nonnegative");

    const double h = grid.h();
    const auto inside = [&](int c) { return !mask || mask->inside[c]; };
    const BallAverager avg_f(grid, field, mask);

    std::vector<double> ustar(grid.cells(), 0.0);
    double max_radius = 0.0;
    for (int cy = 0; cy < grid.n; ++cy)
        for (int cx = 0; cx < grid.n; ++cx) {
            const int c = grid.cell_index(cx, cy);
            if (!inside(c)) continue;
            ustar[c] = avg_f.average(cx, cy, radius[c]);
            max_radius = std::max(max_radius, radius[c]);
        }

    if (mode == GeometryMode::global_equivalence) {
        double i_plain = 0.0, i_avg = 0.0;
        for (int c = 0; c < grid.cells(); ++c)
            if (inside(c)) {
                i_plain += field[c];
                i_avg += ustar[c];
            }
        if (i_plain <= 0.0 && i_avg <= 0.0) return 1.0;
        if (i_plain <= 0.0 || i_avg <= 0.0) return std::numeric_limits<double>::infinity();
        return std::max(i_plain / i_avg, i_avg / i_plain);
    }

    const BallAverager avg_u(grid, ustar, mask);
    std::vector<double> pow_u;
    if (mode == GeometryMode::local_ball) {
        pow_u.assign(grid.cells(), 0.0);
        for (int c = 0; c < grid.cells(); ++c)
            if (inside(c)) pow_u[c] = std::pow(ustar[c], 1.0 / s);
    }
    const BallAverager avg_pow_u(grid, mode == GeometryMode::local_ball ? pow_u : ustar, mask);

    double perimeter = 0.0;
    if (mask) (void)polygon_arclength(*mask, mask->polygon[0], &perimeter);

    Rng rng(seed);
    double worst = 0.0;
    const auto fold = [&worst](double num, double den) {
        if (den > 0.0)
            worst = std::max(worst, num / den);
        else if (num > 0.0)
            worst = std::numeric_limits<double>::infinity();
    };

    for (int probe = 0; probe < n_probes; ++probe) {
        int px, py;
        if (mask) {
            const Vec2 X = polygon_point(*mask, rng.uniform(0.0, perimeter));
            px = nearest_cell_coord(grid, X.x);
            py = nearest_cell_coord(grid, X.y);
        } else {
            const int c = rng.uniform_int(grid.cells());
            px = c % grid.n;
            py = c / grid.n;
        }

        if (mode == GeometryMode::local_ball) {
            const double r_hi = max_radius / 4.0;
            if (!(r_hi > 2.0 * h)) continue;
            const double r = std::exp(rng.uniform(std::log(2.0 * h), std::log(r_hi)));
            // anchors x0 in B_r(X) with r < radius(x0)/4
            std::vector<int> anchors;
            const int R = static_cast<int>(std::floor(r / h));
            for (int dy = -R; dy <= R; ++dy)
                for (int dx = -R; dx <= R; ++dx) {
                    if (double(dx) * dx + double(dy) * dy > r * r / (h * h)) continue;
                    int ix = px + dx, iy = py + dy;
                    if (grid.topology == Topology::periodic_torus) {
                        ix = grid.wrap(ix);
                        iy = grid.wrap(iy);
                    } else if (ix < 0 || ix >= grid.n || iy < 0 || iy >= grid.n) {
                        continue;
                    }
                    const int c = grid.cell_index(ix, iy);
                    if (inside(c) && radius[c] > 4.0 * r) anchors.push_back(c);
                }
            if (anchors.empty()) continue;
            const int a = anchors[rng.uniform_int(static_cast<int>(anchors.size()))];
            const double lhs = std::pow(ustar[a], 1.0 / s);
            const double rhs = avg_pow_u.average(px, py, 5.0 * r);
            if (!std::isnan(rhs)) fold(lhs, rhs);
        } else {  // annulus_chain
            const int pc = grid.cell_index(px, py);
            const double r_lo = std::max(2.0 * h, radius[pc] / 4.0);
            const double r_hi = std::max(grid.extent / 3.0, r_lo * (1.0 + 1e-9));
            const double r = std::exp(rng.uniform(std::log(r_lo), std::log(r_hi)));
            const double near = avg_f.average(px, py, r);
            const double mid = avg_u.average(px, py, 2.0 * r);
            const double far = avg_f.average(px, py, 7.0 * r);
            if (std::isnan(near) || std::isnan(mid) || std::isnan(far)) continue;
            fold(near, mid);
            fold(mid, far);
        }
    }
    return worst;
}

void export_cz_csv(const std::vector<CzFunctional>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("export_cz_csv: cannot open " + path);
    out << "flavor,p,q,p_bar,epsilon,lhs,rhs,ratio,weight_kind\n";
    for (const CzFunctional& r : rows) {
        out << cz_flavor_name(r.flavor) << ',' << format_g17(r.p) << ',' << format_g17(r.q) << ','
            << format_g17(r.p_bar) << ',' << format_g17(r.epsilon) << ',' << format_g17(r.lhs)
            << ',' << format_g17(r.rhs) << ',' << format_g17(r.ratio()) << ','
            << weight_kind_name(r.weight_kind) << '\n';
    }
}

}  // namespace homlab
