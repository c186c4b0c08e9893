#include "homlab/fluctuation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "homlab/fem.hpp"

namespace homlab {

void test_field_h(const DomainMask& mask, std::vector<double>& hx, std::vector<double>& hy) {
    const Grid& g = mask.grid;
    hx.assign(g.cells(), 0.0);
    hy.assign(g.cells(), 0.0);
    const double e = g.extent;
    for (int cy = 0; cy < g.n; ++cy)
        for (int cx = 0; cx < g.n; ++cx) {
            const int c = g.cell_index(cx, cy);
            if (!mask.inside[c]) continue;
            const Vec2 p = g.cell_center(cx, cy);
            if (p.x <= 0.25 * e || p.x >= 0.75 * e || p.y <= 0.25 * e || p.y >= 0.75 * e)
                continue;
            const double sx = std::sin(2.0 * M_PI * (p.x - 0.25 * e) / e);
            const double sy = std::sin(2.0 * M_PI * (p.y - 0.25 * e) / e);
            hx[c] = hy[c] = sx * sx * sy * sy;
        }
}

double commutator_H(const DomainMask& mask, const std::vector<double>& a_eps, const Mat2& a_bar,
                    const std::vector<double>& u_eps, const std::vector<double>& u_bar,
                    const ScaledCorrectors& correctors, const CutoffPair& cutoffs,
                    const std::vector<double>& hx, const std::vector<double>& hy) {
    const Grid& g = mask.grid;
    const size_t cells = static_cast<size_t>(g.cells());
    const size_t nodes = static_cast<size_t>(g.nodes());
    if (a_eps.size() != cells || hx.size() != cells || hy.size() != cells)
        throw config_error("commutator_H: cell field size mismatch");
    if (u_eps.size() != nodes || u_bar.size() != nodes)
        throw config_error("commutator_H: nodal field size mismatch");
    const double eps = correctors.epsilon;
    if (std::abs(cutoffs.epsilon - eps) > 1e-12 * eps)
        throw config_error("commutator_H: corrector and cut-off epsilon disagree");
    for (int i = 0; i < 2; ++i)
        if (correctors.grad[i].gx.size() != cells || correctors.grad[i].gy.size() != cells)
            throw config_error("commutator_H: corrector gradient size mismatch");

    const auto layer = layer_set(mask, 2.0 * eps);
    for (size_t c = 0; c < cells; ++c)
        if (layer[c] && (hx[c] != 0.0 || hy[c] != 0.0))
            throw config_error("commutator_H: test field support touches the boundary layer");

    const CellGradient ge = gradient(g, u_eps);
    const CellGradient gb = gradient(g, u_bar);
    const double area = g.h() * g.h();
    double acc = 0.0;
    for (int c = 0; c < g.cells(); ++c) {
        if (!mask.inside[c]) continue;
        if (hx[c] == 0.0 && hy[c] == 0.0) continue;
        const double m0 = cutoffs.eta[c] * gb.gx[c];
        const double m1 = cutoffs.eta[c] * gb.gy[c];
        const double vx =
            ge.gx[c] - gb.gx[c] - correctors.grad[0].gx[c] * m0 - correctors.grad[1].gx[c] * m1;
        const double vy =
            ge.gy[c] - gb.gy[c] - correctors.grad[0].gy[c] * m0 - correctors.grad[1].gy[c] * m1;
        const auto [bx, by] = a_bar.apply(vx, vy);
        acc += (hx[c] * (a_eps[c] * vx - bx) + hy[c] * (a_eps[c] * vy - by)) * area;
    }
    return acc;
}

namespace {

double centered_std(const std::vector<double>& xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double s2 = 0.0;
    for (double x : xs) s2 += (x - mean) * (x - mean);
    return std::sqrt(s2 / xs.size());
}

double centered_moment4_root(const std::vector<double>& xs) {
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double s4 = 0.0;
    for (double x : xs) {
        const double d = x - mean;
        s4 += d * d * d * d;
    }
    return std::pow(s4 / xs.size(), 0.25);
}

}  // namespace

VarianceFit variance_scaling(const std::vector<std::vector<double>>& h_samples,
                             const std::vector<double>& epsilons, int n_boot, uint64_t seed) {
    if (epsilons.size() < 3) throw config_error("variance_scaling: need >= 3 epsilon values");
    if (h_samples.size() != epsilons.size())
        throw config_error("variance_scaling: sample blocks and epsilons disagree");
    const size_t n = h_samples.front().size();
    for (const auto& block : h_samples) {
        if (block.size() < 16) throw config_error("variance_scaling: need >= 16 samples per eps");
        if (block.size() != n)
            throw config_error("variance_scaling: unequal sample counts across eps");
    }

    VarianceFit fit;
    fit.n_samples = static_cast<int>(n);
    fit.epsilons = epsilons;
    for (const auto& block : h_samples) {
        const double mean = std::accumulate(block.begin(), block.end(), 0.0) / block.size();
        const double sd = centered_std(block);
        fit.std_per_eps.push_back(sd);
        if (n >= 64) fit.moment4_per_eps.push_back(centered_moment4_root(block));
        // identical samples up to rounding noise: no variance to fit
        if (sd <= 1e-12 * (std::abs(mean) + 1.0)) fit.zero_variance = true;
    }
    if (fit.zero_variance) return fit;

    std::vector<double> lx, ly;
    for (size_t k = 0; k < epsilons.size(); ++k) {
        lx.push_back(std::log(epsilons[k]));
        ly.push_back(std::log(fit.std_per_eps[k]));
    }
    const FitResult ols = ols_fit(lx, ly);
    fit.exponent = ols.slope;
    fit.intercept = ols.intercept;
    fit.r_squared = ols.r_squared;

    Rng rng(seed);
    std::vector<double> slopes;
    slopes.reserve(n_boot);
    std::vector<double> resampled(n);
    for (int b = 0; b < n_boot; ++b) {
        std::vector<double> by;
        bool degenerate = false;
        for (const auto& block : h_samples) {
            for (size_t i = 0; i < n; ++i)
                resampled[i] = block[rng.uniform_int(static_cast<int>(n))];
            const double sd = centered_std(resampled);
            if (sd <= 0.0) {
                degenerate = true;
                break;
            }
            by.push_back(std::log(sd));
        }
        if (degenerate) continue;
        slopes.push_back(ols_fit(lx, by).slope);
    }
    if (!slopes.empty()) {
        std::sort(slopes.begin(), slopes.end());
        fit.exponent_ci.estimate = fit.exponent;
        fit.exponent_ci.lo = slopes[static_cast<size_t>(0.025 * (slopes.size() - 1))];
        fit.exponent_ci.hi =
            slopes[static_cast<size_t>(std::ceil(0.975 * (slopes.size() - 1)))];
    }
    return fit;
}

void export_fluctuation_csv(const std::vector<FluctuationSample>& samples,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("export_fluctuation_csv: cannot open " + path);
    out << "epsilon,sample,H\n";
    for (const FluctuationSample& s : samples)
        out << format_g17(s.epsilon) << ',' << s.sample_index << ',' << format_g17(s.h_value)
            << '\n';
}

void export_variance_fit_json(const VarianceFit& fit, const std::string& path) {
    nlohmann::json j;
    j["exponent"] = fit.exponent;
    j["ci_lo"] = fit.exponent_ci.lo;
    j["ci_hi"] = fit.exponent_ci.hi;
    j["r_squared"] = fit.r_squared;
    j["n_samples"] = fit.n_samples;
    j["zero_variance"] = fit.zero_variance;
    j["epsilons"] = fit.epsilons;
    j["std_per_eps"] = fit.std_per_eps;
    if (!fit.moment4_per_eps.empty()) j["moment4_per_eps"] = fit.moment4_per_eps;
    std::ofstream out(path);
    if (!out) throw config_error("export_variance_fit_json: cannot open " + path);
    out << j.dump(2) << '\n';
}

}  // namespace homlab
