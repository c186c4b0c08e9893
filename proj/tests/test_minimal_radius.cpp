#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "homlab/correctors.hpp"
#include "homlab/minimal_radius.hpp"
#include "homlab/random_field.hpp"
#include "homlab/util.hpp"

using namespace homlab;

namespace {

// Corrector set with zero oscillation and a constant gradient magnitude:
// the scan quantity collapses to the closed form (1/R)^exponent * g^2.
CorrectorSet synthetic_grad_set(const Grid& g, double gval) {
    CorrectorSet set;
    set.cell_size = g.h();
    for (int i = 0; i < 2; ++i) {
        set.phi_cell[i].assign(g.cells(), 0.0);
        set.sigma_cell[i].assign(g.cells(), 0.0);
        set.grad_phi[i].gx.assign(g.cells(), 0.0);
        set.grad_phi[i].gy.assign(g.cells(), 0.0);
    }
    set.grad_phi[0].gx.assign(g.cells(), gval);
    return set;
}

MinRadParams params_with_radii(int r_max, double theta = 0.25) {
    MinRadParams p;
    p.theta = theta;
    p.radii = dyadic_radii(r_max);
    return p;
}

double torus_dist(int ax, int ay, int bx, int by, int n) {
    int dx = std::abs(ax - bx);
    dx = std::min(dx, n - dx);
    int dy = std::abs(ay - by);
    dy = std::min(dy, n - dy);
    return std::sqrt(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy);
}

}  // namespace

TEST_CASE("derived scan parameters: conjugates, exponent, floor") {
    MinRadParams p;  // defaults: theta 0.25, p 2, symmetric gamma
    p.radii = dyadic_radii(16);
    CHECK(p.gamma() == 1.0);
    CHECK(p.p_prime() == 2.0);
    CHECK(p.exponent() == 0.5);
    CHECK(p.floor() == 16.0);
    p.validate();

    p.symmetric_gamma = false;  // gamma = gamma'/(gamma'-1) = 21
    CHECK(p.gamma() == doctest::Approx(21.0).epsilon(1e-12));
    CHECK(p.exponent() == doctest::Approx(1.0 / 42.0).epsilon(1e-12));
    p.validate();

    MinRadParams bad = p;
    bad.theta = 1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = p;
    bad.theta = 0.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = p;
    bad.p = 1;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = p;
    bad.gamma_prime = 1.0;
    bad.symmetric_gamma = false;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = p;
    bad.L = 0.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = p;
    bad.radii.clear();
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("dyadic radius ladder") {
    CHECK(dyadic_radii(8) == std::vector<int>{1, 2, 4, 8});
    CHECK(dyadic_radii(5) == std::vector<int>{1, 2, 4});
    CHECK(dyadic_radii(1) == std::vector<int>{1});
    CHECK_THROWS_AS((void)dyadic_radii(0), config_error);
}

TEST_CASE("Lipschitz constant of the regularized field") {
    CHECK(lipschitz_constant(1.0) == 8.0);
    CHECK(lipschitz_constant(8.0) == 8.0);
    CHECK(lipschitz_constant(12.0) == 12.0);
}

TEST_CASE("closed-form scan: constant gradient magnitude pins the threshold radius") {
    const Grid g = make_grid(256, 1.0, Topology::periodic_torus);
    const auto set = synthetic_grad_set(g, 1.0);  // quantity(R) = R^{-1/2}

    // theta = 0.25: R^{-1/2} <= 0.25 iff R >= 16; floor is also 16.
    auto res = chi_star(g, set, 128, 128, params_with_radii(64, 0.25));
    CHECK(!res.saturated);
    CHECK(res.chi == 16.0);

    // theta = 0.51: passes from R = 4 up; floor 0.51^-2 = 3.845 < 4.
    res = chi_star(g, set, 128, 128, params_with_radii(64, 0.51));
    CHECK(!res.saturated);
    CHECK(res.chi == 4.0);

    // theta = 0.6: passes from R = 4 (R=2 gives 0.707); floor 2.78.
    res = chi_star(g, set, 128, 128, params_with_radii(64, 0.6));
    CHECK(!res.saturated);
    CHECK(res.chi == 4.0);

    // Monotone in theta: tighter theta => larger minimal radius.
    const double chi_tight = chi_star(g, set, 128, 128, params_with_radii(64, 0.25)).chi;
    const double chi_loose = chi_star(g, set, 128, 128, params_with_radii(64, 0.51)).chi;
    CHECK(chi_tight >= chi_loose);

    // theta = 0.05: would need R >= 400 > 64 => saturated, and the
    // theta^{-p} floor (400) dominates the largest scanned radius.
    res = chi_star(g, set, 128, 128, params_with_radii(64, 0.05));
    CHECK(res.saturated);
    CHECK(res.chi == doctest::Approx(400.0).epsilon(1e-12));

    // Anchor independence for a translation-invariant synthetic set.
    const auto at_origin = chi_star(g, set, 0, 0, params_with_radii(64, 0.25));
    CHECK(at_origin.chi == 16.0);

    // Radii beyond n/4 are rejected (periodic wrap contaminates the ball).
    CHECK_THROWS_AS((void)chi_star(g, set, 0, 0, params_with_radii(128, 0.25)),
                    config_error);
}

TEST_CASE("zero-deviation correctors from a constant coefficient hit the floor exactly") {
    const Grid g = make_grid(32, 1.0, Topology::periodic_torus);
    const std::vector<double> a(g.cells(), 1.3);
    const auto set = solve_corrector_set(g, a, 0.5);
    const auto res = chi_star(g, set, 16, 16, params_with_radii(8, 0.25));
    CHECK(!res.saturated);
    CHECK(res.chi == 16.0);  // theta^{-p} floor; every scanned radius passes
}

TEST_CASE("envelope-weighted scan variant (kappa-shifted exponent)") {
    const Grid g = make_grid(256, 1.0, Topology::periodic_torus);
    const auto set = synthetic_grad_set(g, 1.0);
    MinRadParams p = params_with_radii(64, 0.26);
    p.kappa = 0.25;

    // With a constant plain field chi == 1 the variant quantity is
    // R^{-(1/2-k)} * R^{-k} * 1 * (1 + 0 + 1) = 2 R^{-1/2}:
    // 2 R^{-1/2} <= 0.26 first holds at R = 64 (needs R >= 59.2).
    const std::vector<double> chi_plain(g.cells(), 1.0);
    auto res = chi_star_corollary(g, set, 128, 128, p, chi_plain);
    CHECK(!res.saturated);
    CHECK(res.chi == 64.0);

    // Scaling the plain field scales the quantity: chi == 16 needs
    // 32 R^{-1/2} <= 0.26, i.e. R >= 15147 => saturated.
    const std::vector<double> chi_big(g.cells(), 16.0);
    res = chi_star_corollary(g, set, 128, 128, p, chi_big);
    CHECK(res.saturated);

    // kappa must stay inside (0, exponent).
    MinRadParams bad = p;
    bad.kappa = 0.5;
    CHECK_THROWS_AS((void)chi_star_corollary(g, set, 128, 128, bad, chi_plain),
                    config_error);
    bad.kappa = 0.0;
    CHECK_THROWS_AS((void)chi_star_corollary(g, set, 128, 128, bad, chi_plain),
                    config_error);

    // Field size mismatch is rejected.
    const std::vector<double> wrong(g.cells() - 1, 1.0);
    CHECK_THROWS_AS((void)chi_star_corollary(g, set, 128, 128, p, wrong),
                    config_error);
}

TEST_CASE("cone regularization: spike closed form, idempotence, Lipschitz bound") {
    const Grid g = make_grid(16, 1.0, Topology::periodic_torus);
    const int n = g.n;
    const double L = 8.0;
    std::vector<int> sx, sy;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            sx.push_back(x);
            sy.push_back(y);
        }

    SUBCASE("constant field is a fixed point") {
        const std::vector<double> chi(g.cells(), 7.5);
        const auto reg = lipschitz_regularize(g, sx, sy, chi, L);
        for (double v : reg) CHECK(v == 7.5);
    }

    SUBCASE("single low spike spreads as min(M, m + d/L)") {
        const double M = 20.0, m = 2.0;
        std::vector<double> chi(g.cells(), M);
        const int px = 5, py = 11;
        chi[g.cell_index(px, py)] = m;
        const auto reg = lipschitz_regularize(g, sx, sy, chi, L);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double expect =
                    std::min(M, m + torus_dist(x, y, px, py, n) / L);
                CHECK(reg[g.cell_index(x, y)] ==
                      doctest::Approx(expect).epsilon(1e-14));
            }
        // Idempotence: the output already satisfies the cone bound.
        const auto reg2 = lipschitz_regularize(g, sx, sy, reg, L);
        for (int c = 0; c < g.cells(); ++c)
            CHECK(reg2[c] == doctest::Approx(reg[c]).epsilon(1e-14));
    }

    SUBCASE("random field: matches brute force, sits below the raw values, 1/L-Lipschitz") {
        Rng rng(derive_seed(77, 0));
        std::vector<double> chi(g.cells());
        for (double& v : chi) v = 16.0 + 40.0 * rng.uniform();
        const auto reg = lipschitz_regularize(g, sx, sy, chi, L);

        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double best = std::numeric_limits<double>::infinity();
                for (size_t s = 0; s < sx.size(); ++s) {
                    const double cand =
                        chi[g.cell_index(sx[s], sy[s])] +
                        torus_dist(x, y, sx[s], sy[s], n) / L;
                    best = std::min(best, cand);
                }
                CHECK(reg[g.cell_index(x, y)] ==
                      doctest::Approx(best).epsilon(1e-14));
            }

        for (int c = 0; c < g.cells(); ++c) CHECK(reg[c] <= chi[c] + 1e-14);

        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double here = reg[g.cell_index(x, y)];
                const double right = reg[g.cell_index(g.wrap(x + 1), y)];
                const double up = reg[g.cell_index(x, g.wrap(y + 1))];
                CHECK(std::abs(here - right) <= 1.0 / L + 1e-14);
                CHECK(std::abs(here - up) <= 1.0 / L + 1e-14);
            }
    }

    SUBCASE("sparse anchor sublattice matches brute force over the same seeds") {
        Rng rng(derive_seed(78, 0));
        std::vector<int> ax, ay;
        std::vector<double> av;
        for (int y = 0; y < n; y += 4)
            for (int x = 0; x < n; x += 4) {
                ax.push_back(x);
                ay.push_back(y);
                av.push_back(16.0 + 30.0 * rng.uniform());
            }
        const auto reg = lipschitz_regularize(g, ax, ay, av, L);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double best = std::numeric_limits<double>::infinity();
                for (size_t s = 0; s < ax.size(); ++s)
                    best = std::min(best, av[s] + torus_dist(x, y, ax[s], ay[s], n) / L);
                CHECK(reg[g.cell_index(x, y)] ==
                      doctest::Approx(best).epsilon(1e-14));
            }
    }

    SUBCASE("validation") {
        std::vector<double> chi(g.cells(), 1.0);
        CHECK_THROWS_AS((void)lipschitz_regularize(g, sx, sy, chi, 0.0), config_error);
        std::vector<int> short_x(sx.begin(), sx.end() - 1);
        CHECK_THROWS_AS((void)lipschitz_regularize(g, short_x, sy, chi, L), config_error);
    }
}

TEST_CASE("ball envelope of the minimal-radius field") {
    const Grid g = make_grid(32, 1.0, Topology::periodic_torus);
    std::vector<double> chi(g.cells(), 3.0);

    // Constant field: X_R = R^{-kappa} * 3 for any center.
    CHECK(envelope_X(g, chi, 4.0, 7, 9, 0.25) ==
          doctest::Approx(std::pow(4.0, -0.25) * 3.0).epsilon(1e-14));

    // A peak inside the ball dominates; just outside it does not.
    chi[g.cell_index(10, 9)] = 11.0;  // distance 3 from (7,9)
    CHECK(envelope_X(g, chi, 3.0, 7, 9, 0.0) == 11.0);
    CHECK(envelope_X(g, chi, 2.0, 7, 9, 0.0) == 3.0);

    CHECK_THROWS_AS((void)envelope_X(g, chi, 0.0, 0, 0, 0.25), config_error);
    const std::vector<double> wrong(g.cells() + 1, 1.0);
    CHECK_THROWS_AS((void)envelope_X(g, wrong, 2.0, 0, 0, 0.25), config_error);
}

TEST_CASE("anchored field sweep on a sampled coefficient") {
    const Grid g = make_grid(64, 1.0, Topology::periodic_torus);
    EnsembleSpec s;
    s.corr_len = 0.1;
    s.master_seed = 51;
    const auto a = sample_coefficient(g, s, 0);
    const auto set = solve_corrector_set(g, a, s.lambda);

    MinRadParams p = params_with_radii(16, 0.25);
    const auto field = minimal_radius_field(g, set, p, 16);

    CHECK(field.anchor_x.size() == 16);
    CHECK(field.chi.size() == 16);
    CHECK(field.regularized.size() == static_cast<size_t>(g.cells()));
    CHECK(field.saturated_count >= 0);
    CHECK(field.saturated_count <= 16);

    for (size_t k = 0; k < field.chi.size(); ++k) {
        CHECK(field.chi[k] >= p.floor());  // floor always binds from below
        const int ci = g.cell_index(field.anchor_x[k], field.anchor_y[k]);
        CHECK(field.regularized[ci] <= field.chi[k] + 1e-14);
    }
    // Regularized field obeys the 1/L cone bound across neighbors.
    for (int y = 0; y < g.n; ++y)
        for (int x = 0; x < g.n; ++x) {
            const double here = field.regularized[g.cell_index(x, y)];
            const double right = field.regularized[g.cell_index(g.wrap(x + 1), y)];
            CHECK(std::abs(here - right) <= 1.0 / p.L + 1e-14);
        }

    CHECK_THROWS_AS((void)minimal_radius_field(g, set, p, 7), config_error);

    const std::string path = "/tmp/homlab_chi_test.csv";
    export_chi_csv(g, field, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "x,y,chi,chi_regularized");
    int rows = 0;
    double x, y, c, r;
    char comma;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        ls >> x >> comma >> y >> comma >> c >> comma >> r;
        CHECK(c >= p.floor());
        CHECK(r <= c + 1e-14);
        ++rows;
    }
    CHECK(rows == 16);
    std::remove(path.c_str());
}

TEST_CASE("moment report: exact constant moments, monotonicity, stability gate") {
    // Constant value v0 across 8 samples x 16 anchors: moment(beta) = v0^beta
    // with a zero-width bootstrap interval.
    const double v0 = 16.0;
    std::vector<std::vector<double>> samples(8, std::vector<double>(16, v0));
    const std::vector<double> betas{1.0, 2.0, 3.0};
    const auto rep = moment_report(samples, betas, 100, 1);
    REQUIRE(rep.size() == 3);
    for (size_t k = 0; k < rep.size(); ++k) {
        const double expect = std::pow(v0, betas[k]);
        CHECK(rep[k].moment == doctest::Approx(expect).epsilon(1e-12));
        CHECK(rep[k].ci_lo == doctest::Approx(expect).epsilon(1e-12));
        CHECK(rep[k].ci_hi == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(moments_stable(rep, rep));

    // Values >= 1 make the raw moments monotone in beta.
    Rng rng(derive_seed(9, 9));
    std::vector<std::vector<double>> rnd(8);
    for (auto& srow : rnd) {
        srow.resize(32);
        for (double& v : srow) v = 16.0 + 48.0 * rng.uniform();
    }
    const auto rrep = moment_report(rnd, betas, 400, 2);
    CHECK(rrep[0].moment < rrep[1].moment);
    CHECK(rrep[1].moment < rrep[2].moment);
    for (const auto& e : rrep) {
        CHECK(e.ci_lo <= e.moment);
        CHECK(e.moment <= e.ci_hi);
        CHECK(e.ci_hi > e.ci_lo);
    }

    // Same-seed reruns are deterministic.
    const auto rrep2 = moment_report(rnd, betas, 400, 2);
    CHECK(rrep2[0].ci_lo == rrep[0].ci_lo);
    CHECK(rrep2[2].ci_hi == rrep[2].ci_hi);

    // Stability gate: a shift far beyond the combined interval half-widths fails.
    auto shifted = rrep;
    for (auto& e : shifted) e.moment += 100.0 * (e.ci_hi - e.ci_lo) + 1.0;
    CHECK(!moments_stable(rrep, shifted));
    auto nudged = rrep;
    for (auto& e : nudged) e.moment += 0.5 * (e.ci_hi - e.ci_lo);
    CHECK(moments_stable(rrep, nudged));

    // Preconditions: enough independent samples, enough anchors each.
    std::vector<std::vector<double>> few(7, std::vector<double>(16, v0));
    CHECK_THROWS_AS((void)moment_report(few, betas), config_error);
    std::vector<std::vector<double>> thin(8, std::vector<double>(16, v0));
    thin[3].resize(15);
    CHECK_THROWS_AS((void)moment_report(thin, betas), config_error);
}
