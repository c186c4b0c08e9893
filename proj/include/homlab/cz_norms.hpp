#pragma once

// Averaged Calderon-Zygmund functionals over the Monte Carlo ensemble.
//
// Gradients are never measured pointwise; they enter through local ball
// averages, either over the minimal-radius balls U(x) = B_{r(x)}(x) cap Omega
// (the pathwise, "quenched" form and its weighted variant) or over fixed
// eps-balls combined with an ensemble moment (the "annealed" forms).  The
// module also carries the Muckenhoupt weight machinery those functionals are
// weighted with, and the covering/geometry consistency checks that make the
// ball-averaged quantities comparable to plain integrals.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "homlab/fem.hpp"
#include "homlab/grid.hpp"

namespace homlab {

enum class WeightKind { unit, distance_power, radial_power };

/**
 * Strictly positive per-cell weight. distance_power realizes
 * omega(x) = (delta(x) + offset)^sigma: the distance to the boundary of the
 * Minkowski offset-enlargement of the domain, positive on the whole domain.
 * radial_power is |x - center|^alpha; place the center on a grid node so no
 * cell center collides with the singularity.
 */
struct Weight {
    WeightKind kind = WeightKind::unit;
    double exponent = 0.0;
    std::vector<double> values;
};

const char* weight_kind_name(WeightKind kind);

Weight unit_weight(const Grid& grid);
Weight distance_power_weight(const DomainMask& mask, double sigma, double offset);
Weight radial_power_weight(const Grid& grid, double alpha, Vec2 center);

/** Random ball budget for the Muckenhoupt quotient scan. */
struct BallSampler {
    int n_balls = 256;
    double min_radius = 0.0;  // <= 0: defaults to 2h
    double max_radius = 0.0;  // <= 0: defaults to extent/3
    uint64_t seed = 2024;
};

struct MuckenhouptEstimate {
    double constant = 1.0;  // max sampled quotient: a lower bound on the true sup
    int balls = 0;          // sampling budget spent
    double q = 2.0;
};

/**
 * Sampled A_q characteristic of the weight: the worst quotient
 * (avg_B w)(avg_B w^{-1/(q-1)})^{q-1} over random balls (q > 1), or
 * (avg_B w) sup_B(1/w) for q = 1.  With a mask, centers are inside cells and
 * averages run over inside cells only.  Throws config_error for q < 1.
 */
MuckenhouptEstimate muckenhoupt_constant(const Grid& grid, const Weight& weight, double q,
                                         const BallSampler& sampler,
                                         const DomainMask* mask = nullptr);

/**
 * Numerical membership probe: re-estimates the constant on successively
 * refined grids (n, 2n, ... `levels` refinements, same weight function) and
 * reports true when the estimate keeps growing by more than growth_factor
 * overall -- the signature of a weight whose quotient is unbounded.
 */
bool muckenhoupt_diverges(const std::function<Weight(const Grid&)>& make_weight, int n_base,
                          double extent, Topology topology, double q, const BallSampler& sampler,
                          int levels = 2, double growth_factor = 1.5);

enum class CzFlavor { quenched_A, annealed_B, weighted_C, weighted_D };
enum class CzSide { lhs, rhs };

const char* cz_flavor_name(CzFlavor flavor);

/**
 * One evaluated functional: both sides of the estimate, the exponents it was
 * evaluated at, and whether those exponents sit in the Lipschitz-admissible
 * window |1/p - 1/2| <= 1/(2d) + theta (outside the window the value is still
 * reported so blow-up can be observed).
 */
struct CzFunctional {
    CzFlavor flavor = CzFlavor::quenched_A;
    double p = 2.0, q = 2.0, p_bar = 0.0;
    double epsilon = 0.0;
    double lhs = 0.0, rhs = 0.0;
    WeightKind weight_kind = WeightKind::unit;
    bool exponents_in_window = true;

    double value(CzSide side) const { return side == CzSide::lhs ? lhs : rhs; }
    double ratio() const;
};

/** |1/p - 1/2| <= 1/(2d) + theta in d = 2. */
bool exponent_in_window(double p, double theta = 0.05);

/**
 * Pathwise functional with minimal-radius balls:
 *   lhs = ( sum_x (avg_{U(x)} |grad u|^2)^{p/2} h^2 )^{1/p},  U(x) = B_{radius(x)}(x) cap Omega,
 * rhs likewise with |f|^2.  radius is the per-cell ball radius in physical
 * units (eps times the rescaled regularized minimal radius) and must be >= h.
 */
CzFunctional cz_quenched(const DomainMask& mask, const CellGradient& grad_u,
                         const std::vector<double>& f, const std::vector<double>& radius,
                         double p, double theta_window = 0.05);

/**
 * Ensemble functional with fixed eps-balls:
 *   lhs = ( sum_x < (avg_{U_eps(x)} |grad u_s|^2)^{p/2} >^{q/p} w(x) h^2 )^{1/q},
 *   rhs = ( sum_x   (avg_{U_eps(x)} |f|^2)^{q/2}            w(x) h^2 )^{1/q},
 * the deterministic-data bracket <(.)^{p_bar/2}>^{q/p_bar} collapsing to the
 * exponent q/2.  Requires >= 8 samples and p_bar > p.  Unit weight reports
 * flavor annealed_B, any other weight reports weighted_D.
 */
CzFunctional cz_annealed(const DomainMask& mask, const std::vector<CellGradient>& grads,
                         const std::vector<double>& f, double epsilon, double p, double q,
                         double p_bar, const Weight& weight, double theta_window = 0.05);

/**
 * Weighted ensemble functional with minimal-radius balls and the same
 * exponent pair (p, q) on both sides (the A_q-weighted estimate).
 */
CzFunctional cz_weighted_star(const DomainMask& mask, const std::vector<CellGradient>& grads,
                              const std::vector<double>& f, const std::vector<double>& radius,
                              double p, double q, const Weight& weight,
                              double theta_window = 0.05);

/**
 * Covering inequalities behind the ball-averaged functionals, checked on a
 * nonnegative field with u*(x) := avg_{U(x)} f:
 *   local_ball          (avg_{U(x0)} f)^{1/s} vs avg over D_{5r}(X) of u*^{1/s},
 *                       for boundary balls B_r(X) with r < radius(x0)/4;
 *   annulus_chain       avg_{D_r(X)} f <= C avg_{D_2r}(X) u* <= C' avg_{D_7r(X)} f,
 *                       for r >= radius(X)/4;
 *   global_equivalence  integral of f vs integral of u* over the domain.
 * Returns the worst lhs/rhs ratio over n_probes sampled boundary points and
 * admissible radii (worst of both directions for the chain and the global
 * mode).  mask may be null on tori, where every ball is interior.
 */
enum class GeometryMode { local_ball, annulus_chain, global_equivalence };

double geometry_check(const Grid& grid, const DomainMask* mask, const std::vector<double>& field,
                      const std::vector<double>& radius, GeometryMode mode, double s = 1.0,
                      int n_probes = 64, uint64_t seed = 7);

/** CSV rows: flavor,p,q,p_bar,epsilon,lhs,rhs,ratio,weight_kind. */
void export_cz_csv(const std::vector<CzFunctional>& rows, const std::string& path);

}  // namespace homlab
