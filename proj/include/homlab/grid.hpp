#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "homlab/util.hpp"

namespace homlab {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double L2 = vx * vx + vy * vy;
    double t = L2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / L2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

enum class Topology { periodic_torus, masked_domain };
enum class Shape { unit_square, l_shape, sawtooth };

/**
 * Uniform n x n cell grid on [0, extent)^2. Scalar fields live at cell
 * centers ((i+1/2)h, (j+1/2)h); Q1 nodal fields use n^2 nodes on the torus
 * (periodic identification) and (n+1)^2 nodes on masked domains.
 */
struct Grid {
    int n = 0;
    double extent = 1.0;
    Topology topology = Topology::periodic_torus;

    double h() const { return extent / n; }
    int cells() const { return n * n; }
    int nodes_per_side() const { return topology == Topology::periodic_torus ? n : n + 1; }
    int nodes() const { return nodes_per_side() * nodes_per_side(); }
    int cell_index(int ix, int iy) const { return iy * n + ix; }
    Vec2 cell_center(int ix, int iy) const { return {(ix + 0.5) * h(), (iy + 0.5) * h()}; }
    int wrap(int i) const { return ((i % n) + n) % n; }
};

Grid make_grid(int n, double extent, Topology topology);

/**
 * Polygonal domain carved out of the bounding grid. `inside` flags cells whose
 * center lies in the open domain; `delta` is the exact Euclidean distance from
 * the cell center to the boundary polygon, shifted by h/2 and clamped at 0 so
 * boundary-adjacent cells carry exactly 0.
 */
struct DomainMask {
    Grid grid;
    Shape shape = Shape::unit_square;
    int teeth = 0;  // sawtooth only
    std::vector<uint8_t> inside;
    std::vector<double> delta;
    std::vector<Vec2> polygon;  // CCW, interior on the left
    double r0 = 0.0;            // diameter of the domain

    int inside_count() const;
};

DomainMask make_mask(const Grid& grid, Shape shape, int teeth = 4);

/**
 * Arclength (along the polygon from its first vertex) of the boundary point
 * closest to p; if total is non-null it receives the perimeter.
 */
double polygon_arclength(const DomainMask& mask, Vec2 p, double* total = nullptr);

enum class BallMode { full_ball, intersect_domain };

/**
 * Mean of `field` over cells whose center lies in the closed ball B_radius(center).
 * Wraps periodically on the torus; intersect_domain restricts to inside cells.
 * Throws empty_region_error when no cell qualifies, config_error for radius < h.
 */
double ball_average(const Grid& grid, const std::vector<double>& field, Vec2 center, double radius,
                    BallMode mode, const DomainMask* mask = nullptr);

/** O_r: inside cells with delta <= r. */
std::vector<uint8_t> layer_set(const DomainMask& mask, double r);

/**
 * Bulk ball averages around every cell center via row prefix sums.
 * Cost per query is O(radius/h) instead of O((radius/h)^2).
 */
class BallAverager {
  public:
    BallAverager(const Grid& grid, const std::vector<double>& field, const DomainMask* mask = nullptr);

    /** Average over B_radius(center of cell (cx, cy)); nan if empty. */
    double average(int cx, int cy, double radius) const;
    /** Sum and count variant used by the geometry checks. */
    void sum_count(int cx, int cy, double radius, double& sum, long& count) const;

  private:
    const Grid grid_;
    bool masked_;
    std::vector<double> row_prefix_;   // (n+1) per row, field masked to inside
    std::vector<double> count_prefix_; // inside-cell counts
    void row_sum(int iy, int x0, int x1, double& s, double& c) const;
};

void export_mask_csv(const DomainMask& mask, const std::string& path);

}  // namespace homlab
