#include "homlab/grid.hpp"

#include <fstream>
#include <limits>

namespace homlab {

Grid make_grid(int n, double extent, Topology topology) {
    if (n < 4) throw config_error("make_grid: n must be >= 4, got " + std::to_string(n));
    if (!(extent > 0.0)) throw config_error("make_grid: extent must be positive");
    return Grid{n, extent, topology};
}

namespace {

std::vector<Vec2> shape_polygon(Shape shape, double E, int teeth) {
    switch (shape) {
        case Shape::unit_square:
            return {{0, 0}, {E, 0}, {E, E}, {0, E}};
        case Shape::l_shape:
            return {{0, 0}, {E, 0}, {E, E / 2}, {E / 2, E / 2}, {E / 2, E}, {0, E}};
        case Shape::sawtooth: {
            std::vector<Vec2> poly;
            const double w = E / teeth;
            for (int m = 0; m < teeth; ++m) {
                poly.push_back({m * w, 0.0});
                poly.push_back({(m + 0.5) * w, 0.5 * w});
            }
            poly.push_back({E, 0.0});
            poly.push_back({E, E});
            poly.push_back({0.0, E});
            return poly;
        }
    }
    throw config_error("shape_polygon: unknown shape");
}

bool inside_shape(Shape shape, double E, int teeth, Vec2 p) {
    if (p.x <= 0.0 || p.x >= E || p.y <= 0.0 || p.y >= E) return false;
    switch (shape) {
        case Shape::unit_square:
            return true;
        case Shape::l_shape:
            return !(p.x > E / 2 && p.y > E / 2);
        case Shape::sawtooth: {
            const double w = E / teeth;
            const double f = p.x - w * std::floor(p.x / w);
            return p.y > std::min(f, w - f);
        }
    }
    return false;
}

double polygon_distance(const std::vector<Vec2>& poly, Vec2 p) {
    double d = std::numeric_limits<double>::max();
    for (size_t i = 0; i < poly.size(); ++i) {
        const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
        d = std::min(d, point_segment_distance(p, a, b));
    }
    return d;
}

}  // namespace

int DomainMask::inside_count() const {
    int c = 0;
    for (uint8_t v : inside) c += v;
    return c;
}

DomainMask make_mask(const Grid& grid, Shape shape, int teeth) {
    if (grid.topology != Topology::masked_domain)
        throw config_error("make_mask: grid topology must be masked-domain");
    if (shape == Shape::sawtooth) {
        if (teeth < 1) throw config_error("make_mask: sawtooth needs teeth >= 1");
        if (grid.n < 4 * teeth) throw config_error("make_mask: grid too coarse for tooth count");
    }
    DomainMask m;
    m.grid = grid;
    m.shape = shape;
    m.teeth = shape == Shape::sawtooth ? teeth : 0;
    m.polygon = shape_polygon(shape, grid.extent, teeth);
    m.inside.assign(grid.cells(), 0);
    m.delta.assign(grid.cells(), 0.0);
    const double h = grid.h();
    for (int iy = 0; iy < grid.n; ++iy)
        for (int ix = 0; ix < grid.n; ++ix) {
            const Vec2 c = grid.cell_center(ix, iy);
            const int idx = grid.cell_index(ix, iy);
            if (!inside_shape(shape, grid.extent, teeth, c)) continue;
            m.inside[idx] = 1;
            m.delta[idx] = std::max(0.0, polygon_distance(m.polygon, c) - 0.5 * h);
        }
    for (size_t i = 0; i < m.polygon.size(); ++i)
        for (size_t j = i + 1; j < m.polygon.size(); ++j) {
            const double dx = m.polygon[i].x - m.polygon[j].x, dy = m.polygon[i].y - m.polygon[j].y;
            m.r0 = std::max(m.r0, std::sqrt(dx * dx + dy * dy));
        }
    return m;
}

double polygon_arclength(const DomainMask& mask, Vec2 p, double* total) {
    const auto& poly = mask.polygon;
    if (poly.size() < 3) throw config_error("polygon_arclength: degenerate polygon");
    double best = std::numeric_limits<double>::infinity();
    double s_best = 0.0, acc = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
        const double vx = b.x - a.x, vy = b.y - a.y;
        const double len = std::sqrt(vx * vx + vy * vy);
        double t = len > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / (len * len) : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d < best) {
            best = d;
            s_best = acc + t * len;
        }
        acc += len;
    }
    if (total != nullptr) *total = acc;
    return s_best;
}

double ball_average(const Grid& grid, const std::vector<double>& field, Vec2 center, double radius,
                    BallMode mode, const DomainMask* mask) {
    const double h = grid.h();
    if (radius < h) throw config_error("ball_average: radius must be >= h");
    if (mode == BallMode::intersect_domain && mask == nullptr)
        throw config_error("ball_average: intersect-domain needs a mask");
    if (field.size() != static_cast<size_t>(grid.cells()))
        throw config_error("ball_average: field size mismatch");

    const bool torus = grid.topology == Topology::periodic_torus;
    const int lox = static_cast<int>(std::floor((center.x - radius) / h - 0.5));
    const int hix = static_cast<int>(std::ceil((center.x + radius) / h - 0.5));
    const int loy = static_cast<int>(std::floor((center.y - radius) / h - 0.5));
    const int hiy = static_cast<int>(std::ceil((center.y + radius) / h - 0.5));
    const double r2 = radius * radius * (1.0 + 1e-12);

    double sum = 0.0;
    long count = 0;
    for (int iy = loy; iy <= hiy; ++iy) {
        int gy = iy;
        if (torus)
            gy = grid.wrap(iy);
        else if (iy < 0 || iy >= grid.n)
            continue;
        for (int ix = lox; ix <= hix; ++ix) {
            int gx = ix;
            if (torus)
                gx = grid.wrap(ix);
            else if (ix < 0 || ix >= grid.n)
                continue;
            const double cx = (ix + 0.5) * h, cy = (iy + 0.5) * h;
            const double dx = cx - center.x, dy = cy - center.y;
            if (dx * dx + dy * dy > r2) continue;
            const int idx = grid.cell_index(gx, gy);
            if (mode == BallMode::intersect_domain && !mask->inside[idx]) continue;
            sum += field[idx];
            ++count;
        }
    }
    if (count == 0) throw empty_region_error("ball_average: no cells in region");
    return sum / count;
}

std::vector<uint8_t> layer_set(const DomainMask& mask, double r) {
    std::vector<uint8_t> out(mask.grid.cells(), 0);
    for (int i = 0; i < mask.grid.cells(); ++i)
        if (mask.inside[i] && mask.delta[i] <= r) out[i] = 1;
    return out;
}

BallAverager::BallAverager(const Grid& grid, const std::vector<double>& field, const DomainMask* mask)
    : grid_(grid), masked_(mask != nullptr) {
    if (field.size() != static_cast<size_t>(grid.cells()))
        throw config_error("BallAverager: field size mismatch");
    const int n = grid.n;
    row_prefix_.assign(static_cast<size_t>(n) * (n + 1), 0.0);
    count_prefix_.assign(static_cast<size_t>(n) * (n + 1), 0.0);
    for (int iy = 0; iy < n; ++iy) {
        double* rp = &row_prefix_[static_cast<size_t>(iy) * (n + 1)];
        double* cp = &count_prefix_[static_cast<size_t>(iy) * (n + 1)];
        for (int ix = 0; ix < n; ++ix) {
            const int idx = grid.cell_index(ix, iy);
            const bool in = !masked_ || mask->inside[idx];
            rp[ix + 1] = rp[ix] + (in ? field[idx] : 0.0);
            cp[ix + 1] = cp[ix] + (in ? 1.0 : 0.0);
        }
    }
}

void BallAverager::row_sum(int iy, int x0, int x1, double& s, double& c) const {
    // closed cell-index interval [x0, x1] on row iy, already wrapped/clamped by caller
    const double* rp = &row_prefix_[static_cast<size_t>(iy) * (grid_.n + 1)];
    const double* cp = &count_prefix_[static_cast<size_t>(iy) * (grid_.n + 1)];
    s += rp[x1 + 1] - rp[x0];
    c += cp[x1 + 1] - cp[x0];
}

void BallAverager::sum_count(int cx, int cy, double radius, double& sum, long& count) const {
    const double h = grid_.h();
    const int n = grid_.n;
    const bool torus = grid_.topology == Topology::periodic_torus;
    const int R = static_cast<int>(std::floor(radius / h + 1e-12));
    const double q = radius * radius / (h * h) * (1.0 + 1e-12);
    double s = 0.0, c = 0.0;
    for (int dy = -R; dy <= R; ++dy) {
        const int iy = cy + dy;
        int gy = iy;
        if (torus)
            gy = grid_.wrap(iy);
        else if (iy < 0 || iy >= n)
            continue;
        const int w = static_cast<int>(std::floor(std::sqrt(std::max(0.0, q - double(dy) * dy)) + 1e-12));
        int x0 = cx - w, x1 = cx + w;
        if (torus) {
            if (x1 - x0 + 1 >= n) {
                row_sum(gy, 0, n - 1, s, c);
                continue;
            }
            const int g0 = grid_.wrap(x0), g1 = grid_.wrap(x1);
            if (g0 <= g1) {
                row_sum(gy, g0, g1, s, c);
            } else {
                row_sum(gy, g0, n - 1, s, c);
                row_sum(gy, 0, g1, s, c);
            }
        } else {
            x0 = std::max(x0, 0);
            x1 = std::min(x1, n - 1);
            if (x0 > x1) continue;
            row_sum(gy, x0, x1, s, c);
        }
    }
    sum = s;
    count = static_cast<long>(c + 0.5);
}

double BallAverager::average(int cx, int cy, double radius) const {
    double s;
    long c;
    sum_count(cx, cy, radius, s, c);
    return c > 0 ? s / c : std::numeric_limits<double>::quiet_NaN();
}

void export_mask_csv(const DomainMask& mask, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("export_mask_csv: cannot open " + path);
    out << "x,y,inside,delta\n";
    for (int iy = 0; iy < mask.grid.n; ++iy)
        for (int ix = 0; ix < mask.grid.n; ++ix) {
            const Vec2 c = mask.grid.cell_center(ix, iy);
            const int idx = mask.grid.cell_index(ix, iy);
            out << format_g17(c.x) << ',' << format_g17(c.y) << ',' << int(mask.inside[idx]) << ','
                << format_g17(mask.delta[idx]) << '\n';
        }
}

}  // namespace homlab
