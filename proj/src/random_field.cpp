#include "homlab/random_field.hpp"

#include <fftw3.h>

#include <fstream>
#include <mutex>

namespace homlab {

namespace {
// FFTW planning is not thread-safe; synthesis is cheap next to the solves,
// so one lock around the whole transform keeps things simple.
std::mutex fftw_mutex;

double covariance_value(const EnsembleSpec& spec, double r) {
    const double l = spec.corr_len;
    switch (spec.covariance) {
        case Covariance::gaussian_bump:
            return std::exp(-(r * r) / (l * l));
        case Covariance::truncated_exponential:
            return r <= 5.0 * l ? std::exp(-r / l) : 0.0;
    }
    return 0.0;
}
}  // namespace

void validate_spec(const EnsembleSpec& spec, const Grid& grid) {
    if (!(spec.lambda > 0.0 && spec.lambda < 1.0))
        throw config_error("ensemble: lambda must lie in (0,1)");
    if (spec.n_samples < 1) throw config_error("ensemble: n_samples must be >= 1");
    if (!(spec.corr_len >= 2.0 * grid.h()))
        throw config_error("ensemble: corr_len must be >= 2h (grid-resolvable)");
}

std::vector<double> covariance_row(const Grid& grid, const EnsembleSpec& spec) {
    const int n = grid.n;
    const double h = grid.h();
    std::vector<double> c(grid.cells());
    for (int dy = 0; dy < n; ++dy)
        for (int dx = 0; dx < n; ++dx) {
            const double rx = std::min(dx, n - dx) * h;
            const double ry = std::min(dy, n - dy) * h;
            c[dy * n + dx] = covariance_value(spec, std::sqrt(rx * rx + ry * ry));
        }
    return c;
}

std::vector<double> sample_gaussian(const Grid& grid, const EnsembleSpec& spec, int sample_index) {
    if (!(spec.corr_len > 0.0)) throw config_error("ensemble: corr_len must be positive");
    const int n = grid.n;
    const size_t N = static_cast<size_t>(grid.cells());
    const std::vector<double> c = covariance_row(grid, spec);

    Rng rng(derive_seed(spec.master_seed, static_cast<uint64_t>(sample_index)));
    std::vector<double> za(N), zb(N);
    for (size_t i = 0; i < N; ++i) za[i] = rng.normal();
    for (size_t i = 0; i < N; ++i) zb[i] = rng.normal();

    std::vector<double> out(N);
    {
        std::lock_guard<std::mutex> lock(fftw_mutex);
        fftw_complex* buf = fftw_alloc_complex(N);
        fftw_plan fwd = fftw_plan_dft_2d(n, n, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
        fftw_plan bwd = fftw_plan_dft_2d(n, n, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);

        for (size_t i = 0; i < N; ++i) {
            buf[i][0] = c[i];
            buf[i][1] = 0.0;
        }
        fftw_execute(fwd);

        double neg_mass = 0.0, total_mass = 0.0;
        std::vector<double> lam(N);
        for (size_t i = 0; i < N; ++i) {
            const double ev = buf[i][0];
            total_mass += std::abs(ev);
            if (ev < 0.0) {
                neg_mass += -ev;
                lam[i] = 0.0;
            } else {
                lam[i] = ev;
            }
        }
        if (neg_mass > 0.01 * total_mass) {
            fftw_destroy_plan(fwd);
            fftw_destroy_plan(bwd);
            fftw_free(buf);
            throw embedding_error("circulant embedding failed: clipped spectral mass " +
                                  std::to_string(neg_mass / total_mass) + " exceeds 1%");
        }

        for (size_t i = 0; i < N; ++i) {
            const double s = std::sqrt(lam[i]);
            buf[i][0] = s * za[i];
            buf[i][1] = s * zb[i];
        }
        fftw_execute(bwd);
        const double scale = 1.0 / std::sqrt(static_cast<double>(N));
        for (size_t i = 0; i < N; ++i) out[i] = buf[i][0] * scale;

        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
        fftw_free(buf);
    }
    return out;
}

std::vector<double> to_coefficient(const std::vector<double>& g, double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw config_error("to_coefficient: lambda must lie in (0,1)");
    std::vector<double> a(g.size());
    const double span = 1.0 / lambda - lambda;
    for (size_t i = 0; i < g.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-g[i] * M_SQRT1_2);
        a[i] = lambda + span * cdf;
    }
    return a;
}

std::vector<double> sample_coefficient(const Grid& grid, const EnsembleSpec& spec, int sample_index) {
    return to_coefficient(sample_gaussian(grid, spec, sample_index), spec.lambda);
}

std::vector<double> checkerboard(const Grid& grid, double alpha, double beta, uint64_t master_seed,
                                 int sample_index) {
    if (!(alpha > 0.0 && beta > 0.0)) throw config_error("checkerboard: phases must be positive");
    Rng rng(derive_seed(master_seed, static_cast<uint64_t>(sample_index)));
    std::vector<double> a(grid.cells());
    for (auto& v : a) v = ((rng.next_u64() >> 33) & 1) ? alpha : beta;
    return a;
}

std::vector<double> laminate(const Grid& grid, double alpha, double beta, int stripe_cells) {
    if (!(alpha > 0.0 && beta > 0.0)) throw config_error("laminate: phases must be positive");
    if (stripe_cells < 1) throw config_error("laminate: stripe height must be positive");
    if (grid.n % (2 * stripe_cells) != 0)
        throw config_error("laminate: grid side must be divisible by twice the stripe height");
    std::vector<double> a(grid.cells());
    for (int cy = 0; cy < grid.n; ++cy) {
        const double v = ((cy / stripe_cells) % 2 == 0) ? alpha : beta;
        for (int cx = 0; cx < grid.n; ++cx) a[grid.cell_index(cx, cy)] = v;
    }
    return a;
}

std::vector<double> block_refine(const std::vector<double>& coarse, int n_coarse,
                                 int factor) {
    if (n_coarse < 1 || factor < 1)
        throw config_error("block_refine: sides must be positive");
    if (coarse.size() != static_cast<size_t>(n_coarse) * n_coarse)
        throw config_error("block_refine: field size does not match n_coarse");
    const int nf = n_coarse * factor;
    std::vector<double> fine(static_cast<size_t>(nf) * nf);
    for (int fy = 0; fy < nf; ++fy)
        for (int fx = 0; fx < nf; ++fx)
            fine[static_cast<size_t>(fy) * nf + fx] =
                coarse[static_cast<size_t>(fy / factor) * n_coarse + fx / factor];
    return fine;
}

void export_field_csv(const Grid& grid, const std::vector<double>& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("export_field_csv: cannot open " + path);
    out << "x,y,a\n";
    for (int iy = 0; iy < grid.n; ++iy)
        for (int ix = 0; ix < grid.n; ++ix) {
            const Vec2 c = grid.cell_center(ix, iy);
            out << format_g17(c.x) << ',' << format_g17(c.y) << ','
                << format_g17(a[grid.cell_index(ix, iy)]) << '\n';
        }
}

}  // namespace homlab
