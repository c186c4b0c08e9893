#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace homlab {

/** Error taxonomy. The CLI maps config_error -> exit 2, solver_error -> exit 3. */
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct solver_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct embedding_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct empty_region_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct degenerate_kernel_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/** Derives a decorrelated stream seed for (master_seed, index). */
inline uint64_t derive_seed(uint64_t master_seed, uint64_t index) {
    uint64_t s = master_seed ^ (0xA0761D6478BD642FULL * (index + 1));
    splitmix64(s);
    return splitmix64(s);
}

/**
 * Deterministic RNG: splitmix64-seeded xoshiro256** core with an explicit
 * Box-Muller normal. Distribution output is pinned by this code, not by the
 * standard library, so identical configs give identical bytes everywhere.
 */
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        uint64_t s = seed;
        for (auto& w : s_) w = splitmix64(s);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /** Uniform on (0,1]; never returns 0 so log() below is safe. */
    double uniform() {
        return ((next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/** Symmetric 2x2 tensor with the handful of operations the lab needs. */
struct Mat2 {
    double a11 = 0.0, a12 = 0.0, a22 = 0.0;

    std::pair<double, double> apply(double x, double y) const {
        return {a11 * x + a12 * y, a12 * x + a22 * y};
    }
    std::pair<double, double> eigenvalues() const {
        const double tr = a11 + a22;
        const double disc = std::sqrt(std::max(0.0, 0.25 * (a11 - a22) * (a11 - a22) + a12 * a12));
        return {0.5 * tr - disc, 0.5 * tr + disc};
    }
    double quadratic(double x, double y) const { return a11 * x * x + 2.0 * a12 * x * y + a22 * y * y; }
};

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    int n_points = 0;
};

/** Ordinary least squares y = slope*x + intercept. */
inline FitResult ols_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    const int n = static_cast<int>(xs.size());
    if (n < 2 || ys.size() != xs.size()) throw config_error("ols_fit: need >= 2 paired points");
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0) throw config_error("ols_fit: degenerate abscissae");
    FitResult r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    r.r_squared = (syy == 0.0) ? 1.0 : (sxy * sxy) / (sxx * syy);
    r.n_points = n;
    return r;
}

struct BootstrapCI {
    double estimate = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/** Percentile bootstrap CI for the mean (level ~95%). */
inline BootstrapCI bootstrap_mean_ci(const std::vector<double>& xs, int n_boot, uint64_t seed) {
    if (xs.empty()) throw config_error("bootstrap_mean_ci: empty sample");
    BootstrapCI ci;
    ci.estimate = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    Rng rng(seed);
    std::vector<double> means(n_boot);
    const int n = static_cast<int>(xs.size());
    for (int b = 0; b < n_boot; ++b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += xs[rng.uniform_int(n)];
        means[b] = s / n;
    }
    std::sort(means.begin(), means.end());
    ci.lo = means[static_cast<size_t>(0.025 * (n_boot - 1))];
    ci.hi = means[static_cast<size_t>(0.975 * (n_boot - 1))];
    return ci;
}

/** Formats a double with 17 significant digits (round-trip exact). */
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double mu_d2(double x) { return std::sqrt(std::log(2.0 + std::abs(x))); }

}  // namespace homlab
