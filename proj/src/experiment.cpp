#include "homlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "homlab/correctors.hpp"
#include "homlab/cz_norms.hpp"
#include "homlab/fem.hpp"
#include "homlab/fluctuation.hpp"
#include "homlab/two_scale.hpp"

namespace homlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ------------------------------------------------------------------ names

const char* kKindNames[] = {"field",  "correctors",  "homogenize", "minrad",
                            "cz",     "fluctuation", "report",     "all"};

const char* shape_name(Shape s) {
    switch (s) {
        case Shape::unit_square: return "unit-square";
        case Shape::l_shape: return "l-shape";
        case Shape::sawtooth: return "sawtooth";
    }
    return "unit-square";
}

Shape shape_from_name(const std::string& name) {
    if (name == "unit-square" || name == "square") return Shape::unit_square;
    if (name == "l-shape") return Shape::l_shape;
    if (name == "sawtooth") return Shape::sawtooth;
    throw config_error("config: unknown shape '" + name + "'");
}

const char* covariance_name(Covariance c) {
    return c == Covariance::gaussian_bump ? "gaussian-bump" : "truncated-exponential";
}

Covariance covariance_from_name(const std::string& name) {
    if (name == "gaussian-bump") return Covariance::gaussian_bump;
    if (name == "truncated-exponential") return Covariance::truncated_exponential;
    throw config_error("config: unknown covariance '" + name + "'");
}

const char* coefficient_kind_name(CoefficientKind k) {
    switch (k) {
        case CoefficientKind::gaussian: return "gaussian";
        case CoefficientKind::checkerboard: return "checkerboard";
        case CoefficientKind::laminate: return "laminate";
        case CoefficientKind::constant: return "constant";
    }
    return "gaussian";
}

CoefficientKind coefficient_kind_from_name(const std::string& name) {
    if (name == "gaussian") return CoefficientKind::gaussian;
    if (name == "checkerboard") return CoefficientKind::checkerboard;
    if (name == "laminate") return CoefficientKind::laminate;
    if (name == "constant") return CoefficientKind::constant;
    throw config_error("config: unknown coefficient kind '" + name + "'");
}

// ------------------------------------------------------- seed sub-streams
//
// Every kind draws its fields from a sub-master derived from the config
// master seed, so kinds sharing an output directory never reuse a stream
// and the schedule cannot influence any sample.

constexpr uint64_t kSubField = 101;
constexpr uint64_t kSubCorrectors = 202;
constexpr uint64_t kSubAbar = 303;
constexpr uint64_t kSubHomogenize = 400;  // + epsilon index
constexpr uint64_t kSubMinrad = 505;
constexpr uint64_t kSubMoments = 506;
constexpr uint64_t kSubCz = 600;          // + epsilon index
constexpr uint64_t kSubFluct = 700;       // + epsilon index
constexpr uint64_t kSubVarianceFit = 707;

// ---------------------------------------------------------------- files

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open output file " + path.string());
    out << content;
}

std::string sample_tag(int s) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", s);
    return buf;
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // raw tokens, order preserved

    int col(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw config_error("CSV is missing column '" + name + "'");
    }
    double num(size_t row, int c) const { return std::strtod(rows[row][c].c_str(), nullptr); }
};

Csv read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot read " + path.string());
    Csv csv;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> tokens;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) tokens.push_back(tok);
        if (first) {
            csv.header = tokens;
            first = false;
        } else {
            csv.rows.push_back(tokens);
        }
    }
    return csv;
}

// Concatenates task CSV files that share a header into one combined table,
// byte for byte (the determinism contract rests on this: combined artifacts
// are always rebuilt from the task files).
void concat_csv(const std::vector<fs::path>& parts, const fs::path& out_path) {
    std::ofstream out(out_path);
    if (!out) throw config_error("cannot open output file " + out_path.string());
    bool wrote_header = false;
    for (const auto& part : parts) {
        std::ifstream in(part);
        if (!in) throw config_error("cannot read " + part.string());
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (first) {
                if (!wrote_header) {
                    out << line << "\n";
                    wrote_header = true;
                }
                first = false;
                continue;
            }
            out << line << "\n";
        }
    }
}

// ------------------------------------------------------------- task pool

// Runs fn(i) for every listed index across `workers` threads.  Exceptions
// are rethrown after the pool drains, keeping the lowest failing index so
// the abort is schedule-independent; completed tasks keep their files.
void parallel_tasks(const std::vector<int>& indices, int workers,
                    const std::function<void(int)>& fn) {
    if (indices.empty()) return;
    const int k = std::max(1, std::min<int>(workers, static_cast<int>(indices.size())));
    if (k == 1) {
        for (const int i : indices) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex err_mu;
    int err_idx = INT_MAX;
    std::exception_ptr err;
    std::vector<std::thread> pool;
    pool.reserve(k);
    for (int t = 0; t < k; ++t) {
        pool.emplace_back([&]() {
            while (true) {
                const size_t slot = next.fetch_add(1);
                if (slot >= indices.size()) return;
                const int i = indices[slot];
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (i < err_idx) {
                        err_idx = i;
                        err = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// Annotates module errors with the failing task so aborts are actionable.
template <typename Fn>
void annotated(const std::string& label, Fn&& fn) {
    try {
        fn();
    } catch (const solver_failure& e) {
        throw solver_failure(label + ": " + e.what(), e.report);
    } catch (const config_error& e) {
        throw config_error(label + ": " + e.what());
    }
}

std::string eps_label(const char* kind, double eps, int sample) {
    std::string s = std::string(kind) + " eps=" + format_g17(eps);
    if (sample >= 0) s += " sample=" + std::to_string(sample);
    return s;
}

// ------------------------------------------------------------ coefficients

std::vector<double> make_coefficient(const Grid& grid, const ExperimentConfig& cfg,
                                     uint64_t sub_master, int sample, double scale) {
    const CoefficientBlock& co = cfg.coefficient;
    switch (co.kind) {
        case CoefficientKind::gaussian: {
            EnsembleSpec es = cfg.ensemble;
            es.master_seed = sub_master;
            es.corr_len = cfg.ensemble.corr_len * scale;
            validate_spec(es, grid);
            return sample_coefficient(grid, es, sample);
        }
        case CoefficientKind::checkerboard: {
            if (co.block < 1 || grid.n % co.block != 0)
                throw config_error("checkerboard block must divide the grid side");
            if (co.block == 1) return checkerboard(grid, co.alpha, co.beta, sub_master, sample);
            const Grid coarse = make_grid(grid.n / co.block, grid.extent, Topology::periodic_torus);
            return block_refine(checkerboard(coarse, co.alpha, co.beta, sub_master, sample),
                                coarse.n, co.block);
        }
        case CoefficientKind::laminate:
            return laminate(grid, co.alpha, co.beta, co.stripe_cells);
        case CoefficientKind::constant:
            return std::vector<double>(grid.cells(), co.value);
    }
    throw config_error("unknown coefficient kind");
}

double coefficient_lambda(const ExperimentConfig& cfg) {
    const CoefficientBlock& co = cfg.coefficient;
    switch (co.kind) {
        case CoefficientKind::gaussian:
            return cfg.ensemble.lambda;
        case CoefficientKind::checkerboard:
        case CoefficientKind::laminate:
            return std::min(std::min(co.alpha, co.beta), 1.0 / std::max(co.alpha, co.beta));
        case CoefficientKind::constant:
            return std::min(1.0 - 1e-9, std::min(co.value, 1.0 / co.value));
    }
    return cfg.ensemble.lambda;
}

// Lightweight corrector solve: the two potentials and their gradients plus
// the effective tensor (no flux correctors), enough for the expansion and
// commutator pipelines at half the cost of the full set.
struct LightCorrectors {
    std::array<std::vector<double>, 2> phi_cell;
    std::array<CellGradient, 2> grad;
    Mat2 a_eff;
    std::array<SolveReport, 2> reports;
};

LightCorrectors light_correctors(const Grid& torus, const std::vector<double>& a, double lambda) {
    LightCorrectors lc;
    for (int i = 0; i < 2; ++i) {
        auto [phi, rep] = solve_corrector(torus, a, i);
        lc.grad[i] = gradient(torus, phi);
        lc.phi_cell[i] = node_to_cell(torus, phi);
        lc.reports[i] = rep;
    }
    lc.a_eff = effective_tensor(torus, a, lc.grad, lambda);
    return lc;
}

// ------------------------------------------------------------- run context

struct RunCtx {
    const ExperimentConfig& cfg;
    fs::path out;
    fs::path tasks;
    bool solve_missing = true;  // false: report mode, combine existing tasks only
    ExperimentResult* result = nullptr;
    std::mutex io;

    uint64_t master() const { return cfg.ensemble.master_seed; }
    int samples() const { return cfg.ensemble.n_samples; }
};

// Returns the missing subset of per-sample task paths; counts skips.
std::vector<int> missing_indices(RunCtx& ctx, const std::vector<fs::path>& paths) {
    std::vector<int> missing;
    for (size_t i = 0; i < paths.size(); ++i) {
        if (fs::exists(paths[i]))
            ctx.result->tasks_skipped += 1;
        else
            missing.push_back(static_cast<int>(i));
    }
    return missing;
}

void note_csv(RunCtx& ctx, const fs::path& p) { ctx.result->csv_paths.push_back(p.string()); }
void note_report(RunCtx& ctx, const fs::path& p) { ctx.result->report_paths.push_back(p.string()); }

void write_json(RunCtx& ctx, const fs::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
    note_report(ctx, path);
}

// Sum of squares over inside cells of the cell-average of a nodal field and
// of its Q1 gradient (outside cells touch pinned nodes and must not count).
double l2_inside(const Grid& grid, const DomainMask& mask, const std::vector<double>& nodal) {
    const std::vector<double> cell = node_to_cell(grid, nodal);
    double acc = 0.0;
    for (int c = 0; c < grid.cells(); ++c)
        if (mask.inside[c]) acc += cell[c] * cell[c];
    return std::sqrt(acc * grid.h() * grid.h());
}

double h1_inside(const Grid& grid, const DomainMask& mask, const std::vector<double>& nodal) {
    const CellGradient g = gradient(grid, nodal);
    double acc = 0.0;
    for (int c = 0; c < grid.cells(); ++c)
        if (mask.inside[c]) acc += g.gx[c] * g.gx[c] + g.gy[c] * g.gy[c];
    return std::sqrt(acc * grid.h() * grid.h());
}

// --------------------------------------------------------------- kinds

bool kind_field(RunCtx& ctx) {
    const Grid torus = make_grid(ctx.cfg.n, ctx.cfg.extent, Topology::periodic_torus);
    std::vector<fs::path> paths;
    for (int s = 0; s < ctx.samples(); ++s)
        paths.push_back(ctx.tasks / ("field_" + sample_tag(s) + ".csv"));
    const std::vector<int> missing = missing_indices(ctx, paths);
    if (!ctx.solve_missing && !missing.empty()) return false;

    const uint64_t sub = derive_seed(ctx.master(), kSubField);
    parallel_tasks(missing, ctx.cfg.workers, [&](int s) {
        annotated("field sample=" + std::to_string(s), [&]() {
            const auto a = make_coefficient(torus, ctx.cfg, sub, s, 1.0);
            std::lock_guard<std::mutex> lock(ctx.io);
            export_field_csv(torus, a, paths[s].string());
            ctx.result->tasks_run += 1;
        });
    });

    std::string summary = "sample,mean,min,max\n";
    for (int s = 0; s < ctx.samples(); ++s) {
        const Csv csv = read_csv(paths[s]);
        const int ca = csv.col("a");
        double mean = 0.0, lo = 0.0, hi = 0.0;
        for (size_t r = 0; r < csv.rows.size(); ++r) {
            const double v = csv.num(r, ca);
            mean += v;
            lo = (r == 0) ? v : std::min(lo, v);
            hi = (r == 0) ? v : std::max(hi, v);
        }
        mean /= static_cast<double>(csv.rows.size());
        summary += std::to_string(s) + "," + format_g17(mean) + "," + format_g17(lo) + "," +
                   format_g17(hi) + "\n";
    }
    const fs::path out = ctx.out / "field_summary.csv";
    write_text_file(out, summary);
    note_csv(ctx, out);
    return true;
}

bool kind_correctors(RunCtx& ctx) {
    const Grid torus = make_grid(ctx.cfg.n, ctx.cfg.extent, Topology::periodic_torus);
    std::vector<fs::path> rows_paths, profile_paths;
    for (int s = 0; s < ctx.samples(); ++s) {
        rows_paths.push_back(ctx.tasks / ("correctors_" + sample_tag(s) + ".csv"));
        profile_paths.push_back(ctx.tasks / ("profile_" + sample_tag(s) + ".csv"));
    }
    std::vector<int> missing;
    for (int s = 0; s < ctx.samples(); ++s) {
        if (fs::exists(rows_paths[s]) && fs::exists(profile_paths[s]))
            ctx.result->tasks_skipped += 1;
        else
            missing.push_back(s);
    }
    if (!ctx.solve_missing && !missing.empty()) return false;

    // Dyadic sublinearity radii up to a quarter side, capped at 64 cells
    // (physical units, as the profile expects).
    std::vector<double> radii;
    for (int r = 4; r <= std::min(64, ctx.cfg.n / 4); r *= 2) radii.push_back(r * torus.h());

    const uint64_t sub = derive_seed(ctx.master(), kSubCorrectors);
    const double lambda = coefficient_lambda(ctx.cfg);
    parallel_tasks(missing, ctx.cfg.workers, [&](int s) {
        annotated("correctors sample=" + std::to_string(s), [&]() {
            const auto a = make_coefficient(torus, ctx.cfg, sub, s, 1.0);
            const CorrectorSet set = solve_corrector_set(torus, a, lambda);
            std::string row =
                "sample,a11,a12,a22,phi_res1,phi_res2,sigma_res1,sigma_res2,"
                "phi_it1,phi_it2,sigma_it1,sigma_it2\n";
            row += std::to_string(s) + "," + format_g17(set.a_eff.a11) + "," +
                   format_g17(set.a_eff.a12) + "," + format_g17(set.a_eff.a22) + "," +
                   format_g17(set.phi_report[0].relative_residual) + "," +
                   format_g17(set.phi_report[1].relative_residual) + "," +
                   format_g17(set.sigma_residual[0]) + "," + format_g17(set.sigma_residual[1]) +
                   "," + std::to_string(set.phi_report[0].iterations) + "," +
                   std::to_string(set.phi_report[1].iterations) + "," +
                   std::to_string(set.sigma_report[0].iterations) + "," +
                   std::to_string(set.sigma_report[1].iterations) + "\n";
            std::string profile = "radius,oscillation,increment_sq\n";
            if (!radii.empty()) {
                const std::vector<const CorrectorSet*> one = {&set};
                for (const auto& pt : sublinearity_profile(torus, one, radii)) {
                    profile += format_g17(pt.radius) + "," + format_g17(pt.oscillation_moment) +
                               "," + format_g17(pt.increment_moment * pt.increment_moment) + "\n";
                }
            }
            std::lock_guard<std::mutex> lock(ctx.io);
            write_text_file(rows_paths[s], row);
            write_text_file(profile_paths[s], profile);
            ctx.result->tasks_run += 1;
        });
    });

    concat_csv(rows_paths, ctx.out / "correctors_full.csv");
    std::string table = "sample,a11,a12,a22\n";
    double m11 = 0.0, m12 = 0.0, m22 = 0.0, worst_res = 0.0;
    json per_sample = json::array();
    for (int s = 0; s < ctx.samples(); ++s) {
        const Csv csv = read_csv(rows_paths[s]);
        const double a11 = csv.num(0, csv.col("a11"));
        const double a12 = csv.num(0, csv.col("a12"));
        const double a22 = csv.num(0, csv.col("a22"));
        table += std::to_string(s) + "," + format_g17(a11) + "," + format_g17(a12) + "," +
                 format_g17(a22) + "\n";
        m11 += a11;
        m12 += a12;
        m22 += a22;
        worst_res = std::max({worst_res, csv.num(0, csv.col("phi_res1")),
                              csv.num(0, csv.col("phi_res2"))});
        per_sample.push_back({{"sample", s},
                              {"a11", a11},
                              {"a12", a12},
                              {"a22", a22},
                              {"phi_iterations",
                               {csv.num(0, csv.col("phi_it1")), csv.num(0, csv.col("phi_it2"))}},
                              {"sigma_residuals",
                               {csv.num(0, csv.col("sigma_res1")),
                                csv.num(0, csv.col("sigma_res2"))}}});
    }
    const int ns = ctx.samples();
    const fs::path table_path = ctx.out / "correctors.csv";
    write_text_file(table_path, table);
    note_csv(ctx, table_path);
    note_csv(ctx, ctx.out / "correctors_full.csv");

    // Ensemble sublinearity profile: oscillation moments average linearly,
    // squared increments average under the square root.
    json profile = json::array();
    if (!radii.empty()) {
        std::vector<double> osc(radii.size(), 0.0), inc2(radii.size(), 0.0);
        for (int s = 0; s < ns; ++s) {
            const Csv csv = read_csv(profile_paths[s]);
            for (size_t r = 0; r < radii.size(); ++r) {
                osc[r] += csv.num(r, csv.col("oscillation"));
                inc2[r] += csv.num(r, csv.col("increment_sq"));
            }
        }
        for (size_t r = 0; r < radii.size(); ++r)
            profile.push_back({{"radius", radii[r]},
                               {"oscillation_moment", osc[r] / ns},
                               {"increment_moment", std::sqrt(inc2[r] / ns)}});
    }
    const Mat2 mean{m11 / ns, m12 / ns, m22 / ns};
    const auto [lo, hi] = mean.eigenvalues();
    write_json(ctx, ctx.out / "correctors_report.json",
               json{{"a_mean", {{"a11", mean.a11}, {"a12", mean.a12}, {"a22", mean.a22}}},
                    {"eigenvalues", {lo, hi}},
                    {"lambda", coefficient_lambda(ctx.cfg)},
                    {"n_samples", ns},
                    {"worst_phi_residual", worst_res},
                    {"per_sample", per_sample},
                    {"sublinearity_profile", profile}});
    return true;
}

// Shared by homogenize and fluctuation: per-sample effective tensors,
// averaged into the deterministic coefficient of the effective problem.
// The tensor is scale-invariant, so it is estimated from the same ensemble
// at the finest epsilon of the run, where the torus covers the most
// correlation lengths and the periodization bias is smallest.  Tasks are
// sample-granular and shared between the two kinds.
Mat2 ensure_abar(RunCtx& ctx, const Grid& torus, double scale, bool& complete) {
    std::vector<fs::path> paths;
    for (int s = 0; s < ctx.samples(); ++s)
        paths.push_back(ctx.tasks / ("abar_" + sample_tag(s) + ".csv"));
    const std::vector<int> missing = missing_indices(ctx, paths);
    if (!ctx.solve_missing && !missing.empty()) {
        complete = false;
        return Mat2{};
    }
    const uint64_t sub = derive_seed(ctx.master(), kSubAbar);
    const double lambda = coefficient_lambda(ctx.cfg);
    parallel_tasks(missing, ctx.cfg.workers, [&](int s) {
        annotated("abar sample=" + std::to_string(s), [&]() {
            const auto a = make_coefficient(torus, ctx.cfg, sub, s, scale);
            const LightCorrectors lc = light_correctors(torus, a, lambda);
            std::string row = "sample,a11,a12,a22,phi_res1,phi_res2,phi_it1,phi_it2\n";
            row += std::to_string(s) + "," + format_g17(lc.a_eff.a11) + "," +
                   format_g17(lc.a_eff.a12) + "," + format_g17(lc.a_eff.a22) + "," +
                   format_g17(lc.reports[0].relative_residual) + "," +
                   format_g17(lc.reports[1].relative_residual) + "," +
                   std::to_string(lc.reports[0].iterations) + "," +
                   std::to_string(lc.reports[1].iterations) + "\n";
            std::lock_guard<std::mutex> lock(ctx.io);
            write_text_file(paths[s], row);
            ctx.result->tasks_run += 1;
        });
    });
    Mat2 mean;
    for (int s = 0; s < ctx.samples(); ++s) {
        const Csv csv = read_csv(paths[s]);
        mean.a11 += csv.num(0, csv.col("a11"));
        mean.a12 += csv.num(0, csv.col("a12"));
        mean.a22 += csv.num(0, csv.col("a22"));
    }
    mean.a11 /= ctx.samples();
    mean.a12 /= ctx.samples();
    mean.a22 /= ctx.samples();
    complete = true;
    return mean;
}

bool kind_homogenize(RunCtx& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const Grid dom = make_grid(cfg.n, cfg.extent, Topology::masked_domain);
    const DomainMask mask = make_mask(dom, cfg.shape, cfg.teeth);
    const Grid torus = make_grid(cfg.n, cfg.extent, Topology::periodic_torus);
    const std::vector<double> f = manufactured_load(dom, cfg.load_id);

    bool abar_complete = true;
    const double eps_min = *std::min_element(cfg.epsilons.begin(), cfg.epsilons.end());
    const Mat2 abar = ensure_abar(ctx, torus, eps_min, abar_complete);
    if (!abar_complete) return false;

    std::vector<std::vector<fs::path>> paths(cfg.epsilons.size());
    for (size_t k = 0; k < cfg.epsilons.size(); ++k)
        for (int s = 0; s < ctx.samples(); ++s)
            paths[k].push_back(ctx.tasks / ("homogenize_e" + std::to_string(k) + "_" +
                                            sample_tag(s) + ".csv"));

    for (size_t k = 0; k < cfg.epsilons.size(); ++k) {
        const double eps = cfg.epsilons[k];
        const std::vector<int> missing = missing_indices(ctx, paths[k]);
        if (!ctx.solve_missing && !missing.empty()) return false;
        if (missing.empty()) continue;

        // One effective solve per epsilon; deterministic given the averaged
        // tensor, so resumed runs reproduce it exactly when needed.
        auto ubar_sys = assemble_tensor(dom, abar, Constraint::dirichlet_zero, &mask);
        const auto [u_bar, bar_rep] = solve(ubar_sys, load_scalar(ubar_sys, f));

        const uint64_t sub = derive_seed(ctx.master(), kSubHomogenize + k);
        parallel_tasks(missing, cfg.workers, [&](int s) {
            annotated(eps_label("homogenize", eps, s), [&]() {
                const auto a_eps = make_coefficient(torus, cfg, sub, s, eps);
                const LightCorrectors lc =
                    light_correctors(torus, a_eps, coefficient_lambda(cfg));
                const ScaledCorrectors sc = scaled_correctors_from_fields(
                    dom, eps, lc.phi_cell[0], lc.phi_cell[1], lc.grad[0], lc.grad[1]);

                auto sys = assemble(dom, a_eps, Constraint::dirichlet_zero, &mask);
                const auto [u_eps, rep] = solve(sys, load_scalar(sys, f));

                std::vector<double> diff(u_eps.size());
                for (size_t i = 0; i < diff.size(); ++i) diff[i] = u_eps[i] - u_bar[i];
                const double l2 = l2_inside(dom, mask, diff);
                const double h1 = h1_inside(dom, mask, diff);

                const CutoffPair cutoffs = (8.0 * eps < mask.r0 / 2.0)
                                               ? make_cutoffs(mask, eps)
                                               : zero_cutoffs(mask, eps);
                const ExpansionError err =
                    expansion_error(mask, u_eps, u_bar, sc, cutoffs, s);

                std::string row =
                    "epsilon,sample,l2_diff,h1_diff,z_l2,z_h1,a11,a12,a22,"
                    "ueps_iterations,ueps_residual,ubar_iterations,ubar_residual\n";
                row += format_g17(eps) + "," + std::to_string(s) + "," + format_g17(l2) + "," +
                       format_g17(h1) + "," + format_g17(err.l2) + "," + format_g17(err.h1) +
                       "," + format_g17(lc.a_eff.a11) + "," + format_g17(lc.a_eff.a12) + "," +
                       format_g17(lc.a_eff.a22) + "," + std::to_string(rep.iterations) + "," +
                       format_g17(rep.relative_residual) + "," +
                       std::to_string(bar_rep.iterations) + "," +
                       format_g17(bar_rep.relative_residual) + "\n";
                std::lock_guard<std::mutex> lock(ctx.io);
                write_text_file(paths[k][s], row);
                ctx.result->tasks_run += 1;
            });
        });
    }

    std::vector<fs::path> all_paths;
    for (const auto& per_eps : paths)
        for (const auto& p : per_eps) all_paths.push_back(p);
    const fs::path table_path = ctx.out / "homogenize.csv";
    concat_csv(all_paths, table_path);
    note_csv(ctx, table_path);

    std::vector<double> mean_l2(cfg.epsilons.size(), 0.0), mean_z(cfg.epsilons.size(), 0.0);
    double worst_res = 0.0;
    for (size_t k = 0; k < cfg.epsilons.size(); ++k) {
        for (int s = 0; s < ctx.samples(); ++s) {
            const Csv csv = read_csv(paths[k][s]);
            mean_l2[k] += csv.num(0, csv.col("l2_diff"));
            mean_z[k] += csv.num(0, csv.col("z_h1"));
            worst_res = std::max({worst_res, csv.num(0, csv.col("ueps_residual")),
                                  csv.num(0, csv.col("ubar_residual"))});
        }
        mean_l2[k] /= ctx.samples();
        mean_z[k] /= ctx.samples();
    }
    json fit_json{{"epsilons", cfg.epsilons},
                  {"mean_l2", mean_l2},
                  {"mean_z_h1", mean_z},
                  {"r0", mask.r0},
                  {"worst_residual", worst_res},
                  {"abar", {{"a11", abar.a11}, {"a12", abar.a12}, {"a22", abar.a22}}},
                  {"n_samples", ctx.samples()}};
    if (cfg.epsilons.size() >= 3) {
        const FitResult plog = fit_rate(cfg.epsilons, mean_l2, RateModel::power_log, mask.r0, true);
        const FitResult pw = fit_rate(cfg.epsilons, mean_l2, RateModel::power);
        fit_json["model"] = "power-log";
        fit_json["slope"] = plog.slope;
        fit_json["intercept"] = plog.intercept;
        fit_json["r_squared"] = plog.r_squared;
        fit_json["include_mu2"] = true;
        fit_json["power"] = {{"slope", pw.slope},
                             {"intercept", pw.intercept},
                             {"r_squared", pw.r_squared}};
    }
    write_json(ctx, ctx.out / "homogenize_fit.json", fit_json);
    return true;
}

bool kind_minrad(RunCtx& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const Grid torus = make_grid(cfg.n, cfg.extent, Topology::periodic_torus);
    MinRadParams params = cfg.minrad;
    if (params.radii.empty())
        for (int r = 4; r <= cfg.n / 4; r *= 2) params.radii.push_back(r);
    if (params.radii.size() < 2)
        throw config_error("minrad: need at least two scan radii (grid too small?)");

    std::vector<fs::path> paths;
    for (int s = 0; s < ctx.samples(); ++s)
        paths.push_back(ctx.tasks / ("minrad_" + sample_tag(s) + ".csv"));
    const std::vector<int> missing = missing_indices(ctx, paths);
    if (!ctx.solve_missing && !missing.empty()) return false;

    const uint64_t sub = derive_seed(ctx.master(), kSubMinrad);
    const double lambda = coefficient_lambda(cfg);
    parallel_tasks(missing, cfg.workers, [&](int s) {
        annotated("minrad sample=" + std::to_string(s), [&]() {
            const auto a = make_coefficient(torus, cfg, sub, s, 1.0);
            const CorrectorSet set = solve_corrector_set(torus, a, lambda);
            const MinimalRadiusField field =
                minimal_radius_field(torus, set, params, cfg.minrad_stride);
            std::lock_guard<std::mutex> lock(ctx.io);
            export_chi_csv(torus, field, paths[s].string());
            ctx.result->tasks_run += 1;
        });
    });

    std::string table = "sample,x,y,chi,chi_regularized\n";
    std::vector<std::vector<double>> chi_samples;
    double chi_min = 0.0, chi_max = 0.0;
    int saturated = 0;
    for (int s = 0; s < ctx.samples(); ++s) {
        const Csv csv = read_csv(paths[s]);
        const int cx = csv.col("x"), cy = csv.col("y"), cc = csv.col("chi"),
                  cr = csv.col("chi_regularized");
        std::vector<double> chis;
        for (size_t r = 0; r < csv.rows.size(); ++r) {
            const double chi = csv.num(r, cc);
            chis.push_back(chi);
            chi_min = (s == 0 && r == 0) ? chi : std::min(chi_min, chi);
            chi_max = std::max(chi_max, chi);
            if (chi >= params.radii.back()) saturated += 1;
            table += std::to_string(s) + "," + csv.rows[r][cx] + "," + csv.rows[r][cy] + "," +
                     csv.rows[r][cc] + "," + csv.rows[r][cr] + "\n";
        }
        chi_samples.push_back(std::move(chis));
    }
    const fs::path table_path = ctx.out / "minrad.csv";
    write_text_file(table_path, table);
    note_csv(ctx, table_path);

    json report{{"floor", std::pow(params.theta, -params.p)},
                {"theta", params.theta},
                {"p", params.p},
                {"exponent", params.exponent()},
                {"chi_min", chi_min},
                {"chi_max", chi_max},
                {"saturated_anchors", saturated},
                {"n_samples", ctx.samples()},
                {"anchors_per_sample", chi_samples.empty() ? 0 : chi_samples[0].size()}};
    if (ctx.samples() >= 8 && !chi_samples.empty() && chi_samples[0].size() >= 16) {
        json moments = json::array();
        for (const auto& entry :
             moment_report(chi_samples, {1.0, 2.0}, 400, derive_seed(ctx.master(), kSubMoments)))
            moments.push_back({{"beta", entry.beta},
                               {"moment", entry.moment},
                               {"ci_lo", entry.ci_lo},
                               {"ci_hi", entry.ci_hi}});
        report["moments"] = moments;
    }
    write_json(ctx, ctx.out / "minrad_report.json", report);
    return true;
}

bool kind_cz(RunCtx& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const Grid dom = make_grid(cfg.n, cfg.extent, Topology::masked_domain);
    const DomainMask mask = make_mask(dom, cfg.shape, cfg.teeth);
    const Grid torus = make_grid(cfg.n, cfg.extent, Topology::periodic_torus);
    const std::vector<double> f = manufactured_load(dom, cfg.load_id);
    const std::vector<double> quenched_ps = {1.6, 2.0, 2.5};

    MinRadParams params = cfg.minrad;
    if (params.radii.empty())
        for (int r = 4; r <= cfg.n / 4; r *= 2) params.radii.push_back(r);

    std::vector<fs::path> paths;
    for (size_t k = 0; k < cfg.epsilons.size(); ++k)
        paths.push_back(ctx.tasks / ("cz_e" + std::to_string(k) + ".csv"));
    const std::vector<int> missing = missing_indices(ctx, paths);
    if (!ctx.solve_missing && !missing.empty()) return false;

    const double lambda = coefficient_lambda(cfg);
    const Weight w_unit = unit_weight(dom);
    const Weight w_dist = distance_power_weight(mask, cfg.exponents.q - 1.0, dom.h() / 2.0);
    parallel_tasks(missing, cfg.workers, [&](int k) {
        const double eps = cfg.epsilons[k];
        annotated(eps_label("cz", eps, -1), [&]() {
            const uint64_t sub = derive_seed(ctx.master(), kSubCz + static_cast<uint64_t>(k));
            std::vector<CzFunctional> rows;
            std::vector<CellGradient> grads;
            std::vector<double> radius0;
            for (int s = 0; s < ctx.samples(); ++s) {
                annotated(eps_label("cz", eps, s), [&]() {
                    const auto a_eps = make_coefficient(torus, cfg, sub, s, eps);
                    const CorrectorSet set = solve_corrector_set(torus, a_eps, lambda);
                    const MinimalRadiusField mrf =
                        minimal_radius_field(torus, set, params, cfg.minrad_stride);
                    std::vector<double> radius(mrf.regularized.size());
                    for (size_t c = 0; c < radius.size(); ++c)
                        radius[c] = std::max(dom.h(), mrf.regularized[c] * dom.h());
                    if (s == 0) radius0 = radius;

                    auto sys = assemble(dom, a_eps, Constraint::dirichlet_zero, &mask);
                    const auto [u_eps, rep] = solve(sys, load_scalar(sys, f));
                    const CellGradient gu = gradient(dom, u_eps);
                    for (const double p : quenched_ps) {
                        CzFunctional row = cz_quenched(mask, gu, f, radius, p);
                        row.epsilon = eps;
                        rows.push_back(row);
                    }
                    grads.push_back(gu);
                });
            }
            // Ensemble functionals: fixed eps-balls with unit and distance
            // weights, and the minimal-radius weighted variant pinned to the
            // first sample's radius field (any fixed realization is
            // admissible for the ball geometry).
            const auto& ex = cfg.exponents;
            if (ctx.samples() >= 8) {
                rows.push_back(
                    cz_annealed(mask, grads, f, eps, ex.p, ex.q, ex.p_bar, w_unit));
                rows.push_back(
                    cz_annealed(mask, grads, f, eps, ex.p, ex.q, ex.p_bar, w_dist));
                rows.push_back(cz_weighted_star(mask, grads, f, radius0, ex.p, ex.q, w_dist));
            }
            std::lock_guard<std::mutex> lock(ctx.io);
            export_cz_csv(rows, paths[k].string());
            ctx.result->tasks_run += 1;
        });
    });

    const fs::path table_path = ctx.out / "cz.csv";
    concat_csv(paths, table_path);
    note_csv(ctx, table_path);

    // Per-sample quenched ratio spread across epsilon: rows of one epsilon
    // file are ordered sample-major, p-minor, so group by position.
    json spreads = json::array();
    std::vector<Csv> tables;
    for (const auto& p : paths) tables.push_back(read_csv(p));
    if (!tables.empty() && !tables[0].rows.empty()) {
        const int cf = tables[0].col("flavor");
        const int cp = tables[0].col("p");
        const int cr = tables[0].col("ratio");
        for (const double p : quenched_ps) {
            double worst = 0.0;
            for (int s = 0; s < ctx.samples(); ++s) {
                double lo = 0.0, hi = 0.0;
                bool first = true;
                for (const auto& tab : tables) {
                    for (size_t r = 0; r < tab.rows.size(); ++r) {
                        if (tab.rows[r][cf] != "quenched-A") continue;
                        if (std::abs(tab.num(r, cp) - p) > 1e-12) continue;
                        // quenched rows appear in sample order within a file
                        const int row_sample =
                            static_cast<int>(&tab.rows[r] - &tab.rows[0]) /
                            static_cast<int>(quenched_ps.size());
                        if (row_sample != s) continue;
                        const double ratio = tab.num(r, cr);
                        lo = first ? ratio : std::min(lo, ratio);
                        hi = first ? ratio : std::max(hi, ratio);
                        first = false;
                    }
                }
                if (!first && lo > 0.0) worst = std::max(worst, hi / lo);
            }
            spreads.push_back({{"p", p}, {"worst_sample_spread", worst}});
        }
    }
    write_json(ctx, ctx.out / "cz_report.json",
               json{{"quenched_p", quenched_ps},
                    {"epsilons", cfg.epsilons},
                    {"n_samples", ctx.samples()},
                    {"quenched_spread", spreads}});
    return true;
}

bool kind_fluctuation(RunCtx& ctx) {
    const ExperimentConfig& cfg = ctx.cfg;
    const Grid dom = make_grid(cfg.n, cfg.extent, Topology::masked_domain);
    const DomainMask mask = make_mask(dom, cfg.shape, cfg.teeth);
    const Grid torus = make_grid(cfg.n, cfg.extent, Topology::periodic_torus);
    const std::vector<double> f = manufactured_load(dom, cfg.load_id);

    bool abar_complete = true;
    const double eps_min = *std::min_element(cfg.epsilons.begin(), cfg.epsilons.end());
    const Mat2 abar = ensure_abar(ctx, torus, eps_min, abar_complete);
    if (!abar_complete) return false;

    std::vector<double> hx, hy;
    test_field_h(mask, hx, hy);

    std::vector<std::vector<fs::path>> paths(cfg.epsilons.size());
    for (size_t k = 0; k < cfg.epsilons.size(); ++k)
        for (int s = 0; s < ctx.samples(); ++s)
            paths[k].push_back(ctx.tasks / ("fluct_e" + std::to_string(k) + "_" +
                                            sample_tag(s) + ".csv"));

    for (size_t k = 0; k < cfg.epsilons.size(); ++k) {
        const double eps = cfg.epsilons[k];
        const std::vector<int> missing = missing_indices(ctx, paths[k]);
        if (!ctx.solve_missing && !missing.empty()) return false;
        if (missing.empty()) continue;

        auto ubar_sys = assemble_tensor(dom, abar, Constraint::dirichlet_zero, &mask);
        const auto [u_bar, bar_rep] = solve(ubar_sys, load_scalar(ubar_sys, f));

        const uint64_t sub = derive_seed(ctx.master(), kSubFluct + k);
        parallel_tasks(missing, cfg.workers, [&](int s) {
            annotated(eps_label("fluctuation", eps, s), [&]() {
                const auto a_eps = make_coefficient(torus, cfg, sub, s, eps);
                const LightCorrectors lc =
                    light_correctors(torus, a_eps, coefficient_lambda(cfg));
                const ScaledCorrectors sc = scaled_correctors_from_fields(
                    dom, eps, lc.phi_cell[0], lc.phi_cell[1], lc.grad[0], lc.grad[1]);
                auto sys = assemble(dom, a_eps, Constraint::dirichlet_zero, &mask);
                const auto [u_eps, rep] = solve(sys, load_scalar(sys, f));
                const CutoffPair cutoffs = (8.0 * eps < mask.r0 / 2.0)
                                               ? make_cutoffs(mask, eps)
                                               : zero_cutoffs(mask, eps);
                FluctuationSample fsample;
                fsample.epsilon = eps;
                fsample.sample_index = s;
                fsample.h_value =
                    commutator_H(mask, a_eps, abar, u_eps, u_bar, sc, cutoffs, hx, hy);
                std::lock_guard<std::mutex> lock(ctx.io);
                export_fluctuation_csv({fsample}, paths[k][s].string());
                ctx.result->tasks_run += 1;
            });
        });
    }

    std::vector<fs::path> all_paths;
    for (const auto& per_eps : paths)
        for (const auto& p : per_eps) all_paths.push_back(p);
    const fs::path table_path = ctx.out / "fluctuation.csv";
    concat_csv(all_paths, table_path);
    note_csv(ctx, table_path);

    std::vector<std::vector<double>> h_per_eps(cfg.epsilons.size());
    for (size_t k = 0; k < cfg.epsilons.size(); ++k)
        for (int s = 0; s < ctx.samples(); ++s) {
            const Csv csv = read_csv(paths[k][s]);
            h_per_eps[k].push_back(csv.num(0, csv.col("H")));
        }
    if (cfg.epsilons.size() >= 3 && ctx.samples() >= 16) {
        const VarianceFit fit = variance_scaling(h_per_eps, cfg.epsilons, 256,
                                                 derive_seed(ctx.master(), kSubVarianceFit));
        const fs::path fit_path = ctx.out / "fluctuation_fit.json";
        export_variance_fit_json(fit, fit_path.string());
        note_report(ctx, fit_path);
    }
    return true;
}

}  // namespace

// --------------------------------------------------------------- parsing

const char* experiment_kind_name(ExperimentKind kind) {
    return kKindNames[static_cast<int>(kind)];
}

ExperimentKind experiment_kind_from_name(const std::string& name) {
    for (int i = 0; i < 8; ++i)
        if (name == kKindNames[i]) return static_cast<ExperimentKind>(i);
    throw config_error("config: unknown experiment kind '" + name + "'");
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: JSON parse failure: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            cfg.n = g.value("n", cfg.n);
            cfg.extent = g.value("extent", cfg.extent);
            if (g.contains("shape")) cfg.shape = shape_from_name(g["shape"].get<std::string>());
            cfg.teeth = g.value("teeth", cfg.teeth);
        }
        if (j.contains("ensemble")) {
            const auto& e = j["ensemble"];
            cfg.ensemble.lambda = e.value("lambda", cfg.ensemble.lambda);
            cfg.ensemble.corr_len = e.value("corr_len", cfg.ensemble.corr_len);
            if (e.contains("covariance"))
                cfg.ensemble.covariance =
                    covariance_from_name(e["covariance"].get<std::string>());
            cfg.ensemble.master_seed = e.value("master_seed", cfg.ensemble.master_seed);
            cfg.ensemble.n_samples = e.value("n_samples", cfg.ensemble.n_samples);
        }
        if (j.contains("coefficient")) {
            const auto& c = j["coefficient"];
            if (c.contains("kind"))
                cfg.coefficient.kind = coefficient_kind_from_name(c["kind"].get<std::string>());
            cfg.coefficient.alpha = c.value("alpha", cfg.coefficient.alpha);
            cfg.coefficient.beta = c.value("beta", cfg.coefficient.beta);
            cfg.coefficient.value = c.value("value", cfg.coefficient.value);
            cfg.coefficient.block = c.value("block", cfg.coefficient.block);
            cfg.coefficient.stripe_cells = c.value("stripe_cells", cfg.coefficient.stripe_cells);
        }
        if (j.contains("epsilons")) cfg.epsilons = j["epsilons"].get<std::vector<double>>();
        if (j.contains("minrad")) {
            const auto& m = j["minrad"];
            cfg.minrad.theta = m.value("theta", cfg.minrad.theta);
            cfg.minrad.p = m.value("p", cfg.minrad.p);
            cfg.minrad.gamma_prime = m.value("gamma_prime", cfg.minrad.gamma_prime);
            cfg.minrad.symmetric_gamma = m.value("symmetric_gamma", cfg.minrad.symmetric_gamma);
            cfg.minrad.kappa = m.value("kappa", cfg.minrad.kappa);
            cfg.minrad.L = m.value("L", cfg.minrad.L);
            if (m.contains("radii")) cfg.minrad.radii = m["radii"].get<std::vector<int>>();
            cfg.minrad_stride = m.value("stride", cfg.minrad_stride);
        }
        if (j.contains("exponents")) {
            const auto& e = j["exponents"];
            cfg.exponents.p = e.value("p", cfg.exponents.p);
            cfg.exponents.q = e.value("q", cfg.exponents.q);
            cfg.exponents.p_bar = e.value("p_bar", cfg.exponents.p_bar);
            cfg.exponents.s = e.value("s", cfg.exponents.s);
        }
        if (j.contains("load")) cfg.load_id = j["load"].value("id", cfg.load_id);
        cfg.outputs = j.value("outputs", cfg.outputs);
        if (j.contains("experiment"))
            cfg.experiment = experiment_kind_from_name(j["experiment"].get<std::string>());
        cfg.workers = j.value("workers", cfg.workers);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: malformed value: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.n < 8) throw config_error("config: grid side must be at least 8");
    if (!(cfg.extent > 0.0)) throw config_error("config: extent must be positive");
    if (cfg.ensemble.n_samples < 1) throw config_error("config: need at least one sample");
    if (cfg.workers < 1) throw config_error("config: workers must be positive");
    if (!load_id_known(cfg.load_id))
        throw config_error("config: unknown load id '" + cfg.load_id + "'");
    for (const double eps : cfg.epsilons) {
        if (!(eps > 0.0) || !(eps < cfg.extent))
            throw config_error("config: epsilons must lie in (0, extent)");
        const double ratio = cfg.extent / eps;
        const double k = std::log2(ratio);
        if (std::abs(k - std::round(k)) > 1e-9)
            throw config_error("config: epsilon " + format_g17(eps) +
                               " is not a dyadic divisor of the extent");
    }
    const bool needs_eps = cfg.experiment == ExperimentKind::homogenize ||
                           cfg.experiment == ExperimentKind::cz ||
                           cfg.experiment == ExperimentKind::fluctuation ||
                           cfg.experiment == ExperimentKind::all;
    if (needs_eps && cfg.epsilons.empty())
        throw config_error("config: this experiment kind needs a nonempty epsilon list");
    if (needs_eps && cfg.coefficient.kind != CoefficientKind::gaussian)
        throw config_error(
            "config: epsilon experiments need the gaussian ensemble "
            "(deterministic fixtures are unit-scale)");
    if (cfg.coefficient.kind == CoefficientKind::gaussian) {
        if (!(cfg.ensemble.lambda > 0.0) || !(cfg.ensemble.lambda < 1.0))
            throw config_error("config: ellipticity lambda must lie in (0,1)");
        if (!(cfg.ensemble.corr_len > 0.0))
            throw config_error("config: correlation length must be positive");
    }
    if (cfg.coefficient.kind == CoefficientKind::constant && !(cfg.coefficient.value > 0.0))
        throw config_error("config: constant coefficient must be positive");
    for (const int r : cfg.minrad.radii)
        if (r < 1) throw config_error("config: minimal-radius scan radii must be positive");
    if (cfg.minrad_stride < 1) throw config_error("config: minrad stride must be positive");
    const auto& ex = cfg.exponents;
    if (!(ex.p >= 1.0) || !(ex.q >= 1.0) || !(ex.s > 0.0) || !(ex.p_bar > ex.p))
        throw config_error("config: exponents need p,q >= 1, s > 0 and p_bar > p");
}

// ----------------------------------------------------------------- loads

bool load_id_known(const std::string& id) {
    return id == "zero" || id == "constant-one" || id == "sine" || id == "bump";
}

std::vector<double> manufactured_load(const Grid& grid, const std::string& id) {
    if (!load_id_known(id)) throw config_error("unknown load id '" + id + "'");
    std::vector<double> f(grid.cells(), 0.0);
    if (id == "zero") return f;
    if (id == "constant-one") {
        std::fill(f.begin(), f.end(), 1.0);
        return f;
    }
    const double E = grid.extent;
    const double pi = std::acos(-1.0);
    for (int cy = 0; cy < grid.n; ++cy)
        for (int cx = 0; cx < grid.n; ++cx) {
            const Vec2 p = grid.cell_center(cx, cy);
            if (id == "sine") {
                f[grid.cell_index(cx, cy)] = std::sin(pi * p.x / E) * std::sin(pi * p.y / E);
            } else {  // bump on the inner half of the bounding box
                if (p.x > E / 4 && p.x < 3 * E / 4 && p.y > E / 4 && p.y < 3 * E / 4) {
                    const double sx = std::sin(2.0 * pi * (p.x - E / 4) / E);
                    const double sy = std::sin(2.0 * pi * (p.y - E / 4) / E);
                    f[grid.cell_index(cx, cy)] = sx * sx * sy * sy;
                }
            }
        }
    return f;
}

// ------------------------------------------------------------------ fits

FitResult fit_rate(const std::vector<double>& xs, const std::vector<double>& ys,
                   RateModel model, double r0, bool include_mu2) {
    if (xs.size() < 3 || ys.size() != xs.size())
        throw config_error("fit_rate: need at least three paired points");
    std::vector<double> lx(xs.size()), ly(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0))
            throw config_error("fit_rate: values must be positive");
        double y = ys[i];
        if (model == RateModel::power_log) {
            const double ratio = r0 / xs[i];
            if (!(ratio > 1.0))
                throw config_error("fit_rate: power-log model needs x < r0");
            y /= std::log(ratio);
            if (include_mu2) y /= mu_d2(ratio);
        }
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(y);
    }
    return ols_fit(lx, ly);
}

// ------------------------------------------------------------------- run

ExperimentResult run(const ExperimentConfig& config) {
    validate_config(config);
    const auto t0 = std::chrono::steady_clock::now();

    ExperimentResult result;
    result.experiment = config.experiment;
    result.master_seed = config.ensemble.master_seed;

    RunCtx ctx{config, fs::path(config.outputs), fs::path(config.outputs) / "tasks",
               /*solve_missing=*/config.experiment != ExperimentKind::report, &result};
    std::error_code ec;
    fs::create_directories(ctx.tasks, ec);
    if (ec) throw config_error("cannot create output directory " + ctx.tasks.string());

    const ExperimentKind kind = config.experiment;
    const bool everything = kind == ExperimentKind::all || kind == ExperimentKind::report;
    json skipped = json::array();
    auto want = [&](ExperimentKind k) { return everything || kind == k; };
    auto record_skip = [&](const char* name) { skipped.push_back(name); };

    if (want(ExperimentKind::field) && !kind_field(ctx)) record_skip("field");
    if (want(ExperimentKind::correctors) && !kind_correctors(ctx)) record_skip("correctors");
    if (want(ExperimentKind::homogenize) && !config.epsilons.empty()) {
        if (!kind_homogenize(ctx)) record_skip("homogenize");
    }
    if (want(ExperimentKind::minrad) && !kind_minrad(ctx)) record_skip("minrad");
    if (want(ExperimentKind::cz) && !config.epsilons.empty()) {
        if (!kind_cz(ctx)) record_skip("cz");
    }
    if (want(ExperimentKind::fluctuation) && !config.epsilons.empty()) {
        if (!kind_fluctuation(ctx)) record_skip("fluctuation");
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json echo{{"grid",
               {{"n", config.n},
                {"extent", config.extent},
                {"shape", shape_name(config.shape)},
                {"teeth", config.teeth}}},
              {"ensemble",
               {{"lambda", config.ensemble.lambda},
                {"corr_len", config.ensemble.corr_len},
                {"covariance", covariance_name(config.ensemble.covariance)},
                {"master_seed", config.ensemble.master_seed},
                {"n_samples", config.ensemble.n_samples}}},
              {"coefficient", {{"kind", coefficient_kind_name(config.coefficient.kind)}}},
              {"epsilons", config.epsilons},
              {"load", config.load_id},
              {"experiment", experiment_kind_name(config.experiment)},
              {"workers", config.workers}};
    write_text_file(ctx.out / "experiment_result.json",
                    json{{"version", kHomlabVersion},
                         {"experiment", experiment_kind_name(config.experiment)},
                         {"master_seed", config.ensemble.master_seed},
                         {"tasks_run", result.tasks_run},
                         {"tasks_skipped", result.tasks_skipped},
                         {"wall_seconds", result.wall_seconds},
                         {"csv", result.csv_paths},
                         {"reports", result.report_paths},
                         {"skipped_kinds", skipped},
                         {"config_echo", echo}}
                            .dump(2) +
                        "\n");
    return result;
}

}  // namespace homlab
