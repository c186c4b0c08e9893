#pragma once

// Experiment orchestration: a single JSON config drives seeded Monte Carlo
// pipelines across epsilon (fields -> correctors -> solves -> functionals)
// and persists everything as CSV tables plus JSON rate reports.
//
// Determinism contract: every task derives its RNG stream from the master
// seed and its own indices (kind, epsilon index, sample index), all floats
// are serialized with 17 significant digits, and the combine stage always
// reads the per-task CSV files back rather than reusing in-memory values.
// Re-running a config therefore reproduces every CSV byte for byte, and a
// resumed run (tasks whose file already exists are skipped) produces the
// identical final reports.

#include <cstdint>
#include <string>
#include <vector>

#include "homlab/grid.hpp"
#include "homlab/minimal_radius.hpp"
#include "homlab/random_field.hpp"
#include "homlab/util.hpp"

namespace homlab {

inline constexpr const char* kHomlabVersion = "0.1.0";

enum class ExperimentKind { field, correctors, homogenize, minrad, cz, fluctuation, report, all };
enum class CoefficientKind { gaussian, checkerboard, laminate, constant };
enum class RateModel { power, power_log };

const char* experiment_kind_name(ExperimentKind kind);
ExperimentKind experiment_kind_from_name(const std::string& name);  // throws config_error

/**
 * Coefficient selection.  The deterministic fixtures (checkerboard, laminate,
 * constant) are unit-scale microstructures for the corrector/effective-tensor
 * experiments; the epsilon experiments (homogenize, cz, fluctuation) need the
 * stationary Gaussian ensemble, whose correlation length scales with epsilon.
 */
struct CoefficientBlock {
    CoefficientKind kind = CoefficientKind::gaussian;
    double alpha = 0.5;     // two-phase fixtures
    double beta = 2.0;
    double value = 1.0;     // constant fixture
    int block = 1;          // checkerboard tile side, cells
    int stripe_cells = 8;   // laminate stripe height, cells
};

struct ExponentBlock {
    double p = 2.0;
    double q = 2.0;
    double p_bar = 3.0;
    double s = 2.0;
};

struct ExperimentConfig {
    // grid block
    int n = 64;
    double extent = 1.0;
    Shape shape = Shape::unit_square;
    int teeth = 4;

    EnsembleSpec ensemble;  // master_seed and n_samples govern every kind
    CoefficientBlock coefficient;
    std::vector<double> epsilons;  // dyadic divisors of extent

    MinRadParams minrad;   // empty radii: dyadic scan up to n/4 is filled in
    int minrad_stride = 8;

    ExponentBlock exponents;
    std::string load_id = "sine";
    std::string outputs = "homlab-out";
    ExperimentKind experiment = ExperimentKind::all;
    int workers = 1;
};

ExperimentConfig config_from_json(const std::string& text);  // throws config_error
ExperimentConfig config_from_file(const std::string& path);  // throws config_error
void validate_config(const ExperimentConfig& config);        // throws config_error

/** Cell-center samples of a manufactured load; known ids:
 *  "zero", "constant-one", "sine" (product of half-period sines) and
 *  "bump" (squared-sine bump supported on the inner half of the box). */
std::vector<double> manufactured_load(const Grid& grid, const std::string& id);
bool load_id_known(const std::string& id);

/**
 * Log-log rate fit.  power: OLS of ln y against ln x.  power_log: y is first
 * divided by ln(r0/x) -- and by mu_2(r0/x) as well when include_mu2 is set,
 * which is the model of the strong-norm error bound -- so that a clean
 * x * ln(r0/x) signal fits slope 1 exactly.  Requires >= 3 points, positive
 * values throughout, and x < r0 for the power_log model.
 */
FitResult fit_rate(const std::vector<double>& xs, const std::vector<double>& ys,
                   RateModel model, double r0 = 1.0, bool include_mu2 = false);

struct ExperimentResult {
    ExperimentKind experiment = ExperimentKind::all;
    uint64_t master_seed = 0;
    std::vector<std::string> csv_paths;     // combined per-kind tables
    std::vector<std::string> report_paths;  // JSON reports
    int tasks_run = 0;
    int tasks_skipped = 0;
    double wall_seconds = 0.0;
};

/**
 * Executes the configured pipeline and writes all artifacts under
 * config.outputs (task files in a tasks/ subdirectory, combined CSVs and
 * JSON reports at the top level, plus experiment_result.json).  Tasks are
 * distributed over config.workers threads keyed by sample index; any module
 * error aborts the run annotated with the failing (epsilon, sample).
 */
ExperimentResult run(const ExperimentConfig& config);

}  // namespace homlab
