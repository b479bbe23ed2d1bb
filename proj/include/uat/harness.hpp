#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uat/evaluation.hpp"
#include "uat/gaussian_theory.hpp"
#include "uat/training.hpp"

namespace uat::harness {

/// Everything an experiment reads. Loaded from a flat JSON object; unknown
/// keys are rejected. `threads` and `out` do not enter the config hash.
struct ExperimentConfig {
    std::string experiment = "train";
    std::uint64_t seed = 0;
    std::string out = "out";
    int threads = 0;

    toy::ToySpec toy = default_toy();
    double epsilon = 0.05;

    // training
    train::Method method = train::Method::uat_pp;
    double lambda = 5.0;
    std::size_t batch = 256;
    std::size_t labeled_batch = 0;
    std::size_t steps = 3000;
    double learning_rate = 0.02;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double decay_fraction = 0.6;
    double decay_factor = 0.1;
    std::vector<int> hidden = {64, 64};
    int train_attack_steps = 10;
    bool distribution_shift_mode = false;
    train::OtWeight ot_weight = train::OtWeight::batch_ratio;
    bool labeled_in_unlabeled = false;
    std::size_t base_steps = 500;

    // evaluation
    bool full_budget = false;
    std::size_t eval_points = 0;  // 0 = whole test set
    int fgsm_steps = 20;
    int pgd_steps = 100;
    int pgd_restarts = 5;
    int mt_steps = 100;
    int mt_restarts = 5;

    // unlabeled sweep
    std::vector<std::size_t> m_values = {0, 200, 1000, 5000};
    std::vector<train::Method> methods = {train::Method::sup_at, train::Method::vat,    train::Method::uat_ot,
                                          train::Method::uat_ft, train::Method::uat_pp, train::Method::oracle};

    // noise sweep
    std::vector<double> noise_rates = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::size_t> correlated_base_sizes = {4, 8, 16, 50, 200};
    std::size_t correlated_base_steps = 200;

    // distribution shift
    std::vector<double> shift_magnitudes = {0.0, 1.5};
    double nuisance_fraction = 0.3;
    bool confidence_filtering = true;
    double filter_threshold = 0.5;
    std::size_t top_per_class = 0;  // 0 = pool size / 10

    // landscape, traces, SPSA scatter
    int landscape_resolution = 41;
    double landscape_extent = 2.0;
    std::size_t landscape_example = 0;
    std::size_t trace_examples = 20;
    int trace_restarts = 5;
    int trace_steps = 100;
    double spread_threshold = 0.05;
    std::size_t spsa_points = 100;
    int spsa_iterations = 40;
    int spsa_batch = 8192;

    // Gaussian model
    std::vector<int> gaussian_dims = {256, 1024, 4096};
    std::vector<double> gaussian_epsilons;  // empty = three points in the valid range
    std::vector<std::size_t> gaussian_ms;   // empty = ⌈256 ε² √d⌉ per cell
    std::vector<std::size_t> scaling_ms = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    std::size_t gaussian_trials = 100;
    double gaussian_target_error = 0.01;
    double epsilon_low_coeff = 0.25;
    double epsilon_high = 0.25;
    gaussian::ConcentrationConfig concentration;

    static toy::ToySpec default_toy() { return {}; }

    train::TrainConfig train_config(train::Method m) const;
    eval::AttackSuite attack_suite() const;
};

ExperimentConfig load_config(const std::string& path);
/// Applies a flat JSON object on top of `base`.
ExperimentConfig apply_json(ExperimentConfig base, const std::string& json_text);
/// Canonical JSON of every result-affecting field.
std::string canonical_json(const ExperimentConfig& cfg);
/// 16 hex digits derived from canonical_json.
std::string config_hash(const ExperimentConfig& cfg);

/// CSV with a `# config_hash=..., seed=...` comment line and a header row.
class CsvWriter {
public:
    CsvWriter(const ExperimentConfig& cfg, std::vector<std::string> columns);
    void row(const std::vector<std::string>& cells);
    std::string str() const { return text_; }
    void save(const std::string& path) const;

private:
    std::size_t width_;
    std::string text_;
};

std::string fmt(double v);
std::string fmt(std::size_t v);

/// Seed streams shared by all experiments so methods see common random numbers.
std::uint64_t train_seed(const ExperimentConfig& cfg);
std::uint64_t eval_seed(const ExperimentConfig& cfg);

/// Dataset from the config's toy spec with the experiment seed.
toy::SplitDataset make_dataset(const ExperimentConfig& cfg);

/// Standard training on S alone; the base classifier for pseudo-labels.
nn::DenseNet train_base(const toy::SplitDataset& data, const ExperimentConfig& cfg, std::size_t steps,
                        Execution exec = Execution::parallel);

/// Trains one method, attaching pseudo-labels from `base` where needed. With
/// an empty pool every UAT variant reduces to SUP_AT.
train::TrainResult train_method(toy::SplitDataset data, train::Method method, const ExperimentConfig& cfg,
                                const nn::DenseNet* base, Execution exec = Execution::parallel);

eval::EvalRow evaluate_model(const nn::DenseNet& net, const toy::SplitDataset& data, const ExperimentConfig& cfg,
                             const std::string& method, std::size_t m, Execution exec = Execution::parallel);

/// min(A_FGSM, A_PGD, A_MT).
double robust_accuracy(const eval::EvalRow& row);

/// First m points of the pool (with their truth and pseudo-labels).
toy::SplitDataset with_pool_prefix(toy::SplitDataset data, std::size_t m);

struct EvalTable {
    std::vector<eval::EvalRow> rows;
    std::vector<std::string> failures;  // "method,m: message"
};

EvalTable run_unlabeled_sweep(const ExperimentConfig& cfg, Execution exec = Execution::parallel);
std::string eval_table_csv(const ExperimentConfig& cfg, const EvalTable& table);

struct NoiseRow {
    std::string kind;  // random_flip | correlated | none
    std::string method;
    double noise_rate = 0.0;
    double realized_error = 0.0;
    double robust_acc = 0.0;
    double natural_acc = 0.0;
};

struct NoiseReport {
    std::vector<NoiseRow> rows;
    double correlated_standard_slope = 0.0;  // natural accuracy vs realized error
    std::vector<std::string> failures;
};

NoiseReport run_noise_sweep(const ExperimentConfig& cfg, Execution exec = Execution::parallel);
std::string noise_csv(const ExperimentConfig& cfg, const NoiseReport& report);

struct ShiftRow {
    std::string pool;
    double shift = 0.0;
    double nuisance = 0.0;
    bool filtered = false;
    std::size_t m_used = 0;
    double a_nat = 0.0;
    double a_pgd = 0.0;
    std::string status = "ok";  // or the error that stopped this run
};

std::vector<ShiftRow> run_shift_compare(const ExperimentConfig& cfg, Execution exec = Execution::parallel);
std::string shift_csv(const ExperimentConfig& cfg, const std::vector<ShiftRow>& rows);

struct LandscapePoint {
    double a = 0.0;
    double b = 0.0;
    double loss = 0.0;  // negated margin, the quantity PGD ascends
    bool in_ball = false;
};

/// Grid x + a·u + b·v, u the PGD displacement and v a seeded random sign
/// direction scaled to epsilon. resolution² points over [−extent, extent]².
std::vector<LandscapePoint> loss_landscape_grid(const nn::DenseNet& net, const Vector& x, int y,
                                                const attacks::AttackConfig& pgd, int resolution, double extent,
                                                std::uint64_t seed);
std::string landscape_csv(const ExperimentConfig& cfg, const std::vector<LandscapePoint>& grid);

struct TraceSummary {
    std::size_t example_id = 0;
    double min_final = 0.0;
    double max_final = 0.0;
    bool flagged = false;  // spread > threshold
};

struct TraceReport {
    std::vector<std::vector<std::vector<double>>> traces;  // [example][restart][step]
    std::vector<TraceSummary> summary;
};

TraceReport convergence_traces(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y,
                               const attacks::AttackConfig& attack, double spread_threshold,
                               Execution exec = Execution::parallel);
std::string traces_csv(const ExperimentConfig& cfg, const TraceReport& report);
std::string trace_summary_csv(const ExperimentConfig& cfg, const TraceReport& report);

struct ScatterReport {
    std::vector<double> pgd_margin;
    std::vector<double> spsa_margin;
    double correlation = 0.0;
    double below_diagonal = 0.0;  // fraction where SPSA is strictly lower
};

ScatterReport spsa_scatter(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y,
                           const attacks::AttackConfig& pgd, const attacks::AttackConfig& spsa,
                           Execution exec = Execution::parallel);
std::string scatter_csv(const ExperimentConfig& cfg, const ScatterReport& report);

/// Default radius grid for the Gaussian sweep: low end, midpoint and high end of the valid range at the smallest d.
std::vector<double> gaussian_epsilon_grid(const ExperimentConfig& cfg);
gaussian::SweepConfig sweep_config(const ExperimentConfig& cfg);
std::string sweep_csv(const ExperimentConfig& cfg, const gaussian::SweepReport& report);
std::string sweep_json(const ExperimentConfig& cfg, const gaussian::SweepReport& report);
std::string lemma_csv(const ExperimentConfig& cfg, const std::vector<gaussian::ConcentrationRow>& rows);

/// JSON report with config hash, seed and config echo plus `body` fields.
std::string report_json(const ExperimentConfig& cfg, const std::string& body_json);

std::string train_curve_csv(const ExperimentConfig& cfg, const train::TrainReport& report);

void write_text(const std::string& path, const std::string& text);

/// Optional inputs for experiments that act on an existing model or dataset.
/// Empty paths mean: generate the dataset from the config and train cfg.method.
struct RunInputs {
    std::string checkpoint;
    std::string data;
};

/// File name → content. Nothing here depends on the thread count.
using Outputs = std::map<std::string, std::string>;

/// Runs cfg.experiment and returns every file it would write.
Outputs run_experiment(const ExperimentConfig& cfg, const RunInputs& inputs = {},
                       Execution exec = Execution::parallel);
void write_outputs(const std::string& dir, const Outputs& outputs);

}  // namespace uat::harness
