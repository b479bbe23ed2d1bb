#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uat/common.hpp"
#include "uat/parallel.hpp"

/// The two-class (θ*, σ) Gaussian model, the linear estimators built on it,
/// closed-form robust error and the sample-complexity / concentration studies.
namespace uat::gaussian {

struct GaussianModel {
    Vector theta_star;  // per-class mean; class y has mean y·theta_star
    double sigma = 1.0;

    GaussianModel() = default;
    GaussianModel(Vector theta, double noise);

    int dim() const { return static_cast<int>(theta_star.size()); }

    /// Model with theta_star = (1, ..., 1), so that ‖theta_star‖₂ = √d.
    static GaussianModel unit_mean(int d, double sigma);

    /// Empty string when ‖theta_star‖₂ = √d and sigma ≤ d^{1/4}/32, otherwise
    /// a description of the violated condition.
    std::string theorem_regime_violation() const;
};

/// Points are stored column-wise; labels are ±1.
struct LabeledSet {
    Matrix x;
    std::vector<int> y;

    std::size_t size() const { return y.size(); }
};

LabeledSet sample_gaussian(const GaussianModel& model, std::size_t n, std::uint64_t seed);

/// Classifier x ↦ sign⟨w, x⟩ with sign(0) = +1.
class LinearClassifier {
public:
    explicit LinearClassifier(Vector w);

    const Vector& weights() const { return w_; }
    Vector unit() const { return w_ / w_.norm(); }
    int predict(const Eigen::Ref<const Vector>& x) const { return w_.dot(x) >= 0.0 ? 1 : -1; }

private:
    Vector w_;
};

/// Unnormalized sum Σ yᵢ·xᵢ. Throws if the sum is the zero vector.
LinearClassifier supervised_estimator(const LabeledSet& samples);

/// Pseudo-labels every unlabeled column with the supervised estimator, then
/// returns Σ ŷᵢ·xᵢ over the unlabeled points.
LinearClassifier uat_ft_estimator(const LabeledSet& labeled, const Matrix& unlabeled);

struct RobustErrorQuery {
    double epsilon = 0.0;  // L∞ radius
};

/// Φ((ε‖w‖₁ − ⟨w, θ*⟩) / (σ‖w‖₂)).
double exact_robust_error(const LinearClassifier& c, const GaussianModel& model, RobustErrorQuery q);

struct MonteCarloEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;
};

/// Samples fresh points, applies the worst-case shift x' = x − y·ε·sign(w)
/// and counts misclassifications. Chunked with per-chunk seeds, so the serial
/// and parallel paths return identical values.
MonteCarloEstimate monte_carlo_robust_error(const LinearClassifier& c, const GaussianModel& model,
                                            RobustErrorQuery q, std::size_t samples, std::uint64_t seed,
                                            Execution exec = Execution::parallel);

/// exp(−(⟨ŵ, θ*⟩ − ε‖ŵ‖₁)² / (2σ²)) for a unit-norm ŵ; 1 when the margin
/// condition ⟨ŵ, θ*⟩ ≥ ε‖ŵ‖₁ fails.
double lemma20_error_bound(const LinearClassifier& unit_classifier, const GaussianModel& model,
                           RobustErrorQuery q);

/// ⌈c·ε²·√d⌉ with the tested constant c = 256.
std::size_t theorem1_unlabeled_count(double epsilon, int d, double constant = 256.0);

struct EpsilonRange {
    double low = 0.0;   // low_coeff · d^{-1/4}
    double high = 0.0;
};

/// Radius range over which the ε²√d rule is claimed. Endpoint constants are
/// configurable; the defaults are 1/4 · d^{-1/4} and 1/4.
EpsilonRange theorem1_epsilon_range(int d, double low_coeff = 0.25, double high = 0.25);

struct SweepCell {
    int d = 0;
    double sigma = 0.0;
    double epsilon = 0.0;
    std::size_t m = 0;
    std::size_t trials = 0;
    double success_rate = 0.0;
    double mean_error = 0.0;
    std::uint64_t seed = 0;
    bool regime_ok = true;
    std::string regime_note;
};

struct SweepReport {
    std::vector<SweepCell> cells;
    std::uint64_t master_seed = 0;
    double target_error = 0.01;
};

struct SweepConfig {
    std::vector<int> dims;
    std::vector<double> epsilons;
    /// Unlabeled counts per cell. When empty, each cell uses theorem1_unlabeled_count.
    std::vector<std::size_t> ms;
    std::size_t trials = 100;
    double target_error = 0.01;
    /// sigma = sigma_scale · d^{1/4}.
    double sigma_scale = 1.0 / 32.0;
    std::uint64_t seed = 0;
    /// Skip larger m in a (d, ε) group once a cell reaches success_threshold;
    /// ms must then be ascending. Seeds are unaffected.
    bool stop_at_success = false;
    double success_threshold = 0.95;
};

/// One labeled example plus m unlabeled per trial; success when the UAT-FT
/// estimator's exact robust error is at most target_error. Cells outside the
/// theorem regime are reported with regime_ok = false and not computed.
SweepReport theorem1_sweep(const SweepConfig& config, Execution exec = Execution::parallel);

struct ScalingFit {
    struct Row {
        int d = 0;
        double epsilon = 0.0;
        std::size_t m_star = 0;  // 0 when no grid value reached the success threshold
    };
    std::vector<Row> table;
    double epsilon_slope = 0.0;  // mean over d of d log m* / d log ε
    double dim_slope = 0.0;      // mean over ε of d log m* / d log d
    std::size_t epsilon_groups = 0;
    std::size_t dim_groups = 0;
};

/// Smallest grid m per (d, ε) cell achieving success_threshold, then
/// log-log least-squares slopes.
ScalingFit fit_scaling(const SweepReport& report, double success_threshold = 0.95);

struct ConcentrationConfig {
    // chi-squared tail
    int chi_n = 50;
    double chi_sigma = 1.0;
    double chi_alpha2 = 200.0;
    std::size_t chi_draws = 1'000'000;
    // L1 tail
    int l1_m = 20;
    double l1_sigma = 1.0;
    double l1_a = 3.0;
    std::size_t l1_draws = 1'000'000;
    // sample-mean norm, inner product and normalized inner product events
    int mean_d = 100;
    std::size_t mean_m = 1000;
    double mean_sigma = 1.0;
    double delta = 0.01;
    std::size_t mean_draws = 2000;
};

struct ConcentrationRow {
    std::string bound_name;
    double analytic_bound = 0.0;
    double empirical_tail = 0.0;
    double stderr_ = 0.0;
    std::size_t draws = 0;
    bool pass = false;
};

/// Monte-Carlo tails against the analytic bounds: χ² tail, L1-norm tail,
/// sample-mean norm, sample-mean inner product and normalized inner product.
/// A row passes when empirical ≤ bound + 3 standard errors.
std::vector<ConcentrationRow> concentration_checks(const ConcentrationConfig& config, std::uint64_t seed,
                                                   Execution exec = Execution::parallel);

/// Accuracy P(h(x) = y) of a linear classifier under the model (ε = 0 error complement).
double linear_accuracy(const LinearClassifier& c, const GaussianModel& model);

}  // namespace uat::gaussian
