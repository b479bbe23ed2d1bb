#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "uat/nn.hpp"

/// L∞ inner-maximization attacks with valid-range clipping.
namespace uat::attacks {

using nn::margin_loss;
using nn::targeted_margin_loss;

enum class Variant { fgsm_k, pgd_adam_margin, multi_targeted, spsa, vat_single_step };
enum class Objective { hard_label_xent, kl_to_fixed_target, untargeted_margin, targeted_margin };

std::string to_string(Variant v);
std::string to_string(Objective o);
Variant parse_variant(const std::string& s);
Objective parse_objective(const std::string& s);

struct AttackConfig {
    Variant variant = Variant::pgd_adam_margin;
    Objective objective = Objective::untargeted_margin;
    double epsilon = 0.0;
    int steps = 10;
    /// Negative means 2.5·epsilon/steps.
    double step_size = -1.0;
    int restarts = 1;
    double range_low = 0.0;
    double range_high = 1.0;
    /// Uniform start inside the ball. FGSM^k and SPSA always start at x.
    bool random_start = true;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int spsa_batch = 8192;
    /// Negative means epsilon/10.
    double spsa_scale = -1.0;
    /// SPSA stops once the margin falls below this value (comparison mode only).
    double early_stop_margin = -std::numeric_limits<double>::infinity();
    std::uint64_t seed = 0;

    double effective_step() const { return step_size >= 0.0 ? step_size : 2.5 * epsilon / steps; }
    void validate() const;
};

/// Defaults for each variant: step counts and objectives used throughout the harness.
AttackConfig fgsm_config(double epsilon, int steps = 20);
AttackConfig pgd_config(double epsilon, int steps = 100, int restarts = 5);
AttackConfig multi_targeted_config(double epsilon, int steps = 200, int restarts = 20);
AttackConfig spsa_config(double epsilon, int iterations = 40, int batch = 8192);
/// Hard-label xent ascent with Adam, 10 steps from x; used inside training.
AttackConfig training_config(double epsilon, int steps = 10);

struct AttackResult {
    Vector x_adv;
    double final_objective = 0.0;
    bool success = false;  // prediction at x_adv differs from y
    /// trace[r][s] is the objective at step s of restart r (targets × restarts for MultiTargeted).
    std::vector<std::vector<double>> trace;
};

/// Labels for the attacked batch. `labels` holds y (or the hard label for
/// xent); `targets` the target class for targeted_margin; `soft_targets`
/// the fixed K × B distributions for kl_to_fixed_target.
struct AttackLabels {
    std::vector<int> labels;
    std::vector<int> targets;
    Matrix soft_targets;
};

struct BatchResult {
    Matrix x_adv;
    std::vector<double> objective;
    std::vector<bool> success;
    std::vector<std::vector<std::vector<double>>> traces;  // per example; filled when requested
};

/// Per-example seed used for example i of a batch attack.
inline std::uint64_t example_seed(std::uint64_t master, std::size_t i) { return derive_seed(master, {i}); }
/// Restart r of an example uses this seed; MultiTargeted reuses it for every target.
inline std::uint64_t restart_seed(std::uint64_t example, int r) {
    return derive_seed(example, {static_cast<std::uint64_t>(r)});
}

/// Runs cfg on every column of x. Example i uses example_seed(cfg.seed, ids[i])
/// (ids default to 0..B-1), so results do not depend on batch order or threads.
BatchResult attack_batch(const nn::DenseNet& net, const Matrix& x, const AttackLabels& labels, const AttackConfig& cfg,
                         Execution exec = Execution::parallel, bool record_trace = false,
                         const std::vector<std::size_t>* ids = nullptr);

/// Single-example wrappers.
AttackResult fgsm_k(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg);
AttackResult pgd_adam_margin(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg);
AttackResult multi_targeted(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg);
AttackResult spsa(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg);
/// One FGSM step of size epsilon on xent against argmax p(x).
Vector vat_single_step(const nn::DenseNet& net, const Vector& x, const AttackConfig& cfg);
Matrix vat_single_step(const nn::DenseNet& net, const Matrix& x, const AttackConfig& cfg,
                       Execution exec = Execution::parallel);

/// SPSA gradient estimate of the margin objective at x (B/2 antithetic pairs).
Vector spsa_gradient(const nn::DenseNet& net, const Vector& x, int y, int batch, double scale, Rng& rng);

/// Clamp to [x − ε, x + ε], then to the input range.
void project(Eigen::Ref<Vector> x_adv, const Eigen::Ref<const Vector>& x, double epsilon, double lo, double hi);

/// Fraction of columns whose prediction at the attacked point still equals y.
double adversarial_accuracy(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y,
                            const AttackConfig& cfg, Execution exec = Execution::parallel);

}  // namespace uat::attacks
