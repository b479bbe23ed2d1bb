#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uat/attacks.hpp"
#include "uat/nn.hpp"
#include "uat/toy_data.hpp"

namespace uat::train {

/// standard: clean xent on S (plus pseudo-labeled U when present); oracle: UAT-FT with true labels.
enum class Method { standard, sup_at, uat_ot, uat_ft, uat_pp, vat, oracle };
/// batch_ratio: λ·(b_s/b_u)·L̂OT; plain: λ·L̂OT.
enum class OtWeight { batch_ratio, plain };

std::string to_string(Method m);
Method parse_method(const std::string& s);
std::string to_string(OtWeight w);
OtWeight parse_ot_weight(const std::string& s);

struct TrainConfig {
    Method method = Method::sup_at;
    double lambda = 5.0;
    std::size_t batch = 256;
    /// 0 means proportional_batches over the dataset sizes.
    std::size_t labeled_batch = 0;
    std::size_t steps = 2000;
    double learning_rate = 0.02;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    /// Learning rate is multiplied by decay_factor from decay_fraction·steps on.
    double decay_fraction = 0.6;
    double decay_factor = 0.1;
    std::vector<int> hidden = {64, 64};
    attacks::AttackConfig attack = attacks::training_config(0.05);
    bool distribution_shift_mode = false;
    OtWeight ot_weight = OtWeight::batch_ratio;
    /// Adds the labeled inputs to the unlabeled pool.
    bool labeled_in_unlabeled = false;
    std::size_t curve_every = 10;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(std::size_t step) const;
};

/// b_s = round(B·N/(N+M)) clamped so each nonempty set gets at least one slot.
std::pair<std::size_t, std::size_t> proportional_batches(std::size_t n, std::size_t m, std::size_t b);

/// argmax p(·|x) per column; ties go to the lowest class index.
std::vector<int> generate_pseudo_labels(const nn::DenseNet& base, const Matrix& unlabeled,
                                        Execution exec = Execution::parallel);

/// Counts attacked examples, so a step can be checked for one inner maximization per example.
struct AttackCounter {
    std::size_t examples = 0;
    std::size_t calls = 0;
};

struct TermResult {
    double loss = 0.0;           // mean over the batch
    nn::GradientBundle grad;     // gradient of the mean
    Matrix x_adv;
};

/// Mean xent at attacked points; the attack maximizes xent against ys.
TermResult adversarial_term(const nn::DenseNet& net, const Matrix& xs, const std::vector<int>& ys,
                            const attacks::AttackConfig& attack, AttackCounter* counter = nullptr,
                            Execution exec = Execution::parallel);

/// Mean KL(p̂(·|x) ‖ p(·|x′)) with p̂ a stop-gradient copy; x′ from a hard-label
/// attack on argmax p̂(·|x), or the supplied points when x_adv is given.
TermResult ot_term(const nn::DenseNet& net, const Matrix& xu, const attacks::AttackConfig& attack,
                   const Matrix* x_adv = nullptr, AttackCounter* counter = nullptr,
                   Execution exec = Execution::parallel);

double hat_L_adv(const nn::DenseNet& net, const Matrix& xs, const std::vector<int>& ys,
                 const attacks::AttackConfig& attack);
double hat_L_OT(const nn::DenseNet& net, const Matrix& xu, const attacks::AttackConfig& attack);

struct Batch {
    Matrix xs;
    std::vector<int> ys;
    Matrix xu;
    std::vector<int> yu;  // pseudo-labels; empty for label-free methods
};

struct StepLosses {
    double classification = 0.0;
    double smoothness = 0.0;
};

/// One optimizer step of the named method on a prepared batch. Attack seeds
/// derive from (config.attack.seed, step) so equal batches give equal updates.
StepLosses update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                  std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);

StepLosses sup_at_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);
StepLosses uat_ot_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);
StepLosses uat_ft_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);
StepLosses uat_pp_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);
StepLosses vat_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                      std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);
StepLosses standard_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                           std::size_t step, AttackCounter* counter = nullptr, Execution exec = Execution::parallel);

struct CurvePoint {
    std::size_t step = 0;
    double classification = 0.0;
    double smoothness = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<CurvePoint> curve;
    std::size_t b_s = 0;
    std::size_t b_u = 0;
    AttackCounter attacks;
    std::uint64_t seed = 0;
};

struct TrainResult {
    nn::DenseNet net;
    TrainReport report;
};

/// Full training run. UAT-FT / UAT++ need data.pseudo_labels; ORACLE uses
/// the hidden truth; SUP_AT ignores the pool.
TrainResult train(const toy::SplitDataset& data, const TrainConfig& config, Execution exec = Execution::parallel);

struct NoisyLabels {
    std::vector<int> labels;
    toy::NoiseMeta meta;
};

/// Each label independently, with probability rate, becomes a uniformly chosen different class.
NoisyLabels inject_random_flip(const std::vector<int>& labels, int classes, double rate, std::uint64_t seed);
/// Labels become the weak base net's predictions; realized error is measured against truth.
NoisyLabels inject_correlated(const nn::DenseNet& weak, const Matrix& pool, const std::vector<int>& truth,
                              Execution exec = Execution::parallel);

struct FilteredPool {
    Matrix x;
    std::vector<int> labels;
    std::vector<std::size_t> source;  // column index into the input pool
    std::size_t kept_before_balance = 0;
    std::size_t duplicated = 0;
};

/// Keeps points whose max probability exceeds threshold, the top_per_class most
/// confident per predicted class, then duplicates random survivors until each
/// class with survivors has top_per_class points. top_per_class = 0 means no cap
/// and no balancing. Throws when nothing survives.
FilteredPool confidence_filter(const nn::DenseNet& base, const Matrix& pool, double threshold,
                               std::size_t top_per_class, std::uint64_t seed, Execution exec = Execution::parallel);

}  // namespace uat::train
