#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uat/common.hpp"
#include "uat/parallel.hpp"

namespace uat::nn {

struct Layer {
    Matrix weight;  // out × in
    Vector bias;    // out
};

/// Fully connected ReLU network producing raw logits. Inputs are columns.
class DenseNet {
public:
    DenseNet() = default;
    explicit DenseNet(std::vector<Layer> layers);

    /// widths = {input, hidden..., classes}; He-style uniform fan-in init, zero biases.
    static DenseNet random(const std::vector<int>& widths, std::uint64_t seed);
    static DenseNet zeros(const std::vector<int>& widths);

    int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
    int num_classes() const { return static_cast<int>(layers_.back().weight.rows()); }
    std::vector<int> widths() const;
    std::size_t parameter_count() const;

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }

private:
    std::vector<Layer> layers_;
};

/// Column-wise softmax computed from shifted logits.
Vector softmax(const Eigen::Ref<const Vector>& logits);
Matrix softmax_columns(const Matrix& logits);

struct ForwardResult {
    Matrix logits;         // K × B
    Matrix probabilities;  // K × B
};

ForwardResult forward(const DenseNet& net, const Matrix& x, Execution exec = Execution::serial);
Vector logits(const DenseNet& net, const Eigen::Ref<const Vector>& x);
std::vector<int> predict(const DenseNet& net, const Matrix& x, Execution exec = Execution::serial);

/// −log softmax(logits)[label] via log-sum-exp.
double xent_from_logits(const Eigen::Ref<const Vector>& logits, int label);
double xent_loss(const Eigen::Ref<const Vector>& probabilities, int label);

/// Σ pᵢ log(pᵢ/qᵢ) with 0·log 0 = 0 and q floored at 1e-12.
double kl_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q);

/// Z_y − max_{i≠y} Z_i.
double margin_loss(const Eigen::Ref<const Vector>& logits, int y);
/// Z_y − Z_t.
double targeted_margin_loss(const Eigen::Ref<const Vector>& logits, int y, int t);
/// Highest-scoring class other than y; ties go to the lowest index.
int runner_up(const Eigen::Ref<const Vector>& logits, int y);

enum class LossKind { xent, kl_to_target, margin, targeted_margin };

/// Per-example loss ℓ_b summed with weights w_b (all 1 when empty).
struct LossSpec {
    LossKind kind = LossKind::xent;
    std::vector<int> labels;          // xent, margin, targeted_margin
    std::vector<int> target_classes;  // targeted_margin
    Matrix targets;                   // kl_to_target: K × B fixed distributions
    std::vector<double> weights;

    static LossSpec xent(std::vector<int> labels);
    static LossSpec kl(Matrix targets);
    static LossSpec margin(std::vector<int> labels);
    static LossSpec targeted(std::vector<int> labels, std::vector<int> targets);
};

/// Per-example loss values for a logits matrix.
std::vector<double> example_losses(const Matrix& logits, const LossSpec& spec);

struct GradientBundle {
    std::vector<Layer> params;  // same shapes as the network; empty if not requested
    Matrix input;               // d × B; empty if not requested
    double loss = 0.0;          // weighted sum
    std::vector<double> example_loss;  // unweighted ℓ_b per column
};

struct GradientRequest {
    bool params = true;
    bool input = true;
};

/// Exact gradients of the weighted loss. Columns are processed in fixed
/// chunks and partial parameter gradients summed in chunk order, so the
/// result does not depend on exec or the thread count.
GradientBundle backward(const DenseNet& net, const Matrix& x, const LossSpec& spec, GradientRequest want = {},
                        Execution exec = Execution::serial);

/// acc += scale · other (parameter part only, plus loss).
void accumulate(GradientBundle& acc, const GradientBundle& other, double scale);
GradientBundle zero_gradient(const DenseNet& net);

struct OptimizerState {
    std::vector<Layer> momentum;
    double learning_rate = 0.01;
    double momentum_coef = 0.9;
    double weight_decay = 5e-4;
};

OptimizerState make_optimizer(const DenseNet& net, double lr, double momentum = 0.9, double weight_decay = 5e-4);

/// v ← μ·v + (g + wd·θ); θ ← θ − lr·v. Weight decay applies to every parameter.
void sgd_momentum_step(DenseNet& net, OptimizerState& state, const GradientBundle& grad);

std::string to_json(const DenseNet& net);
DenseNet from_json(const std::string& text);
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(const std::string& path);

/// Plain-loop single-example kernels used as a test oracle for the batched path.
namespace reference {
Vector logits(const DenseNet& net, const Vector& x);
GradientBundle backward(const DenseNet& net, const Matrix& x, const LossSpec& spec);
}  // namespace reference

}  // namespace uat::nn
