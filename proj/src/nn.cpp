#include "uat/nn.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace uat::nn {

namespace {

constexpr std::size_t kChunk = 64;
constexpr int kCheckpointVersion = 1;

void check_label(int label, Eigen::Index k, const char* who) {
    require(label >= 0 && label < k, std::string(who) + ": invalid label");
}

double log_sum_exp(const Eigen::Ref<const Vector>& z) {
    const double mx = z.maxCoeff();
    return mx + std::log((z.array() - mx).exp().sum());
}

// dℓ/dZ for column b of a chunk, scaled by the example weight.
void loss_gradient(const LossSpec& spec, const Eigen::Ref<const Vector>& z, std::size_t b, Eigen::Ref<Vector> out) {
    const double w = spec.weights.empty() ? 1.0 : spec.weights[b];
    out.setZero();
    switch (spec.kind) {
        case LossKind::xent: {
            out = softmax(z);
            out[spec.labels[b]] -= 1.0;
            break;
        }
        case LossKind::kl_to_target: {
            const auto t = spec.targets.col(static_cast<Eigen::Index>(b));
            out = softmax(z) * t.sum() - t;
            break;
        }
        case LossKind::margin: {
            const int y = spec.labels[b];
            out[y] = 1.0;
            out[runner_up(z, y)] -= 1.0;
            break;
        }
        case LossKind::targeted_margin: {
            out[spec.labels[b]] = 1.0;
            out[spec.target_classes[b]] -= 1.0;
            break;
        }
    }
    out *= w;
}

double loss_value(const LossSpec& spec, const Eigen::Ref<const Vector>& z, std::size_t b) {
    switch (spec.kind) {
        case LossKind::xent:
            return xent_from_logits(z, spec.labels[b]);
        case LossKind::kl_to_target: {
            const auto t = spec.targets.col(static_cast<Eigen::Index>(b));
            const Vector logp = z.array() - log_sum_exp(z);
            double s = 0.0;
            for (Eigen::Index i = 0; i < t.size(); ++i) {
                if (t[i] > 0.0) {
                    s += t[i] * (std::log(t[i]) - logp[i]);
                }
            }
            return s;
        }
        case LossKind::margin:
            return margin_loss(z, spec.labels[b]);
        case LossKind::targeted_margin:
            return targeted_margin_loss(z, spec.labels[b], spec.target_classes[b]);
    }
    return 0.0;
}

void validate_spec(const LossSpec& spec, Eigen::Index k, std::size_t n) {
    if (!spec.weights.empty()) {
        require(spec.weights.size() == n, "LossSpec: weights size mismatch");
    }
    switch (spec.kind) {
        case LossKind::xent:
        case LossKind::margin:
            require(spec.labels.size() == n, "LossSpec: labels size mismatch");
            for (int y : spec.labels) {
                check_label(y, k, "LossSpec");
            }
            break;
        case LossKind::targeted_margin:
            require(spec.labels.size() == n && spec.target_classes.size() == n, "LossSpec: labels size mismatch");
            for (std::size_t i = 0; i < n; ++i) {
                check_label(spec.labels[i], k, "LossSpec");
                check_label(spec.target_classes[i], k, "LossSpec");
                require(spec.labels[i] != spec.target_classes[i], "LossSpec: target class equals label");
            }
            break;
        case LossKind::kl_to_target:
            require(spec.targets.rows() == k && static_cast<std::size_t>(spec.targets.cols()) == n,
                    "LossSpec: target matrix shape mismatch");
            break;
        default:
            throw InvalidArgument("LossSpec: unsupported loss kind");
    }
}

Matrix forward_chunk(const DenseNet& net, const Eigen::Ref<const Matrix>& x) {
    Matrix a = x;
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = layers[l].weight * a;
        z.colwise() += layers[l].bias;
        if (l + 1 < layers.size()) {
            z = z.cwiseMax(0.0);
        }
        a = std::move(z);
    }
    return a;
}

}  // namespace

DenseNet::DenseNet(std::vector<Layer> layers) : layers_(std::move(layers)) {
    require(!layers_.empty(), "DenseNet: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        require(layers_[l].weight.rows() == layers_[l].bias.size(), "DenseNet: bias size mismatch");
        require(layers_[l].weight.cols() >= 1 && layers_[l].weight.rows() >= 1, "DenseNet: empty layer");
        if (l > 0) {
            require(layers_[l].weight.cols() == layers_[l - 1].weight.rows(), "DenseNet: layer dimensions do not chain");
        }
    }
    require(num_classes() >= 2, "DenseNet: need at least two classes");
}

DenseNet DenseNet::random(const std::vector<int>& widths, std::uint64_t seed) {
    require(widths.size() >= 2, "DenseNet: need input and output widths");
    Rng rng(seed);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        require(widths[l] >= 1 && widths[l + 1] >= 1, "DenseNet: widths must be positive");
        const double bound = std::sqrt(6.0 / widths[l]);
        std::uniform_real_distribution<double> u(-bound, bound);
        Layer layer{Matrix(widths[l + 1], widths[l]), Vector::Zero(widths[l + 1])};
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
                layer.weight(r, c) = u(rng);
            }
        }
        layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
}

DenseNet DenseNet::zeros(const std::vector<int>& widths) {
    require(widths.size() >= 2, "DenseNet: need input and output widths");
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        layers.push_back({Matrix::Zero(widths[l + 1], widths[l]), Vector::Zero(widths[l + 1])});
    }
    return DenseNet(std::move(layers));
}

std::vector<int> DenseNet::widths() const {
    std::vector<int> w{input_dim()};
    for (const auto& l : layers_) {
        w.push_back(static_cast<int>(l.weight.rows()));
    }
    return w;
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    }
    return n;
}

Vector softmax(const Eigen::Ref<const Vector>& logits) {
    Vector e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
}

Matrix softmax_columns(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        out.col(c) = softmax(logits.col(c));
    }
    return out;
}

ForwardResult forward(const DenseNet& net, const Matrix& x, Execution exec) {
    require(x.rows() == net.input_dim(), "forward: input dimension mismatch");
    ForwardResult out;
    out.logits.resize(net.num_classes(), x.cols());
    for_each_chunk(static_cast<std::size_t>(x.cols()), 256, exec, [&](std::size_t b, std::size_t e, std::size_t) {
        const auto n = static_cast<Eigen::Index>(e - b);
        out.logits.middleCols(static_cast<Eigen::Index>(b), n) =
            forward_chunk(net, x.middleCols(static_cast<Eigen::Index>(b), n));
    });
    out.probabilities = softmax_columns(out.logits);
    return out;
}

Vector logits(const DenseNet& net, const Eigen::Ref<const Vector>& x) {
    require(x.size() == net.input_dim(), "forward: input dimension mismatch");
    return forward_chunk(net, x);
}

std::vector<int> predict(const DenseNet& net, const Matrix& x, Execution exec) {
    const auto f = forward(net, x, exec);
    std::vector<int> out(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        out[static_cast<std::size_t>(c)] = argmax(f.logits.col(c));
    }
    return out;
}

double xent_from_logits(const Eigen::Ref<const Vector>& logits, int label) {
    check_label(label, logits.size(), "xent_loss");
    return log_sum_exp(logits) - logits[label];
}

double xent_loss(const Eigen::Ref<const Vector>& probabilities, int label) {
    check_label(label, probabilities.size(), "xent_loss");
    return -std::log(std::max(probabilities[label], std::numeric_limits<double>::min()));
}

double kl_divergence(const Eigen::Ref<const Vector>& p, const Eigen::Ref<const Vector>& q) {
    require(p.size() == q.size() && p.size() >= 1, "kl_divergence: size mismatch");
    require(p.minCoeff() >= 0.0 && std::abs(p.sum() - 1.0) <= 1e-6, "kl_divergence: p is not a distribution");
    require(q.minCoeff() >= 0.0 && std::abs(q.sum() - 1.0) <= 1e-6, "kl_divergence: q is not a distribution");
    double s = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            s += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
        }
    }
    return std::max(s, 0.0);
}

int runner_up(const Eigen::Ref<const Vector>& logits, int y) {
    int best = -1;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        if (i != y && (best < 0 || logits[i] > logits[best])) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

double margin_loss(const Eigen::Ref<const Vector>& logits, int y) {
    require(logits.size() >= 2, "margin_loss: need K >= 2");
    check_label(y, logits.size(), "margin_loss");
    return logits[y] - logits[runner_up(logits, y)];
}

double targeted_margin_loss(const Eigen::Ref<const Vector>& logits, int y, int t) {
    check_label(y, logits.size(), "targeted_margin_loss");
    check_label(t, logits.size(), "targeted_margin_loss");
    require(t != y, "targeted_margin_loss: target equals label");
    return logits[y] - logits[t];
}

LossSpec LossSpec::xent(std::vector<int> labels) {
    LossSpec s;
    s.kind = LossKind::xent;
    s.labels = std::move(labels);
    return s;
}

LossSpec LossSpec::kl(Matrix targets) {
    LossSpec s;
    s.kind = LossKind::kl_to_target;
    s.targets = std::move(targets);
    return s;
}

LossSpec LossSpec::margin(std::vector<int> labels) {
    LossSpec s;
    s.kind = LossKind::margin;
    s.labels = std::move(labels);
    return s;
}

LossSpec LossSpec::targeted(std::vector<int> labels, std::vector<int> targets) {
    LossSpec s;
    s.kind = LossKind::targeted_margin;
    s.labels = std::move(labels);
    s.target_classes = std::move(targets);
    return s;
}

std::vector<double> example_losses(const Matrix& logits, const LossSpec& spec) {
    const auto n = static_cast<std::size_t>(logits.cols());
    validate_spec(spec, logits.rows(), n);
    std::vector<double> out(n);
    for (std::size_t b = 0; b < n; ++b) {
        out[b] = loss_value(spec, logits.col(static_cast<Eigen::Index>(b)), b);
    }
    return out;
}

GradientBundle zero_gradient(const DenseNet& net) {
    GradientBundle g;
    for (const auto& l : net.layers()) {
        g.params.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    }
    return g;
}

GradientBundle backward(const DenseNet& net, const Matrix& x, const LossSpec& spec, GradientRequest want,
                        Execution exec) {
    require(x.rows() == net.input_dim(), "backward: input dimension mismatch");
    const auto n = static_cast<std::size_t>(x.cols());
    validate_spec(spec, net.num_classes(), n);
    const auto& layers = net.layers();
    const std::size_t depth = layers.size();
    const std::size_t chunks = (n + kChunk - 1) / kChunk;

    std::vector<GradientBundle> parts(chunks);
    GradientBundle out;
    out.example_loss.resize(n);
    if (want.input) {
        out.input.resize(x.rows(), x.cols());
    }

    for_each_chunk(n, kChunk, exec, [&](std::size_t b, std::size_t e, std::size_t ci) {
        const auto cols = static_cast<Eigen::Index>(e - b);
        std::vector<Matrix> acts(depth + 1);  // acts[0] = input, acts[l+1] = output of layer l
        acts[0] = x.middleCols(static_cast<Eigen::Index>(b), cols);
        for (std::size_t l = 0; l < depth; ++l) {
            Matrix z = layers[l].weight * acts[l];
            z.colwise() += layers[l].bias;
            if (l + 1 < depth) {
                z = z.cwiseMax(0.0);
            }
            acts[l + 1] = std::move(z);
        }
        const Matrix& z_out = acts[depth];
        Matrix delta(z_out.rows(), cols);
        GradientBundle part;
        for (Eigen::Index c = 0; c < cols; ++c) {
            const std::size_t idx = b + static_cast<std::size_t>(c);
            loss_gradient(spec, z_out.col(c), idx, delta.col(c));
            const double w = spec.weights.empty() ? 1.0 : spec.weights[idx];
            const double v = loss_value(spec, z_out.col(c), idx);
            out.example_loss[idx] = v;
            part.loss += w * v;
        }
        if (want.params) {
            part.params.resize(depth);
        }
        for (std::size_t l = depth; l-- > 0;) {
            if (want.params) {
                part.params[l].weight = delta * acts[l].transpose();
                part.params[l].bias = delta.rowwise().sum();
            }
            if (l == 0 && !want.input) {
                break;
            }
            Matrix back = layers[l].weight.transpose() * delta;
            if (l > 0) {
                // ReLU subgradient 0 at the kink: acts[l] > 0 iff preactivation > 0.
                back = (acts[l].array() > 0.0).select(back, 0.0);
            }
            delta = std::move(back);
        }
        if (want.input) {
            out.input.middleCols(static_cast<Eigen::Index>(b), cols) = delta;
        }
        parts[ci] = std::move(part);
    });

    if (want.params) {
        out.params = zero_gradient(net).params;
    }
    for (const auto& p : parts) {
        out.loss += p.loss;
        if (want.params) {
            for (std::size_t l = 0; l < depth; ++l) {
                out.params[l].weight += p.params[l].weight;
                out.params[l].bias += p.params[l].bias;
            }
        }
    }
    return out;
}

void accumulate(GradientBundle& acc, const GradientBundle& other, double scale) {
    require(acc.params.size() == other.params.size(), "accumulate: shape mismatch");
    for (std::size_t l = 0; l < acc.params.size(); ++l) {
        require(acc.params[l].weight.rows() == other.params[l].weight.rows() &&
                    acc.params[l].weight.cols() == other.params[l].weight.cols(),
                "accumulate: shape mismatch");
        acc.params[l].weight += scale * other.params[l].weight;
        acc.params[l].bias += scale * other.params[l].bias;
    }
    acc.loss += scale * other.loss;
}

OptimizerState make_optimizer(const DenseNet& net, double lr, double momentum, double weight_decay) {
    require(lr >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0, "make_optimizer: negative coefficient");
    OptimizerState s;
    s.momentum = zero_gradient(net).params;
    s.learning_rate = lr;
    s.momentum_coef = momentum;
    s.weight_decay = weight_decay;
    return s;
}

void sgd_momentum_step(DenseNet& net, OptimizerState& state, const GradientBundle& grad) {
    auto& layers = net.layers();
    require(state.momentum.size() == layers.size() && grad.params.size() == layers.size(),
            "sgd_momentum_step: shape mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto& p = layers[l];
        auto& v = state.momentum[l];
        const auto& g = grad.params[l];
        require(v.weight.rows() == p.weight.rows() && v.weight.cols() == p.weight.cols() &&
                    g.weight.rows() == p.weight.rows() && g.weight.cols() == p.weight.cols() &&
                    g.bias.size() == p.bias.size() && v.bias.size() == p.bias.size(),
                "sgd_momentum_step: shape mismatch");
        v.weight = state.momentum_coef * v.weight + (g.weight + state.weight_decay * p.weight);
        v.bias = state.momentum_coef * v.bias + (g.bias + state.weight_decay * p.bias);
        p.weight -= state.learning_rate * v.weight;
        p.bias -= state.learning_rate * v.bias;
    }
}

std::string to_json(const DenseNet& net) {
    nlohmann::json j;
    j["format"] = "uat-densenet";
    j["version"] = kCheckpointVersion;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        nlohmann::json lj;
        lj["rows"] = l.weight.rows();
        lj["cols"] = l.weight.cols();
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.weight.size()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                w.push_back(l.weight(r, c));
            }
        }
        lj["weight"] = w;
        lj["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
        j["layers"].push_back(lj);
    }
    return j.dump();
}

DenseNet from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    require(j.value("format", "") == "uat-densenet", "checkpoint: unknown format");
    require(j.value("version", 0) == kCheckpointVersion, "checkpoint: unsupported version");
    std::vector<Layer> layers;
    for (const auto& lj : j.at("layers")) {
        const auto rows = lj.at("rows").get<Eigen::Index>();
        const auto cols = lj.at("cols").get<Eigen::Index>();
        const auto w = lj.at("weight").get<std::vector<double>>();
        const auto b = lj.at("bias").get<std::vector<double>>();
        require(static_cast<Eigen::Index>(w.size()) == rows * cols && static_cast<Eigen::Index>(b.size()) == rows,
                "checkpoint: array size mismatch");
        Layer layer{Matrix(rows, cols), Vector(rows)};
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
            }
            layer.bias[r] = b[static_cast<std::size_t>(r)];
        }
        layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
}

void save_checkpoint(const DenseNet& net, const std::string& path) {
    std::ofstream f(path);
    require(static_cast<bool>(f), "save_checkpoint: cannot open " + path);
    f << to_json(net) << '\n';
}

DenseNet load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    require(static_cast<bool>(f), "load_checkpoint: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

namespace reference {

namespace {

std::vector<Vector> activations(const DenseNet& net, const Vector& x) {
    const auto& layers = net.layers();
    std::vector<Vector> acts{x};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& W = layers[l].weight;
        Vector z(W.rows());
        for (Eigen::Index r = 0; r < W.rows(); ++r) {
            double s = layers[l].bias[r];
            for (Eigen::Index c = 0; c < W.cols(); ++c) {
                s += W(r, c) * acts.back()[c];
            }
            z[r] = (l + 1 < layers.size() && s < 0.0) ? 0.0 : s;
        }
        acts.push_back(z);
    }
    return acts;
}

}  // namespace

Vector logits(const DenseNet& net, const Vector& x) {
    require(x.size() == net.input_dim(), "forward: input dimension mismatch");
    return activations(net, x).back();
}

GradientBundle backward(const DenseNet& net, const Matrix& x, const LossSpec& spec) {
    require(x.rows() == net.input_dim(), "backward: input dimension mismatch");
    const auto n = static_cast<std::size_t>(x.cols());
    validate_spec(spec, net.num_classes(), n);
    const auto& layers = net.layers();
    GradientBundle out = zero_gradient(net);
    out.input.resize(x.rows(), x.cols());
    for (std::size_t b = 0; b < n; ++b) {
        const auto acts = activations(net, x.col(static_cast<Eigen::Index>(b)));
        Vector delta(net.num_classes());
        loss_gradient(spec, acts.back(), b, delta);
        out.example_loss.push_back(loss_value(spec, acts.back(), b));
        out.loss += (spec.weights.empty() ? 1.0 : spec.weights[b]) * out.example_loss.back();
        for (std::size_t l = layers.size(); l-- > 0;) {
            const auto& W = layers[l].weight;
            for (Eigen::Index r = 0; r < W.rows(); ++r) {
                out.params[l].bias[r] += delta[r];
                for (Eigen::Index c = 0; c < W.cols(); ++c) {
                    out.params[l].weight(r, c) += delta[r] * acts[l][c];
                }
            }
            Vector back = Vector::Zero(W.cols());
            for (Eigen::Index c = 0; c < W.cols(); ++c) {
                for (Eigen::Index r = 0; r < W.rows(); ++r) {
                    back[c] += W(r, c) * delta[r];
                }
                if (l > 0 && acts[l][c] <= 0.0) {
                    back[c] = 0.0;
                }
            }
            delta = back;
        }
        out.input.col(static_cast<Eigen::Index>(b)) = delta;
    }
    return out;
}

}  // namespace reference

}  // namespace uat::nn
