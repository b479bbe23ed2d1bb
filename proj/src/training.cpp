#include "uat/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace uat::train {

namespace {

enum Role : std::uint64_t { role_labeled = 0, role_unlabeled = 1, role_unlabeled_separate = 2 };

attacks::AttackConfig seeded(const TrainConfig& config, std::size_t step, Role role) {
    attacks::AttackConfig a = config.attack;
    a.seed = derive_seed(config.seed, {0xa77ac4ULL, step, role});
    return a;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
    if (b.cols() == 0) {
        return a;
    }
    if (a.cols() == 0) {
        return b;
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

std::vector<int> concat(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

void apply_step(nn::DenseNet& net, nn::OptimizerState& state, const nn::GradientBundle& grad) {
    nn::sgd_momentum_step(net, state, grad);
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::standard: return "standard";
        case Method::sup_at: return "sup_at";
        case Method::uat_ot: return "uat_ot";
        case Method::uat_ft: return "uat_ft";
        case Method::uat_pp: return "uat_pp";
        case Method::vat: return "vat";
        case Method::oracle: return "oracle";
    }
    return "?";
}

Method parse_method(const std::string& s) {
    std::string t = s;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t == "uat++") {
        return Method::uat_pp;
    }
    for (auto m : {Method::standard, Method::sup_at, Method::uat_ot, Method::uat_ft, Method::uat_pp, Method::vat,
                   Method::oracle}) {
        if (to_string(m) == t) {
            return m;
        }
    }
    throw InvalidArgument("unknown training method: " + s);
}

std::string to_string(OtWeight w) { return w == OtWeight::batch_ratio ? "batch_ratio" : "plain"; }

OtWeight parse_ot_weight(const std::string& s) {
    if (s == "batch_ratio") {
        return OtWeight::batch_ratio;
    }
    if (s == "plain") {
        return OtWeight::plain;
    }
    throw InvalidArgument("unknown ot weight mode: " + s);
}

void TrainConfig::validate() const {
    require(lambda >= 0.0, "TrainConfig: lambda must be >= 0");
    require(batch >= 1, "TrainConfig: batch must be >= 1");
    require(labeled_batch <= batch, "TrainConfig: labeled_batch exceeds batch");
    require(learning_rate >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0, "TrainConfig: negative coefficient");
    require(decay_fraction >= 0.0 && decay_fraction <= 1.0, "TrainConfig: decay_fraction outside [0,1]");
    require(curve_every >= 1, "TrainConfig: curve_every must be >= 1");
    attack.validate();
}

double TrainConfig::lr_at(std::size_t step) const {
    const auto milestone = static_cast<std::size_t>(std::llround(decay_fraction * static_cast<double>(steps)));
    return step >= milestone ? learning_rate * decay_factor : learning_rate;
}

std::pair<std::size_t, std::size_t> proportional_batches(std::size_t n, std::size_t m, std::size_t b) {
    require(n + m >= 1, "proportional_batches: both sets are empty");
    require(b >= 1, "proportional_batches: batch must be >= 1");
    if (m == 0) {
        return {b, 0};
    }
    if (n == 0) {
        return {0, b};
    }
    require(b >= 2, "proportional_batches: batch of 1 cannot hold both sets");
    auto bs = static_cast<std::size_t>(
        std::llround(static_cast<double>(b) * static_cast<double>(n) / static_cast<double>(n + m)));
    bs = std::clamp<std::size_t>(bs, 1, b - 1);
    return {bs, b - bs};
}

std::vector<int> generate_pseudo_labels(const nn::DenseNet& base, const Matrix& unlabeled, Execution exec) {
    require(unlabeled.cols() >= 1, "generate_pseudo_labels: empty unlabeled set");
    return nn::predict(base, unlabeled, exec);
}

TermResult adversarial_term(const nn::DenseNet& net, const Matrix& xs, const std::vector<int>& ys,
                            const attacks::AttackConfig& attack, AttackCounter* counter, Execution exec) {
    require(xs.cols() >= 1, "adversarial loss: empty batch");
    require(static_cast<std::size_t>(xs.cols()) == ys.size(), "adversarial loss: label count mismatch");
    attacks::AttackConfig a = attack;
    a.objective = attacks::Objective::hard_label_xent;
    attacks::AttackLabels labels;
    labels.labels = ys;
    TermResult out;
    out.x_adv = attacks::attack_batch(net, xs, labels, a, exec).x_adv;
    if (counter != nullptr) {
        counter->examples += ys.size();
        ++counter->calls;
    }
    auto spec = nn::LossSpec::xent(ys);
    spec.weights = uniform_weights(ys.size());
    out.grad = nn::backward(net, out.x_adv, spec, {true, false}, exec);
    out.loss = out.grad.loss;
    return out;
}

TermResult ot_term(const nn::DenseNet& net, const Matrix& xu, const attacks::AttackConfig& attack,
                   const Matrix* x_adv, AttackCounter* counter, Execution exec) {
    require(xu.cols() >= 1, "OT loss: empty batch");
    const auto clean = nn::forward(net, xu, exec);
    const Matrix targets = clean.probabilities;  // frozen copy
    TermResult out;
    if (x_adv != nullptr) {
        require(x_adv->rows() == xu.rows() && x_adv->cols() == xu.cols(), "OT loss: adversarial batch shape mismatch");
        out.x_adv = *x_adv;
    } else {
        attacks::AttackConfig a = attack;
        a.objective = attacks::Objective::hard_label_xent;
        attacks::AttackLabels labels;
        labels.labels.resize(static_cast<std::size_t>(xu.cols()));
        for (Eigen::Index c = 0; c < xu.cols(); ++c) {
            labels.labels[static_cast<std::size_t>(c)] = argmax(clean.logits.col(c));
        }
        out.x_adv = attacks::attack_batch(net, xu, labels, a, exec).x_adv;
        if (counter != nullptr) {
            counter->examples += static_cast<std::size_t>(xu.cols());
            ++counter->calls;
        }
    }
    auto spec = nn::LossSpec::kl(targets);
    spec.weights = uniform_weights(static_cast<std::size_t>(xu.cols()));
    out.grad = nn::backward(net, out.x_adv, spec, {true, false}, exec);
    out.loss = out.grad.loss;
    return out;
}

double hat_L_adv(const nn::DenseNet& net, const Matrix& xs, const std::vector<int>& ys,
                 const attacks::AttackConfig& attack) {
    return adversarial_term(net, xs, ys, attack).loss;
}

double hat_L_OT(const nn::DenseNet& net, const Matrix& xu, const attacks::AttackConfig& attack) {
    return ot_term(net, xu, attack).loss;
}

StepLosses sup_at_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter, Execution exec) {
    auto t = adversarial_term(net, batch.xs, batch.ys, seeded(config, step, role_labeled), counter, exec);
    apply_step(net, state, t.grad);
    return {t.loss, 0.0};
}

StepLosses uat_ot_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter, Execution exec) {
    require(batch.xs.cols() >= 1, "uat_ot_update: empty labeled batch");
    require(batch.xu.cols() >= 1, "uat_ot_update: empty unlabeled batch");
    auto sup = adversarial_term(net, batch.xs, batch.ys, seeded(config, step, role_labeled), counter, exec);
    StepLosses losses{sup.loss, 0.0};
    if (config.lambda > 0.0) {
        auto ot = ot_term(net, batch.xu, seeded(config, step, role_unlabeled), nullptr, counter, exec);
        const double ratio = config.ot_weight == OtWeight::batch_ratio
                                 ? static_cast<double>(batch.xs.cols()) / static_cast<double>(batch.xu.cols())
                                 : 1.0;
        nn::accumulate(sup.grad, ot.grad, config.lambda * ratio);
        losses.smoothness = ot.loss;
    }
    apply_step(net, state, sup.grad);
    return losses;
}

StepLosses uat_ft_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter, Execution exec) {
    require(batch.yu.size() == static_cast<std::size_t>(batch.xu.cols()), "uat_ft_update: missing pseudo-labels");
    const Matrix x = hcat(batch.xs, batch.xu);
    const auto y = concat(batch.ys, batch.yu);
    auto t = adversarial_term(net, x, y, seeded(config, step, role_labeled), counter, exec);
    apply_step(net, state, t.grad);
    return {t.loss, 0.0};
}

StepLosses uat_pp_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                         std::size_t step, AttackCounter* counter, Execution exec) {
    require(batch.yu.size() == static_cast<std::size_t>(batch.xu.cols()), "uat_pp_update: missing pseudo-labels");
    auto combined = [&](const Matrix& x, const std::vector<int>& y, Role role) {
        auto adv = adversarial_term(net, x, y, seeded(config, step, role), counter, exec);
        StepLosses l{adv.loss, 0.0};
        if (config.lambda > 0.0) {
            // L̂OT reuses the points found for L̂adv.
            auto ot = ot_term(net, x, config.attack, &adv.x_adv, nullptr, exec);
            nn::accumulate(adv.grad, ot.grad, config.lambda);
            l.smoothness = ot.loss;
        }
        return std::make_pair(std::move(adv.grad), l);
    };
    if (!config.distribution_shift_mode || batch.xu.cols() == 0 || batch.xs.cols() == 0) {
        auto [grad, l] = combined(hcat(batch.xs, batch.xu), concat(batch.ys, batch.yu), role_labeled);
        apply_step(net, state, grad);
        return l;
    }
    auto [grad, ls] = combined(batch.xs, batch.ys, role_labeled);
    auto [grad_u, lu] = combined(batch.xu, batch.yu, role_unlabeled_separate);
    const double down = static_cast<double>(batch.xs.cols()) / static_cast<double>(batch.xu.cols());
    nn::accumulate(grad, grad_u, down);
    apply_step(net, state, grad);
    return {ls.classification + down * lu.classification, ls.smoothness + down * lu.smoothness};
}

StepLosses vat_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                      std::size_t step, AttackCounter* counter, Execution exec) {
    require(batch.xs.cols() >= 1 && batch.xu.cols() >= 1, "vat_update: empty batch");
    auto sup = adversarial_term(net, batch.xs, batch.ys, seeded(config, step, role_labeled), counter, exec);
    StepLosses losses{sup.loss, 0.0};
    if (config.lambda > 0.0) {
        const Matrix x_adv = attacks::vat_single_step(net, batch.xu, config.attack, exec);
        if (counter != nullptr) {
            counter->examples += static_cast<std::size_t>(batch.xu.cols());
            ++counter->calls;
        }
        auto ot = ot_term(net, batch.xu, config.attack, &x_adv, nullptr, exec);
        const double ratio = config.ot_weight == OtWeight::batch_ratio
                                 ? static_cast<double>(batch.xs.cols()) / static_cast<double>(batch.xu.cols())
                                 : 1.0;
        nn::accumulate(sup.grad, ot.grad, config.lambda * ratio);
        losses.smoothness = ot.loss;
    }
    apply_step(net, state, sup.grad);
    return losses;
}

StepLosses standard_update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig&,
                           std::size_t, AttackCounter*, Execution exec) {
    Matrix x = batch.xs;
    std::vector<int> y = batch.ys;
    if (batch.yu.size() == static_cast<std::size_t>(batch.xu.cols())) {
        x = hcat(batch.xs, batch.xu);
        y = concat(batch.ys, batch.yu);
    }
    require(x.cols() >= 1, "standard_update: empty batch");
    auto spec = nn::LossSpec::xent(y);
    spec.weights = uniform_weights(y.size());
    const auto g = nn::backward(net, x, spec, {true, false}, exec);
    apply_step(net, state, g);
    return {g.loss, 0.0};
}

StepLosses update(nn::DenseNet& net, nn::OptimizerState& state, const Batch& batch, const TrainConfig& config,
                  std::size_t step, AttackCounter* counter, Execution exec) {
    switch (config.method) {
        case Method::standard: return standard_update(net, state, batch, config, step, counter, exec);
        case Method::sup_at: return sup_at_update(net, state, batch, config, step, counter, exec);
        case Method::uat_ot: return uat_ot_update(net, state, batch, config, step, counter, exec);
        case Method::uat_ft:
        case Method::oracle: return uat_ft_update(net, state, batch, config, step, counter, exec);
        case Method::uat_pp: return uat_pp_update(net, state, batch, config, step, counter, exec);
        case Method::vat: return vat_update(net, state, batch, config, step, counter, exec);
    }
    throw InvalidArgument("update: unknown method");
}

TrainResult train(const toy::SplitDataset& data, const TrainConfig& config, Execution exec) {
    config.validate();
    data.validate();
    require(data.n() >= 1, "train: labeled set is empty");

    // Assemble the unlabeled pool the method sees.
    Matrix pool;
    std::vector<int> pool_labels;
    const bool label_free = config.method == Method::uat_ot || config.method == Method::vat;
    const bool pseudo = config.method == Method::uat_ft || config.method == Method::uat_pp ||
                        (config.method == Method::standard && data.pseudo_labels.has_value());
    if (label_free) {
        pool = data.unlabeled_x;
    } else if (pseudo) {
        require(data.pseudo_labels.has_value(), "train: method needs pseudo-labels");
        pool = data.unlabeled_x;
        pool_labels = *data.pseudo_labels;
    } else if (config.method == Method::oracle) {
        pool = data.unlabeled_x;
        pool_labels = data.unlabeled_truth;
        require(pool_labels.size() == static_cast<std::size_t>(pool.cols()), "train: oracle needs hidden labels");
        for (int y : pool_labels) {
            require(y >= 0, "train: oracle pool contains points without a task label");
        }
    }
    if (config.labeled_in_unlabeled && (label_free || pseudo || config.method == Method::oracle)) {
        pool = hcat(pool, data.labeled_x);
        if (!label_free) {
            pool_labels = concat(pool_labels, data.labeled_y);
        }
    }
    if (pool.rows() == 0) {
        pool.resize(data.dim, 0);
    }
    const auto m = static_cast<std::size_t>(pool.cols());
    if (label_free) {
        require(m >= 1, "train: method needs a nonempty unlabeled pool");
    }

    std::size_t bs = 0;
    std::size_t bu = 0;
    if (config.labeled_batch > 0 && m > 0) {
        bs = config.labeled_batch;
        bu = config.batch - bs;
        require(bu >= 1, "train: labeled_batch leaves no room for unlabeled points");
    } else {
        std::tie(bs, bu) = proportional_batches(data.n(), m, config.batch);
    }

    std::vector<int> widths{data.dim};
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(data.classes);
    TrainResult result;
    result.net = nn::DenseNet::random(widths, derive_seed(config.seed, {0x1417ULL}));
    auto state = nn::make_optimizer(result.net, config.learning_rate, config.momentum, config.weight_decay);
    result.report.b_s = bs;
    result.report.b_u = bu;
    result.report.seed = config.seed;

    for (std::size_t step = 0; step < config.steps; ++step) {
        Rng rng = make_rng(config.seed, {0xba7cULL, step});
        std::uniform_int_distribution<std::size_t> pick_s(0, data.n() - 1);
        Batch batch;
        batch.xs.resize(data.dim, static_cast<Eigen::Index>(bs));
        batch.ys.resize(bs);
        for (std::size_t i = 0; i < bs; ++i) {
            const auto j = pick_s(rng);
            batch.xs.col(static_cast<Eigen::Index>(i)) = data.labeled_x.col(static_cast<Eigen::Index>(j));
            batch.ys[i] = data.labeled_y[j];
        }
        batch.xu.resize(data.dim, static_cast<Eigen::Index>(bu));
        if (bu > 0) {
            std::uniform_int_distribution<std::size_t> pick_u(0, m - 1);
            for (std::size_t i = 0; i < bu; ++i) {
                const auto j = pick_u(rng);
                batch.xu.col(static_cast<Eigen::Index>(i)) = pool.col(static_cast<Eigen::Index>(j));
                if (!pool_labels.empty()) {
                    batch.yu.push_back(pool_labels[j]);
                }
            }
        }
        state.learning_rate = config.lr_at(step);
        const auto l = update(result.net, state, batch, config, step, &result.report.attacks, exec);
        if (step % config.curve_every == 0 || step + 1 == config.steps) {
            result.report.curve.push_back({step, l.classification, l.smoothness, state.learning_rate});
        }
    }
    return result;
}

NoisyLabels inject_random_flip(const std::vector<int>& labels, int classes, double rate, std::uint64_t seed) {
    require(rate >= 0.0 && rate <= 1.0, "inject_label_noise: rate outside [0,1]");
    require(classes >= 2, "inject_label_noise: need at least two classes");
    NoisyLabels out;
    out.labels = labels;
    Rng rng(seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> other(0, classes - 2);
    std::size_t flips = 0;
    for (auto& y : out.labels) {
        require(y >= 0 && y < classes, "inject_label_noise: label out of range");
        if (coin(rng) < rate) {
            const int t = other(rng);
            y = t >= y ? t + 1 : t;
            ++flips;
        }
    }
    out.meta.kind = toy::NoiseKind::random_flip;
    out.meta.rate = rate;
    out.meta.realized_error = labels.empty() ? 0.0 : static_cast<double>(flips) / static_cast<double>(labels.size());
    return out;
}

NoisyLabels inject_correlated(const nn::DenseNet& weak, const Matrix& pool, const std::vector<int>& truth,
                              Execution exec) {
    require(static_cast<std::size_t>(pool.cols()) == truth.size(), "inject_label_noise: truth size mismatch");
    NoisyLabels out;
    out.labels = nn::predict(weak, pool, exec);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        wrong += out.labels[i] != truth[i] ? 1 : 0;
    }
    out.meta.kind = toy::NoiseKind::correlated;
    out.meta.realized_error = truth.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(truth.size());
    out.meta.rate = out.meta.realized_error;
    return out;
}

FilteredPool confidence_filter(const nn::DenseNet& base, const Matrix& pool, double threshold,
                               std::size_t top_per_class, std::uint64_t seed, Execution exec) {
    require(pool.cols() >= 1, "confidence_filter: empty pool");
    const auto f = nn::forward(base, pool, exec);
    const int k = base.num_classes();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
    std::vector<double> conf(static_cast<std::size_t>(pool.cols()));
    std::vector<int> label(static_cast<std::size_t>(pool.cols()));
    for (Eigen::Index c = 0; c < pool.cols(); ++c) {
        const auto i = static_cast<std::size_t>(c);
        label[i] = argmax(f.probabilities.col(c));
        conf[i] = f.probabilities(label[i], c);
        if (conf[i] > threshold) {
            by_class[static_cast<std::size_t>(label[i])].push_back(i);
        }
    }
    std::vector<std::size_t> kept;
    for (auto& members : by_class) {
        if (top_per_class > 0 && members.size() > top_per_class) {
            std::stable_sort(members.begin(), members.end(),
                             [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
            members.resize(top_per_class);
        }
        std::sort(members.begin(), members.end());
        kept.insert(kept.end(), members.begin(), members.end());
    }
    require(!kept.empty(), "confidence_filter: no point exceeds the confidence threshold");
    std::sort(kept.begin(), kept.end());

    FilteredPool out;
    out.kept_before_balance = kept.size();
    out.source = kept;
    if (top_per_class > 0) {
        Rng rng(seed);
        for (const auto& members : by_class) {
            if (members.empty()) {
                continue;
            }
            std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
            for (std::size_t n = members.size(); n < top_per_class; ++n) {
                out.source.push_back(members[pick(rng)]);
                ++out.duplicated;
            }
        }
    }
    out.x.resize(pool.rows(), static_cast<Eigen::Index>(out.source.size()));
    for (std::size_t i = 0; i < out.source.size(); ++i) {
        out.x.col(static_cast<Eigen::Index>(i)) = pool.col(static_cast<Eigen::Index>(out.source[i]));
        out.labels.push_back(label[out.source[i]]);
    }
    return out;
}

}  // namespace uat::train
