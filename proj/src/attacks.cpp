#include "uat/attacks.hpp"

#include <algorithm>
#include <cmath>

namespace uat::attacks {

namespace {

constexpr std::size_t kAttackChunk = 32;

bool is_margin(Objective o) { return o == Objective::untargeted_margin || o == Objective::targeted_margin; }

// Attacks maximize dir·loss: +1 for xent/KL, −1 for margins.
double direction(Objective o) { return is_margin(o) ? -1.0 : 1.0; }

nn::LossSpec make_spec(Objective o, const AttackLabels& labels, std::size_t b, std::size_t e) {
    auto slice = [&](const std::vector<int>& v) {
        return std::vector<int>(v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(e));
    };
    switch (o) {
        case Objective::hard_label_xent:
            return nn::LossSpec::xent(slice(labels.labels));
        case Objective::untargeted_margin:
            return nn::LossSpec::margin(slice(labels.labels));
        case Objective::targeted_margin:
            return nn::LossSpec::targeted(slice(labels.labels), slice(labels.targets));
        case Objective::kl_to_fixed_target:
            return nn::LossSpec::kl(labels.soft_targets.middleCols(static_cast<Eigen::Index>(b),
                                                                    static_cast<Eigen::Index>(e - b)));
    }
    throw InvalidArgument("attack: unsupported objective");
}

struct RunOutput {
    Matrix x;
    std::vector<double> value;  // dir·loss at the returned point
    std::vector<std::vector<double>> trace;  // per example, loss per step
};

// One restart of a first-order attack on a chunk. `adam` selects Adam
// updates with best-iterate tracking; otherwise signed steps and the final
// iterate are returned.
RunOutput gradient_run(const nn::DenseNet& net, const Matrix& x, const nn::LossSpec& spec, double dir,
                       const AttackConfig& cfg, const std::vector<std::uint64_t>& seeds, int restart, bool adam,
                       bool random_start) {
    const Eigen::Index d = x.rows();
    const Eigen::Index n = x.cols();
    const double eps = cfg.epsilon;
    const double step = cfg.effective_step();
    Matrix cur = x;
    if (random_start && eps > 0.0) {
        for (Eigen::Index c = 0; c < n; ++c) {
            Rng rng(restart_seed(seeds[static_cast<std::size_t>(c)], restart));
            std::uniform_real_distribution<double> u(-eps, eps);
            for (Eigen::Index j = 0; j < d; ++j) {
                cur(j, c) += u(rng);
            }
            project(cur.col(c), x.col(c), eps, cfg.range_low, cfg.range_high);
        }
    }
    Matrix m1 = Matrix::Zero(d, n);
    Matrix m2 = Matrix::Zero(d, n);
    RunOutput out;
    out.x = cur;
    out.value.assign(static_cast<std::size_t>(n), -std::numeric_limits<double>::infinity());
    out.trace.assign(static_cast<std::size_t>(n), {});
    const nn::GradientRequest input_only{false, true};

    for (int s = 0; s <= cfg.steps; ++s) {
        const bool last = s == cfg.steps;
        nn::GradientBundle g;
        std::vector<double> losses;
        if (last) {
            losses = nn::example_losses(nn::forward(net, cur).logits, spec);
        } else {
            g = nn::backward(net, cur, spec, input_only);
            losses = g.example_loss;
        }
        for (Eigen::Index c = 0; c < n; ++c) {
            const auto i = static_cast<std::size_t>(c);
            out.trace[i].push_back(losses[i]);
            const double v = dir * losses[i];
            if (adam ? v > out.value[i] : last) {
                out.value[i] = v;
                out.x.col(c) = cur.col(c);
            }
        }
        if (last) {
            break;
        }
        Matrix ascent = dir * g.input;
        if (adam) {
            const double t = s + 1;
            m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * ascent;
            m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * ascent.cwiseProduct(ascent);
            const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
            const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
            cur.array() += step * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
        } else {
            cur.array() += step * ascent.array().sign();
        }
        for (Eigen::Index c = 0; c < n; ++c) {
            project(cur.col(c), x.col(c), eps, cfg.range_low, cfg.range_high);
        }
    }
    return out;
}

AttackResult spsa_one(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg, std::uint64_t seed) {
    const double eps = cfg.epsilon;
    const double scale = cfg.spsa_scale >= 0.0 ? cfg.spsa_scale : eps / 10.0;
    const double step = cfg.effective_step();
    AttackResult best;
    best.final_objective = std::numeric_limits<double>::infinity();
    for (int r = 0; r < cfg.restarts; ++r) {
        Rng rng(restart_seed(seed, r));
        Vector cur = x;
        Vector m1 = Vector::Zero(x.size());
        Vector m2 = Vector::Zero(x.size());
        double cur_margin = margin_loss(nn::logits(net, cur), y);
        Vector run_best = cur;
        double run_best_margin = cur_margin;
        std::vector<double> trace{cur_margin};
        for (int s = 0; s < cfg.steps && eps > 0.0; ++s) {
            if (cur_margin < cfg.early_stop_margin) {
                break;
            }
            const Vector g = spsa_gradient(net, cur, y, cfg.spsa_batch, scale, rng);
            const double t = s + 1;
            m1 = cfg.adam_beta1 * m1 + (1.0 - cfg.adam_beta1) * g;
            m2 = cfg.adam_beta2 * m2 + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
            const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
            const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
            cur.array() -= step * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_eps);
            project(cur, x, eps, cfg.range_low, cfg.range_high);
            cur_margin = margin_loss(nn::logits(net, cur), y);
            trace.push_back(cur_margin);
            if (cur_margin < run_best_margin) {
                run_best_margin = cur_margin;
                run_best = cur;
            }
        }
        best.trace.push_back(std::move(trace));
        if (run_best_margin < best.final_objective) {
            best.final_objective = run_best_margin;
            best.x_adv = run_best;
        }
    }
    best.success = argmax(nn::logits(net, best.x_adv)) != y;
    return best;
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::fgsm_k: return "fgsm_k";
        case Variant::pgd_adam_margin: return "pgd_adam_margin";
        case Variant::multi_targeted: return "multi_targeted";
        case Variant::spsa: return "spsa";
        case Variant::vat_single_step: return "vat_single_step";
    }
    return "?";
}

std::string to_string(Objective o) {
    switch (o) {
        case Objective::hard_label_xent: return "hard_label_xent";
        case Objective::kl_to_fixed_target: return "kl_to_fixed_target";
        case Objective::untargeted_margin: return "untargeted_margin";
        case Objective::targeted_margin: return "targeted_margin";
    }
    return "?";
}

Variant parse_variant(const std::string& s) {
    for (auto v : {Variant::fgsm_k, Variant::pgd_adam_margin, Variant::multi_targeted, Variant::spsa,
                   Variant::vat_single_step}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    throw InvalidArgument("unknown attack variant: " + s);
}

Objective parse_objective(const std::string& s) {
    for (auto o : {Objective::hard_label_xent, Objective::kl_to_fixed_target, Objective::untargeted_margin,
                   Objective::targeted_margin}) {
        if (to_string(o) == s) {
            return o;
        }
    }
    throw InvalidArgument("unknown attack objective: " + s);
}

void AttackConfig::validate() const {
    require(epsilon >= 0.0, "AttackConfig: epsilon must be >= 0");
    require(steps >= 1, "AttackConfig: steps must be >= 1");
    require(restarts >= 1, "AttackConfig: restarts must be >= 1");
    require(range_low <= range_high, "AttackConfig: empty input range");
    if (variant == Variant::spsa) {
        require(spsa_batch >= 2 && spsa_batch % 2 == 0, "AttackConfig: SPSA batch must be even");
    }
}

AttackConfig fgsm_config(double epsilon, int steps) {
    AttackConfig c;
    c.variant = Variant::fgsm_k;
    c.objective = Objective::hard_label_xent;
    c.epsilon = epsilon;
    c.steps = steps;
    c.random_start = false;
    return c;
}

AttackConfig pgd_config(double epsilon, int steps, int restarts) {
    AttackConfig c;
    c.variant = Variant::pgd_adam_margin;
    c.objective = Objective::untargeted_margin;
    c.epsilon = epsilon;
    c.steps = steps;
    c.restarts = restarts;
    return c;
}

AttackConfig multi_targeted_config(double epsilon, int steps, int restarts) {
    AttackConfig c = pgd_config(epsilon, steps, restarts);
    c.variant = Variant::multi_targeted;
    c.objective = Objective::targeted_margin;
    return c;
}

AttackConfig spsa_config(double epsilon, int iterations, int batch) {
    AttackConfig c;
    c.variant = Variant::spsa;
    c.objective = Objective::untargeted_margin;
    c.epsilon = epsilon;
    c.steps = iterations;
    c.spsa_batch = batch;
    c.random_start = false;
    return c;
}

AttackConfig training_config(double epsilon, int steps) {
    AttackConfig c;
    c.variant = Variant::pgd_adam_margin;
    c.objective = Objective::hard_label_xent;
    c.epsilon = epsilon;
    c.steps = steps;
    c.random_start = false;
    return c;
}

void project(Eigen::Ref<Vector> x_adv, const Eigen::Ref<const Vector>& x, double epsilon, double lo, double hi) {
    x_adv = x_adv.array().max(x.array() - epsilon).min(x.array() + epsilon).max(lo).min(hi).matrix();
}

Vector spsa_gradient(const nn::DenseNet& net, const Vector& x, int y, int batch, double scale, Rng& rng) {
    require(batch >= 2 && batch % 2 == 0, "spsa: batch must be even");
    require(scale > 0.0, "spsa: perturbation scale must be positive");
    const Eigen::Index d = x.size();
    const int pairs = batch / 2;
    Matrix deltas(d, pairs);
    Matrix points(d, batch);
    for (int k = 0; k < pairs; ++k) {
        std::uint64_t bits = 0;
        for (Eigen::Index j = 0; j < d; ++j) {
            if (j % 64 == 0) {
                bits = rng();
            }
            deltas(j, k) = (bits & 1U) != 0 ? 1.0 : -1.0;
            bits >>= 1;
        }
        points.col(2 * k) = x + scale * deltas.col(k);
        points.col(2 * k + 1) = x - scale * deltas.col(k);
    }
    const Matrix z = nn::forward(net, points).logits;
    Vector g = Vector::Zero(d);
    for (int k = 0; k < pairs; ++k) {
        const double diff = margin_loss(z.col(2 * k), y) - margin_loss(z.col(2 * k + 1), y);
        g += (diff / (2.0 * scale)) * deltas.col(k);
    }
    return g / pairs;
}

BatchResult attack_batch(const nn::DenseNet& net, const Matrix& x, const AttackLabels& labels, const AttackConfig& cfg,
                         Execution exec, bool record_trace, const std::vector<std::size_t>* ids) {
    cfg.validate();
    require(x.rows() == net.input_dim(), "attack: input dimension mismatch");
    const auto n = static_cast<std::size_t>(x.cols());
    if (ids != nullptr) {
        require(ids->size() == n, "attack: id count mismatch");
    }
    const int k = net.num_classes();

    AttackLabels lab = labels;
    AttackConfig run_cfg = cfg;
    if (cfg.variant == Variant::vat_single_step) {
        lab.labels = nn::predict(net, x, exec);
        run_cfg.objective = Objective::hard_label_xent;
        run_cfg.steps = 1;
        run_cfg.step_size = cfg.epsilon;
    }
    if (run_cfg.objective != Objective::kl_to_fixed_target) {
        require(lab.labels.size() == n, "attack: label count mismatch");
    }
    if (cfg.variant == Variant::multi_targeted) {
        require(k >= 2, "multi_targeted: need K >= 2");
    }

    BatchResult out;
    out.x_adv.resize(x.rows(), x.cols());
    out.objective.assign(n, 0.0);
    out.success.assign(n, false);
    if (record_trace) {
        out.traces.assign(n, {});
    }

    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) {
        seeds[i] = example_seed(cfg.seed, ids != nullptr ? (*ids)[i] : i);
    }

    const std::size_t chunk = cfg.variant == Variant::spsa ? 1 : kAttackChunk;
    for_each_chunk(n, chunk, exec, [&](std::size_t b, std::size_t e, std::size_t) {
        const auto cols = static_cast<Eigen::Index>(e - b);
        const Matrix xc = x.middleCols(static_cast<Eigen::Index>(b), cols);
        const std::vector<std::uint64_t> sc(seeds.begin() + static_cast<std::ptrdiff_t>(b),
                                            seeds.begin() + static_cast<std::ptrdiff_t>(e));

        if (run_cfg.variant == Variant::spsa) {
            for (std::size_t i = b; i < e; ++i) {
                auto r = spsa_one(net, x.col(static_cast<Eigen::Index>(i)), lab.labels[i], run_cfg, seeds[i]);
                out.x_adv.col(static_cast<Eigen::Index>(i)) = r.x_adv;
                out.objective[i] = r.final_objective;
                if (record_trace) {
                    out.traces[i] = std::move(r.trace);
                }
            }
            return;
        }

        Matrix best_x = xc;
        std::vector<double> best(static_cast<std::size_t>(cols), -std::numeric_limits<double>::infinity());
        std::vector<double> best_obj(static_cast<std::size_t>(cols), 0.0);
        auto merge = [&](const RunOutput& run, const std::vector<double>& score, const std::vector<double>& obj) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                const auto i = static_cast<std::size_t>(c);
                if (score[i] > best[i]) {
                    best[i] = score[i];
                    best_obj[i] = obj[i];
                    best_x.col(c) = run.x.col(c);
                }
                if (record_trace) {
                    out.traces[b + i].push_back(run.trace[i]);
                }
            }
        };

        if (run_cfg.variant == Variant::multi_targeted) {
            // Candidates from every (target, restart) pair are ranked by the untargeted margin.
            const std::vector<int> ys(lab.labels.begin() + static_cast<std::ptrdiff_t>(b),
                                      lab.labels.begin() + static_cast<std::ptrdiff_t>(e));
            for (int offset = 1; offset < k; ++offset) {
                std::vector<int> ts(ys.size());
                for (std::size_t i = 0; i < ys.size(); ++i) {
                    ts[i] = (ys[i] + offset) % k;
                }
                const auto spec = nn::LossSpec::targeted(ys, ts);
                for (int r = 0; r < run_cfg.restarts; ++r) {
                    const auto run = gradient_run(net, xc, spec, -1.0, run_cfg, sc, r, true, run_cfg.random_start);
                    const auto margins = nn::example_losses(nn::forward(net, run.x).logits, nn::LossSpec::margin(ys));
                    std::vector<double> score(margins.size());
                    for (std::size_t i = 0; i < margins.size(); ++i) {
                        score[i] = -margins[i];
                    }
                    merge(run, score, margins);
                }
            }
        } else {
            const bool adam = run_cfg.variant == Variant::pgd_adam_margin;
            const bool random_start = adam && run_cfg.random_start;
            const int restarts = adam ? run_cfg.restarts : 1;
            const double dir = direction(run_cfg.objective);
            const auto spec = make_spec(run_cfg.objective, lab, b, e);
            for (int r = 0; r < restarts; ++r) {
                const auto run = gradient_run(net, xc, spec, dir, run_cfg, sc, r, adam, random_start);
                std::vector<double> obj(run.value.size());
                for (std::size_t i = 0; i < obj.size(); ++i) {
                    obj[i] = dir * run.value[i];
                }
                merge(run, run.value, obj);
            }
        }
        out.x_adv.middleCols(static_cast<Eigen::Index>(b), cols) = best_x;
        for (Eigen::Index c = 0; c < cols; ++c) {
            out.objective[b + static_cast<std::size_t>(c)] = best_obj[static_cast<std::size_t>(c)];
        }
    });

    if (run_cfg.objective != Objective::kl_to_fixed_target) {
        const auto pred = nn::predict(net, out.x_adv, exec);
        for (std::size_t i = 0; i < n; ++i) {
            out.success[i] = pred[i] != lab.labels[i];
        }
    }
    return out;
}

namespace {

AttackResult single(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg) {
    AttackLabels labels;
    labels.labels = {y};
    const auto r = attack_batch(net, Matrix(x), labels, cfg, Execution::serial, true);
    AttackResult out;
    out.x_adv = r.x_adv.col(0);
    out.final_objective = r.objective[0];
    out.success = r.success[0];
    out.trace = r.traces[0];
    return out;
}

}  // namespace

AttackResult fgsm_k(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg) {
    require(cfg.variant == Variant::fgsm_k, "fgsm_k: variant mismatch");
    return single(net, x, y, cfg);
}

AttackResult pgd_adam_margin(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg) {
    require(cfg.variant == Variant::pgd_adam_margin, "pgd_adam_margin: variant mismatch");
    return single(net, x, y, cfg);
}

AttackResult multi_targeted(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg) {
    require(cfg.variant == Variant::multi_targeted, "multi_targeted: variant mismatch");
    return single(net, x, y, cfg);
}

AttackResult spsa(const nn::DenseNet& net, const Vector& x, int y, const AttackConfig& cfg) {
    require(cfg.variant == Variant::spsa, "spsa: variant mismatch");
    return single(net, x, y, cfg);
}

Matrix vat_single_step(const nn::DenseNet& net, const Matrix& x, const AttackConfig& cfg, Execution exec) {
    AttackConfig c = cfg;
    c.variant = Variant::vat_single_step;
    return attack_batch(net, x, {}, c, exec).x_adv;
}

Vector vat_single_step(const nn::DenseNet& net, const Vector& x, const AttackConfig& cfg) {
    return vat_single_step(net, Matrix(x), cfg, Execution::serial).col(0);
}

double adversarial_accuracy(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y,
                            const AttackConfig& cfg, Execution exec) {
    require(!y.empty(), "adversarial_accuracy: empty set");
    AttackLabels labels;
    labels.labels = y;
    const auto r = attack_batch(net, x, labels, cfg, exec);
    std::size_t ok = 0;
    for (bool s : r.success) {
        ok += s ? 0 : 1;
    }
    return static_cast<double>(ok) / static_cast<double>(y.size());
}

}  // namespace uat::attacks
