#include <doctest.h>

#include <cmath>

#include "uat/attacks.hpp"

using namespace uat;
using namespace uat::attacks;

namespace {

Matrix random_inputs(int d, int b, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(d, b);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] = u(rng);
    }
    return x;
}

/// Linear K-class net with no zero weight differences.
nn::DenseNet linear_net(int d, int k, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Matrix w(k, d);
    Vector b(k);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        w.data()[i] = g(rng);
    }
    for (int i = 0; i < k; ++i) {
        b(i) = 0.1 * g(rng);
    }
    return nn::DenseNet({nn::Layer{w, b}});
}

/// Exact minimum of the margin over ball ∩ [0,1]^d for a linear net: per
/// competing class the box minimum sits at a corner.
double linear_min_margin(const nn::DenseNet& net, const Vector& x, int y, double eps) {
    const auto& w = net.layers()[0].weight;
    const auto& b = net.layers()[0].bias;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < w.rows(); ++j) {
        if (j == y) {
            continue;
        }
        const Vector diff = (w.row(y) - w.row(j)).transpose();
        Vector corner = x;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            corner(i) = diff(i) > 0 ? std::max(0.0, x(i) - eps) : std::min(1.0, x(i) + eps);
        }
        best = std::min(best, diff.dot(corner) + b(y) - b(j));
    }
    return best;
}

bool feasible(const Matrix& adv, const Matrix& x, double eps) {
    return (adv - x).cwiseAbs().maxCoeff() <= eps + 1e-15 && adv.minCoeff() >= 0.0 && adv.maxCoeff() <= 1.0;
}

std::vector<int> labels_for(int n, int k) {
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = (i * 7) % k;
    }
    return y;
}

}  // namespace

TEST_CASE("project: clamps to the ball first, then to the range") {
    Vector x(3);
    x << 0.02, 0.5, 0.99;
    Vector adv(3);
    adv << -0.5, 0.58, 1.3;
    project(adv, x, 0.05, 0.0, 1.0);
    CHECK(adv(0) == 0.0);
    CHECK(adv(1) == doctest::Approx(0.55));
    CHECK(adv(2) == 1.0);
}

TEST_CASE("every variant returns feasible points") {
    const auto net = nn::DenseNet::random({5, 16, 3}, 2);
    const Matrix x = random_inputs(5, 12, 3);
    AttackLabels labels;
    labels.labels = labels_for(12, 3);
    for (double eps : {0.01, 0.1, 0.4}) {
        auto spsa_cfg = spsa_config(eps, 5, 64);
        for (const auto& cfg : {fgsm_config(eps), pgd_config(eps, 20, 3), multi_targeted_config(eps, 10, 2), spsa_cfg,
                                training_config(eps)}) {
            auto c = cfg;
            c.seed = 44;
            CHECK(feasible(attack_batch(net, x, labels, c).x_adv, x, eps));
        }
        auto vat = fgsm_config(eps);
        CHECK(feasible(vat_single_step(net, x, vat), x, eps));
    }
}

TEST_CASE("epsilon = 0 leaves every input unchanged") {
    const auto net = nn::DenseNet::random({4, 8, 3}, 5);
    const Vector x = random_inputs(4, 1, 6).col(0);
    const auto f = fgsm_k(net, x, 1, fgsm_config(0.0));
    CHECK(f.x_adv == x);
    CHECK(f.final_objective == doctest::Approx(nn::xent_from_logits(nn::logits(net, x), 1)).epsilon(1e-15));
    CHECK(pgd_adam_margin(net, x, 1, pgd_config(0.0, 10, 2)).x_adv == x);
    CHECK(spsa(net, x, 1, spsa_config(0.0, 3, 16)).x_adv == x);
    CHECK(vat_single_step(net, x, fgsm_config(0.0)) == x);
}

TEST_CASE("fgsm_k: linear two-class model reaches the clipped corner and ascends monotonically") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto net = linear_net(6, 2, s);
        const Vector x = random_inputs(6, 1, 100 + s).col(0);
        const int y = static_cast<int>(s % 2);
        const double eps = 0.1;
        const auto r = fgsm_k(net, x, y, fgsm_config(eps, 20));
        const auto& w = net.layers()[0].weight;
        const Vector diff = (w.row(y) - w.row(1 - y)).transpose();
        Vector expect = x - eps * diff.array().sign().matrix();
        expect = expect.cwiseMax(0.0).cwiseMin(1.0);
        CHECK((r.x_adv - expect).cwiseAbs().maxCoeff() <= 1e-15);
        const auto& tr = r.trace.at(0);
        for (std::size_t i = 1; i < tr.size(); ++i) {
            CHECK(tr[i] >= tr[i - 1] - 1e-15);
        }
    }
}

TEST_CASE("pgd_adam_margin: attains the closed-form linear minimum") {
    for (int k : {2, 3, 4}) {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto net = linear_net(8, k, 10 * k + s);
            const Vector x = random_inputs(8, 1, 200 + s).col(0);
            const int y = static_cast<int>(s) % k;
            auto cfg = pgd_config(0.05, 100, 1);
            cfg.seed = s;
            const auto r = pgd_adam_margin(net, x, y, cfg);
            CHECK(std::abs(r.final_objective - linear_min_margin(net, x, y, 0.05)) <= 1e-3);
        }
    }
}

TEST_CASE("pgd and multi-targeted are at least as strong as fgsm on a fixed model") {
    const auto net = nn::DenseNet::random({6, 32, 4}, 7);
    const Matrix x = random_inputs(6, 300, 8);
    const auto y = nn::predict(net, x);
    auto f = fgsm_config(0.05);
    auto p = pgd_config(0.05, 50, 2);
    auto m = multi_targeted_config(0.05, 50, 2);
    p.seed = m.seed = 3;
    const double af = adversarial_accuracy(net, x, y, f);
    const double ap = adversarial_accuracy(net, x, y, p);
    const double am = adversarial_accuracy(net, x, y, m);
    CHECK(ap <= af + 0.01);
    CHECK(am <= ap + 0.01);
}

TEST_CASE("multi_targeted: two classes equal targeted PGD toward the other class") {
    const auto net = nn::DenseNet::random({5, 16, 2}, 9);
    const Matrix x = random_inputs(5, 20, 10);
    AttackLabels labels;
    labels.labels = labels_for(20, 2);
    auto mt = multi_targeted_config(0.1, 30, 3);
    mt.seed = 77;
    auto pgd = mt;
    pgd.variant = Variant::pgd_adam_margin;
    pgd.objective = Objective::targeted_margin;
    for (int y : labels.labels) {
        labels.targets.push_back(1 - y);
    }
    const auto a = attack_batch(net, x, labels, mt);
    const auto b = attack_batch(net, x, labels, pgd);
    CHECK(a.x_adv == b.x_adv);
    for (std::size_t i = 0; i < a.objective.size(); ++i) {
        CHECK(a.objective[i] == b.objective[i]);
    }
}

TEST_CASE("multi_targeted: result is no worse than any per-class candidate") {
    const auto net = nn::DenseNet::random({5, 16, 4}, 11);
    const Matrix x = random_inputs(5, 15, 12);
    AttackLabels labels;
    labels.labels = labels_for(15, 4);
    auto mt = multi_targeted_config(0.1, 30, 2);
    mt.seed = 5;
    const auto all = attack_batch(net, x, labels, mt);
    for (int offset = 1; offset < 4; ++offset) {
        auto t = mt;
        t.variant = Variant::pgd_adam_margin;
        t.objective = Objective::targeted_margin;
        AttackLabels tl = labels;
        for (int y : labels.labels) {
            tl.targets.push_back((y + offset) % 4);
        }
        const auto cand = attack_batch(net, x, tl, t);
        const auto margins = nn::example_losses(nn::forward(net, cand.x_adv).logits, nn::LossSpec::margin(labels.labels));
        for (std::size_t i = 0; i < margins.size(); ++i) {
            CHECK(all.objective[i] <= margins[i] + 1e-12);
        }
    }
}

TEST_CASE("spsa: gradient estimate aligns with the analytic linear gradient") {
    const auto net = linear_net(8, 2, 21);
    const Vector x = random_inputs(8, 1, 22).col(0);
    Rng rng(23);
    const Vector est = spsa_gradient(net, x, 0, 8192, 0.005, rng);
    const auto& w = net.layers()[0].weight;
    const Vector truth = (w.row(0) - w.row(1)).transpose();
    CHECK(est.dot(truth) / (est.norm() * truth.norm()) >= 0.99);

    auto odd = spsa_config(0.1, 5, 63);
    CHECK_THROWS_AS(odd.validate(), InvalidArgument);
}

TEST_CASE("vat_single_step: one full-radius signed step against the predicted label") {
    const auto net = nn::DenseNet::random({5, 16, 3}, 31);
    const Matrix x = random_inputs(5, 10, 32);
    auto cfg = fgsm_config(0.07, 1);
    cfg.step_size = 0.07;
    const auto pred = nn::predict(net, x);
    AttackLabels labels;
    labels.labels = pred;
    const auto f = attack_batch(net, x, labels, cfg);
    CHECK(vat_single_step(net, x, fgsm_config(0.07)) == f.x_adv);
}

TEST_CASE("attack_batch: results are independent of execution mode and batch order") {
    const auto net = nn::DenseNet::random({6, 24, 4}, 41);
    const Matrix x = random_inputs(6, 70, 42);
    AttackLabels labels;
    labels.labels = labels_for(70, 4);
    auto cfg = pgd_config(0.05, 20, 3);
    cfg.seed = 9;
    const auto a = attack_batch(net, x, labels, cfg, Execution::serial);
    const auto b = attack_batch(net, x, labels, cfg, Execution::parallel);
    CHECK(a.x_adv == b.x_adv);

    std::vector<std::size_t> order(70);
    for (std::size_t i = 0; i < 70; ++i) {
        order[i] = 69 - i;
    }
    Matrix xr(6, 70);
    AttackLabels lr;
    for (std::size_t i = 0; i < 70; ++i) {
        xr.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(order[i]));
        lr.labels.push_back(labels.labels[order[i]]);
    }
    const auto c = attack_batch(net, xr, lr, cfg, Execution::parallel, false, &order);
    for (std::size_t i = 0; i < 70; ++i) {
        CHECK(c.x_adv.col(static_cast<Eigen::Index>(i)) == a.x_adv.col(static_cast<Eigen::Index>(order[i])));
    }
}

TEST_CASE("pgd traces: best-so-far margin is monotone and ends at the reported objective") {
    const auto net = nn::DenseNet::random({5, 16, 3}, 51);
    const Vector x = random_inputs(5, 1, 52).col(0);
    auto cfg = pgd_config(0.1, 40, 4);
    cfg.seed = 1;
    const auto r = pgd_adam_margin(net, x, 2, cfg);
    REQUIRE(r.trace.size() == 4);
    double overall = std::numeric_limits<double>::infinity();
    for (const auto& curve : r.trace) {
        CHECK(curve.size() == 41);
        double best = std::numeric_limits<double>::infinity();
        for (double v : curve) {
            const double next = std::min(best, v);
            CHECK(next <= best);
            best = next;
        }
        overall = std::min(overall, best);
    }
    CHECK(r.final_objective == overall);
}

TEST_CASE("attack config: names round-trip and invalid settings are rejected") {
    for (auto v : {Variant::fgsm_k, Variant::pgd_adam_margin, Variant::multi_targeted, Variant::spsa,
                   Variant::vat_single_step}) {
        CHECK(parse_variant(to_string(v)) == v);
    }
    for (auto o : {Objective::hard_label_xent, Objective::kl_to_fixed_target, Objective::untargeted_margin,
                   Objective::targeted_margin}) {
        CHECK(parse_objective(to_string(o)) == o);
    }
    auto bad = pgd_config(-0.1);
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    CHECK(pgd_config(0.1, 100, 5).effective_step() == doctest::Approx(0.0025));
}
