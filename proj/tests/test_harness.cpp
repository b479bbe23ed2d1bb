#include <doctest.h>

#include <cmath>
#include <sstream>

#include "uat/harness.hpp"

using namespace uat;
using namespace uat::harness;

namespace {

Matrix random_inputs(int d, int b, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    Matrix x(d, b);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] = u(rng);
    }
    return x;
}

nn::DenseNet linear_two_class(int d, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g;
    Matrix w(2, d);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        w.data()[i] = g(rng);
    }
    Vector b = Vector::Zero(2);
    return nn::DenseNet({nn::Layer{w, b}});
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        out.push_back(line);
    }
    return out;
}

/// A config small enough to train and evaluate in about a second.
ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.toy.n_labeled = 20;
    cfg.toy.m_unlabeled = 200;
    cfg.toy.n_test = 60;
    cfg.steps = 30;
    cfg.base_steps = 30;
    cfg.batch = 32;
    cfg.hidden = {16};
    cfg.pgd_steps = 10;
    cfg.pgd_restarts = 2;
    cfg.mt_steps = 10;
    cfg.mt_restarts = 1;
    cfg.fgsm_steps = 5;
    cfg.spsa_points = 6;
    cfg.spsa_iterations = 5;
    cfg.spsa_batch = 64;
    cfg.trace_examples = 3;
    cfg.trace_steps = 8;
    cfg.trace_restarts = 2;
    cfg.landscape_resolution = 5;
    return cfg;
}

}  // namespace

TEST_CASE("config: JSON fields apply, unknown keys fail and the hash ignores threads and out") {
    const auto base = ExperimentConfig{};
    const auto cfg = apply_json(base, R"({"seed": 9, "lambda": 2.5, "hidden": [8, 4], "method": "uat_ot",
                                          "mean_radius": 2.0, "methods": ["sup_at", "oracle"]})");
    CHECK(cfg.seed == 9);
    CHECK(cfg.lambda == 2.5);
    CHECK(cfg.hidden == std::vector<int>{8, 4});
    CHECK(cfg.method == train::Method::uat_ot);
    CHECK(cfg.toy.mean_radius == 2.0);
    CHECK(cfg.methods.size() == 2);
    CHECK_THROWS_AS(apply_json(base, R"({"lamda": 1})"), InvalidArgument);
    CHECK_THROWS_AS(apply_json(base, R"({"method": "mixup"})"), InvalidArgument);

    auto moved = cfg;
    moved.threads = 7;
    moved.out = "/elsewhere";
    CHECK(config_hash(moved) == config_hash(cfg));
    auto changed = cfg;
    changed.lambda = 2.0;
    CHECK(config_hash(changed) != config_hash(cfg));
    CHECK(config_hash(cfg).size() == 16);
    CHECK(config_hash(apply_json(ExperimentConfig{}, canonical_json(cfg))) == config_hash(cfg));
}

TEST_CASE("CsvWriter: hash comment, header and fixed row width") {
    ExperimentConfig cfg;
    cfg.seed = 3;
    CsvWriter csv(cfg, {"a", "b"});
    csv.row({"1", "2"});
    CHECK_THROWS_AS(csv.row({"1"}), InvalidArgument);
    const auto l = lines(csv.str());
    REQUIRE(l.size() == 3);
    CHECK(l[0] == "# config_hash=" + config_hash(cfg) + ", seed=3");
    CHECK(l[1] == "a,b");
    CHECK(l[2] == "1,2");
    CHECK(fmt(0.1) == "0.10000000000000001");
}

TEST_CASE("evaluate: constant classifier, union bound and a zero radius") {
    const Matrix x = random_inputs(3, 40, 1);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) {
        y[i] = i % 4 == 0 ? 2 : i % 3;
    }
    Vector bias(3);
    bias << 0.0, 0.0, 1.0;
    const nn::DenseNet constant({nn::Layer{Matrix::Zero(3, 3), bias}});
    const auto suite = eval::default_suite(0.1, 5);
    const auto row = eval::evaluate(constant, x, y, suite);
    const double share = static_cast<double>(std::count(y.begin(), y.end(), 2)) / 40.0;
    CHECK(row.smoothness_violation == 0.0);
    CHECK(row.classification_error == doctest::Approx(1.0 - share));
    CHECK(row.a_mt == doctest::Approx(share));

    const auto net = nn::DenseNet::random({3, 16, 3}, 2);
    for (double eps : {0.02, 0.1, 0.3}) {
        const auto r = eval::evaluate(net, x, y, eval::default_suite(eps, 6));
        const double adversarial_error = 1.0 - std::min({r.a_fgsm, r.a_pgd, r.a_mt});
        CHECK(adversarial_error <= r.classification_error + r.smoothness_violation + 1e-12);
        CHECK(eval::dominance_chain_holds(r));
    }
    const auto zero = eval::evaluate(net, x, y, eval::default_suite(0.0, 7));
    CHECK(zero.a_fgsm == zero.a_nat);
    CHECK(zero.a_pgd == zero.a_nat);
    CHECK(zero.a_mt == zero.a_nat);
    CHECK(zero.smoothness_violation == 0.0);
}

TEST_CASE("loss_landscape_grid: centre, PGD endpoint, row count and zero direction") {
    const auto net = nn::DenseNet::random({4, 12, 3}, 11);
    const Vector x = random_inputs(4, 1, 12).col(0);
    const auto pgd = attacks::pgd_config(0.05, 50, 2);
    const auto grid = loss_landscape_grid(net, x, 1, pgd, 41, 2.0, 13);
    CHECK(grid.size() == 41 * 41);
    const double clean = -nn::margin_loss(nn::logits(net, x), 1);
    bool centre = false;
    bool endpoint = false;
    for (const auto& p : grid) {
        if (std::abs(p.a) < 1e-12 && std::abs(p.b) < 1e-12) {
            centre = true;
            CHECK(p.loss == doctest::Approx(clean).epsilon(1e-12));
            CHECK(p.in_ball);
        }
        if (std::abs(p.a - 1.0) < 1e-9 && std::abs(p.b) < 1e-12) {
            endpoint = true;
            CHECK(p.loss >= clean);
            CHECK(p.in_ball);
        }
    }
    CHECK(centre);
    CHECK(endpoint);
    CHECK(loss_landscape_grid(net, x, 1, pgd, 7, 1.0, 13).size() == 49);
    CHECK_THROWS_AS(loss_landscape_grid(net, x, 1, attacks::pgd_config(0.0, 10, 1), 5, 1.0, 13), InvalidArgument);
}

TEST_CASE("convergence_traces: one deterministic curve, linear agreement and threshold 0") {
    const Matrix x = random_inputs(5, 8, 21);
    const std::vector<int> y = {0, 1, 0, 1, 1, 0, 0, 1};

    auto single = attacks::pgd_config(0.05, 20, 1);
    single.random_start = false;
    const auto one = convergence_traces(nn::DenseNet::random({5, 8, 2}, 22), x, y, single, 0.05);
    REQUIRE(one.traces.size() == 8);
    for (const auto& t : one.traces) {
        CHECK(t.size() == 1);
        CHECK(t[0].size() == 21);  // start point plus one entry per step
    }

    const auto linear = linear_two_class(5, 23);
    const auto lin = convergence_traces(linear, x, y, attacks::pgd_config(0.05, 100, 5), 1e-3);
    for (const auto& s : lin.summary) {
        CHECK(s.max_final - s.min_final <= 1e-3);
        CHECK_FALSE(s.flagged);
    }

    const auto net = nn::DenseNet::random({5, 32, 32, 2}, 24);
    const auto zero = convergence_traces(net, x, y, attacks::pgd_config(0.3, 5, 4), 0.0);
    for (const auto& s : zero.summary) {
        CHECK(s.flagged == (s.max_final > s.min_final));
    }
}

TEST_CASE("spsa_scatter: equal budgets on a linear model land on the diagonal") {
    const auto linear = linear_two_class(6, 31);
    const Matrix x = random_inputs(6, 12, 32);
    std::vector<int> y(12);
    for (int i = 0; i < 12; ++i) {
        y[i] = i % 2;
    }
    auto pgd = attacks::pgd_config(0.05, 100, 1);
    pgd.seed = 1;
    auto spsa = attacks::spsa_config(0.05, 100, 256);
    spsa.seed = 2;
    const auto r = spsa_scatter(linear, x, y, pgd, spsa);
    REQUIRE(r.pgd_margin.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(std::abs(r.pgd_margin[i] - r.spsa_margin[i]) <= 1e-3);
    }
    CHECK(r.correlation >= -1.0);
    CHECK(r.correlation <= 1.0);
    CHECK(r.below_diagonal >= 0.0);
    CHECK(r.below_diagonal <= 1.0);
}

TEST_CASE("run_experiment: repeated runs and thread counts give identical files") {
    auto cfg = tiny_config();
    for (const std::string experiment : {"train", "evaluate", "spsa_scatter", "convergence", "landscape"}) {
        cfg.experiment = experiment;
        set_thread_count(1);
        const auto serial = run_experiment(cfg);
        set_thread_count(4);
        const auto threaded = run_experiment(cfg);
        const auto again = run_experiment(cfg);
        CHECK_MESSAGE(serial == threaded, experiment);
        CHECK_MESSAGE(threaded == again, experiment);
        for (const auto& [name, text] : serial) {
            if (name.size() > 4 && name.substr(name.size() - 4) == ".csv") {
                CHECK(text.rfind("# config_hash=" + config_hash(cfg), 0) == 0);
            }
        }
    }
    cfg.experiment = "bogus";
    CHECK_THROWS_AS(run_experiment(cfg), InvalidArgument);
}

TEST_CASE("with_pool_prefix: keeps the first m points with their labels") {
    auto cfg = tiny_config();
    auto data = make_dataset(cfg);
    data.pseudo_labels = data.unlabeled_truth;
    const auto cut = with_pool_prefix(data, 17);
    CHECK(cut.m() == 17);
    CHECK(cut.unlabeled_x == data.unlabeled_x.leftCols(17));
    CHECK(cut.pseudo_labels->size() == 17);
    CHECK(with_pool_prefix(data, 0).m() == 0);
}
