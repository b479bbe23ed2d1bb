#include <doctest.h>

#include <cmath>
#include <numbers>

#include "uat/gaussian_theory.hpp"
#include "uat/stats.hpp"

using namespace uat;
using namespace uat::gaussian;

namespace {

double phi_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out(i++) = x;
    }
    return out;
}

}  // namespace

TEST_CASE("sample_gaussian: vanishing noise puts every point on y*theta") {
    const GaussianModel model(vec({1.0, -2.0, 0.5}), 1e-12);
    const auto s = sample_gaussian(model, 50, 3);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Vector expect = s.y[i] * model.theta_star;
        CHECK((s.x.col(static_cast<Eigen::Index>(i)) - expect).cwiseAbs().maxCoeff() <= 1e-9);
        CHECK((model.theta_star.dot(s.x.col(static_cast<Eigen::Index>(i))) > 0 ? 1 : -1) == s.y[i]);
    }
}

TEST_CASE("sample_gaussian: mean of y*x approaches theta") {
    const std::size_t n = 200000;
    const GaussianModel model(vec({1.0, 1.0}), 1.0);
    const auto s = sample_gaussian(model, n, 11);
    Vector acc = Vector::Zero(2);
    for (std::size_t i = 0; i < n; ++i) {
        acc += s.y[i] * s.x.col(static_cast<Eigen::Index>(i));
    }
    acc /= static_cast<double>(n);
    CHECK(std::abs(acc(0) - 1.0) <= 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(acc(1) - 1.0) <= 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("sample_gaussian: labels are balanced and n = 0 is rejected") {
    const auto s = sample_gaussian(GaussianModel::unit_mean(3, 1.0), 100000, 5);
    std::size_t pos = 0;
    for (int y : s.y) {
        pos += y == 1 ? 1 : 0;
    }
    const double frac = static_cast<double>(pos) / 100000.0;
    CHECK(frac >= 0.49);
    CHECK(frac <= 0.51);
    CHECK_THROWS_AS(sample_gaussian(GaussianModel::unit_mean(3, 1.0), 0, 5), InvalidArgument);
}

TEST_CASE("GaussianModel: regime violations are named") {
    CHECK(GaussianModel::unit_mean(256, 0.125).theorem_regime_violation().empty());
    CHECK_FALSE(GaussianModel::unit_mean(256, 1.0).theorem_regime_violation().empty());
    CHECK_FALSE(GaussianModel(Vector::Constant(16, 2.0), 0.01).theorem_regime_violation().empty());
    CHECK_THROWS_AS(GaussianModel(Vector::Ones(4), 0.0), InvalidArgument);
}

TEST_CASE("supervised_estimator: single sample, cancellation, noiseless sum") {
    LabeledSet one{vec({0.3, -1.5}), {-1}};
    one.x.resize(2, 1);
    one.x << 0.3, -1.5;
    CHECK(supervised_estimator(one).weights().isApprox(vec({-0.3, 1.5})));

    LabeledSet pair;
    pair.x.resize(2, 2);
    pair.x << 1.0, 1.0, 2.0, 2.0;
    pair.y = {1, -1};
    CHECK_THROWS_AS(supervised_estimator(pair), InvalidArgument);

    const Vector theta = vec({0.5, -1.0, 2.0});
    LabeledSet clean;
    clean.x.resize(3, 1000);
    for (int i = 0; i < 1000; ++i) {
        const int y = i % 3 == 0 ? -1 : 1;
        clean.x.col(i) = y * theta;
        clean.y.push_back(y);
    }
    CHECK((supervised_estimator(clean).weights() - 1000.0 * theta).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(supervised_estimator(LabeledSet{}), InvalidArgument);
}

TEST_CASE("LinearClassifier: positive rescaling keeps predictions and robust error") {
    const GaussianModel model(vec({1.0, 0.5, -0.25}), 0.7);
    const LinearClassifier a(vec({0.8, 0.1, -0.3}));
    const LinearClassifier b(37.0 * vec({0.8, 0.1, -0.3}));
    const auto s = sample_gaussian(model, 500, 2);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(a.predict(s.x.col(static_cast<Eigen::Index>(i))) == b.predict(s.x.col(static_cast<Eigen::Index>(i))));
    }
    CHECK(exact_robust_error(a, model, {0.1}) == doctest::Approx(exact_robust_error(b, model, {0.1})).epsilon(1e-12));
    CHECK(LinearClassifier(vec({1.0, -1.0})).predict(vec({2.0, 2.0})) == 1);
    CHECK_THROWS_AS(LinearClassifier(Vector::Zero(3)), InvalidArgument);
}

TEST_CASE("uat_ft_estimator: perfect base reproduces the supervised estimator") {
    const GaussianModel model = GaussianModel::unit_mean(6, 1e-9);
    const auto lab = sample_gaussian(model, 1, 1);
    const auto unl = sample_gaussian(model, 40, 2);
    const auto ft = uat_ft_estimator(lab, unl.x);
    CHECK((ft.weights() - supervised_estimator(unl).weights()).cwiseAbs().maxCoeff() <= 1e-12);

    const auto noisy = sample_gaussian(GaussianModel::unit_mean(6, 0.1), 30, 4);
    const auto w = supervised_estimator(noisy);
    const auto self = uat_ft_estimator(noisy, noisy.x);
    CHECK((self.weights() - w.weights()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("uat_ft_estimator: a zero score gets the +1 pseudo-label") {
    LabeledSet lab;
    lab.x.resize(2, 1);
    lab.x << 1.0, 0.0;
    lab.y = {1};
    Matrix unl(2, 1);
    unl << 0.0, 1.0;
    CHECK(uat_ft_estimator(lab, unl).weights().isApprox(vec({0.0, 1.0})));
    CHECK_THROWS_AS(uat_ft_estimator(lab, Matrix(2, 0)), InvalidArgument);
}

TEST_CASE("uat_ft_estimator: projection on theta matches the closed form for an imperfect base") {
    // s = y<w,theta> + sigma*|w|*g gives E[yhat*y] = 2p - 1 and
    // E[yhat*<z,theta>] = 2*rho*|theta|*phi(t) with t = <w,theta>/(sigma*|w|).
    const Vector theta = vec({1.0, 0.5, -0.5, 0.25, 0.0});
    const double sigma = 1.0;
    const Vector w = vec({0.3, -0.2, 0.4, 1.0, 0.7});
    LabeledSet lab;
    lab.x = w;
    lab.y = {1};
    const std::size_t m = 100000;
    const auto unl = sample_gaussian(GaussianModel(theta, sigma), m, 77);
    const auto ft = uat_ft_estimator(lab, unl.x);

    const double t = w.dot(theta) / (sigma * w.norm());
    const double p = stats::normal_cdf(t);
    const double rho = w.dot(theta) / (w.norm() * theta.norm());
    const double expect = (2.0 * p - 1.0) + 2.0 * sigma * rho * phi_pdf(t) / theta.norm();
    const double got = ft.weights().dot(theta) / (static_cast<double>(m) * theta.squaredNorm());
    const double sd = std::sqrt(theta.squaredNorm() * theta.squaredNorm() + sigma * sigma * theta.squaredNorm()) /
                      theta.squaredNorm();
    CHECK(p < 0.9);
    CHECK(std::abs(got - expect) <= 4.0 * sd / std::sqrt(static_cast<double>(m)));
}

TEST_CASE("exact_robust_error: symmetric margin, normal-CDF value, large radius") {
    const GaussianModel flat = GaussianModel::unit_mean(4, 1.0);
    const LinearClassifier w(Vector::Ones(4));
    CHECK(exact_robust_error(w, flat, {1.0}) == doctest::Approx(0.5).epsilon(1e-15));

    const GaussianModel m16 = GaussianModel::unit_mean(16, 2.0);
    const LinearClassifier w16(Vector::Ones(16));
    const double err = exact_robust_error(w16, m16, {0.0});
    CHECK(err == doctest::Approx(0.022750131948179).epsilon(1e-12));
    const auto mc = monte_carlo_robust_error(w16, m16, {0.0}, 1'000'000, 8);
    CHECK(std::abs(mc.value - err) <= 3.0 * mc.stderr_);

    CHECK(exact_robust_error(w16, m16, {1e6}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(exact_robust_error(w16, m16, {-0.1}), InvalidArgument);
}

TEST_CASE("exact_robust_error: nondecreasing in epsilon and sigma") {
    Rng rng(9);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        Vector theta(5);
        Vector w(5);
        for (int i = 0; i < 5; ++i) {
            theta(i) = g(rng);
            w(i) = theta(i) + 0.5 * g(rng);
        }
        const LinearClassifier c(w);
        double prev = -1.0;
        for (double eps : {0.0, 0.01, 0.1, 0.3, 1.0, 3.0}) {
            const double e = exact_robust_error(c, GaussianModel(theta, 1.0), {eps});
            CHECK(e >= prev);
            prev = e;
        }
        // Error only decreases with sigma when the worst-case margin is negative.
        const double margin = w.dot(theta) - 0.05 * w.lpNorm<1>();
        if (margin > 0) {
            prev = -1.0;
            for (double s : {0.1, 0.5, 1.0, 2.0, 8.0}) {
                const double e = exact_robust_error(c, GaussianModel(theta, s), {0.05});
                CHECK(e >= prev);
                prev = e;
            }
        }
    }
}

TEST_CASE("monte_carlo_robust_error: serial and parallel paths agree exactly") {
    const GaussianModel model = GaussianModel::unit_mean(8, 1.5);
    const LinearClassifier c(Vector::LinSpaced(8, 0.2, 1.0));
    const auto a = monte_carlo_robust_error(c, model, {0.1}, 50000, 21, Execution::serial);
    const auto b = monte_carlo_robust_error(c, model, {0.1}, 50000, 21, Execution::parallel);
    CHECK(a.value == b.value);
    CHECK(a.samples == 50000);
}

TEST_CASE("lemma20_error_bound: dominates the exact error and hits its edge cases") {
    Rng rng(13);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int d = 1 + static_cast<int>(u(rng) * 20);
        Vector theta(d);
        Vector w(d);
        for (int i = 0; i < d; ++i) {
            theta(i) = g(rng);
            w(i) = g(rng);
        }
        const GaussianModel model(theta, 0.1 + 2.0 * u(rng));
        const LinearClassifier unit(w / w.norm());
        const RobustErrorQuery q{0.5 * u(rng)};
        CHECK(exact_robust_error(unit, model, q) <= lemma20_error_bound(unit, model, q) + 1e-15);
    }
    const GaussianModel flat = GaussianModel::unit_mean(4, 1.0);
    const LinearClassifier unit(Vector::Ones(4) / 2.0);
    CHECK(lemma20_error_bound(unit, flat, {1.0}) == 1.0);

    const int d = 10;
    const GaussianModel half(Vector::Ones(d), std::sqrt(d / 2.0));
    const LinearClassifier dir(Vector::Ones(d) / std::sqrt(static_cast<double>(d)));
    CHECK(lemma20_error_bound(dir, half, {0.0}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK_THROWS_AS(lemma20_error_bound(LinearClassifier(Vector::Ones(d)), half, {0.0}), InvalidArgument);
}

TEST_CASE("theorem1 helpers: sample count and radius range") {
    CHECK(theorem1_unlabeled_count(0.0625, 256) == 16);
    CHECK(theorem1_unlabeled_count(0.25, 4096) == 1024);
    CHECK(theorem1_unlabeled_count(0.1, 100) == 26);
    const auto r = theorem1_epsilon_range(256);
    CHECK(r.low == doctest::Approx(0.0625));
    CHECK(r.high == doctest::Approx(0.25));
}

TEST_CASE("theorem1_sweep: the sample rule and the small-radius case succeed") {
    SweepConfig cfg;
    cfg.dims = {256};
    cfg.epsilons = {0.0625, 0.25};
    cfg.trials = 100;
    cfg.seed = 4;
    const auto rule = theorem1_sweep(cfg);
    REQUIRE(rule.cells.size() == 2);
    CHECK(rule.cells[0].m == 16);
    for (const auto& c : rule.cells) {
        CHECK(c.regime_ok);
        CHECK(c.success_rate >= 0.95);
    }
    cfg.epsilons = {0.03};
    cfg.ms = {100};
    CHECK(theorem1_sweep(cfg).cells.at(0).success_rate >= 0.95);
    cfg.ms = {0};
    CHECK_THROWS_AS(theorem1_sweep(cfg), InvalidArgument);
}

TEST_CASE("theorem1_sweep: cells outside the regime are flagged and left empty") {
    SweepConfig cfg;
    cfg.dims = {64};
    cfg.epsilons = {0.1};
    cfg.ms = {10};
    cfg.trials = 5;
    cfg.sigma_scale = 1.0;
    const auto r = theorem1_sweep(cfg);
    CHECK_FALSE(r.cells[0].regime_ok);
    CHECK(std::isnan(r.cells[0].success_rate));
    CHECK_FALSE(r.cells[0].regime_note.empty());
}

TEST_CASE("theorem1_sweep: thread count does not change results") {
    SweepConfig cfg;
    cfg.dims = {256, 1024};
    cfg.epsilons = {0.0625, 0.2};
    cfg.ms = {1, 3};
    cfg.trials = 20;
    cfg.seed = 99;
    const auto a = theorem1_sweep(cfg, Execution::serial);
    const auto b = theorem1_sweep(cfg, Execution::parallel);
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].mean_error == b.cells[i].mean_error);
        CHECK(a.cells[i].seed == b.cells[i].seed);
    }
}

TEST_CASE("fit_scaling: recovers slopes from a synthetic success table") {
    // m* = eps^2 * sqrt(d) * 64 exactly on the grid.
    SweepReport report;
    for (int d : {256, 4096}) {
        for (double eps : {0.125, 0.25}) {
            const auto star = static_cast<std::size_t>(std::lround(64.0 * eps * eps * std::sqrt(d)));
            for (std::size_t m : {star / 2, star, star * 2}) {
                SweepCell c;
                c.d = d;
                c.epsilon = eps;
                c.m = m;
                c.success_rate = m >= star ? 1.0 : 0.0;
                report.cells.push_back(c);
            }
        }
    }
    const auto fit = fit_scaling(report);
    CHECK(fit.epsilon_slope == doctest::Approx(2.0));
    CHECK(fit.dim_slope == doctest::Approx(0.5));
}

TEST_CASE("concentration_checks: default grid passes and invalid parameters name the condition") {
    ConcentrationConfig cfg;
    cfg.chi_draws = 200000;
    cfg.l1_draws = 200000;
    const auto rows = concentration_checks(cfg, 17);
    CHECK(rows.size() == 5);
    for (const auto& r : rows) {
        CHECK_MESSAGE(r.pass, r.bound_name);
        CHECK(r.analytic_bound >= 0.0);
    }
    CHECK(rows[0].analytic_bound == doctest::Approx(std::exp(-10.0)));
    CHECK(rows[1].analytic_bound == doctest::Approx(std::pow(2.0, 20) * std::exp(-90.0)));

    cfg.chi_alpha2 = 50.0;
    try {
        concentration_checks(cfg, 17);
        FAIL("expected a validity error");
    } catch (const InvalidArgument& e) {
        CHECK(std::string(e.what()).find("chi-squared") != std::string::npos);
    }
}

TEST_CASE("linear_accuracy: matches the zero-radius error complement") {
    const GaussianModel m16 = GaussianModel::unit_mean(16, 2.0);
    const LinearClassifier w16(Vector::Ones(16));
    CHECK(linear_accuracy(w16, m16) == doctest::Approx(1.0 - 0.022750131948179));
}
