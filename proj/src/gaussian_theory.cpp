#include "uat/gaussian_theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "uat/stats.hpp"

namespace uat::gaussian {

namespace {

constexpr std::size_t kMcChunk = 4096;

// One point: label from the top bit, then d normals.
int draw_point(const GaussianModel& model, Rng& rng, std::normal_distribution<double>& noise,
               Eigen::Ref<Vector> out) {
    const int y = (rng() >> 63) != 0 ? 1 : -1;
    for (Eigen::Index j = 0; j < out.size(); ++j) {
        out[j] = y * model.theta_star[j] + noise(rng);
    }
    return y;
}

}  // namespace

GaussianModel::GaussianModel(Vector theta, double noise) : theta_star(std::move(theta)), sigma(noise) {
    require(theta_star.size() >= 1, "GaussianModel: d must be >= 1");
    require(sigma > 0.0, "GaussianModel: sigma must be positive");
}

GaussianModel GaussianModel::unit_mean(int d, double sigma) {
    require(d >= 1, "GaussianModel: d must be >= 1");
    return GaussianModel(Vector::Ones(d), sigma);
}

std::string GaussianModel::theorem_regime_violation() const {
    const double d = dim();
    std::ostringstream msg;
    if (std::abs(theta_star.norm() - std::sqrt(d)) > 1e-9 * std::sqrt(d)) {
        msg << "||theta_star||_2 = " << theta_star.norm() << " != sqrt(d) = " << std::sqrt(d);
    } else if (sigma > std::pow(d, 0.25) / 32.0 * (1.0 + 1e-12)) {
        msg << "sigma = " << sigma << " exceeds d^(1/4)/32 = " << std::pow(d, 0.25) / 32.0;
    }
    return msg.str();
}

LabeledSet sample_gaussian(const GaussianModel& model, std::size_t n, std::uint64_t seed) {
    require(n >= 1, "sample_gaussian: n must be >= 1");
    LabeledSet out;
    out.x.resize(model.dim(), static_cast<Eigen::Index>(n));
    out.y.resize(n);
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, model.sigma);
    for (std::size_t i = 0; i < n; ++i) {
        out.y[i] = draw_point(model, rng, noise, out.x.col(static_cast<Eigen::Index>(i)));
    }
    return out;
}

LinearClassifier::LinearClassifier(Vector w) : w_(std::move(w)) {
    require(w_.size() >= 1, "LinearClassifier: empty weight vector");
    require(w_.norm() > 0.0, "LinearClassifier: zero weight vector");
}

LinearClassifier supervised_estimator(const LabeledSet& samples) {
    require(samples.size() >= 1, "supervised_estimator: no samples");
    Vector w = Vector::Zero(samples.x.rows());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        w += samples.y[i] * samples.x.col(static_cast<Eigen::Index>(i));
    }
    return LinearClassifier(std::move(w));
}

LinearClassifier uat_ft_estimator(const LabeledSet& labeled, const Matrix& unlabeled) {
    require(unlabeled.cols() >= 1, "uat_ft_estimator: no unlabeled points");
    const LinearClassifier base = supervised_estimator(labeled);
    require(unlabeled.rows() == base.weights().size(), "uat_ft_estimator: dimension mismatch");
    Vector w = Vector::Zero(unlabeled.rows());
    for (Eigen::Index i = 0; i < unlabeled.cols(); ++i) {
        w += base.predict(unlabeled.col(i)) * unlabeled.col(i);
    }
    return LinearClassifier(std::move(w));
}

double exact_robust_error(const LinearClassifier& c, const GaussianModel& model, RobustErrorQuery q) {
    require(q.epsilon >= 0.0, "exact_robust_error: epsilon must be >= 0");
    const Vector& w = c.weights();
    require(w.size() == model.theta_star.size(), "exact_robust_error: dimension mismatch");
    const double shift = q.epsilon * w.lpNorm<1>() - w.dot(model.theta_star);
    return stats::normal_cdf(shift / (model.sigma * w.norm()));
}

MonteCarloEstimate monte_carlo_robust_error(const LinearClassifier& c, const GaussianModel& model,
                                            RobustErrorQuery q, std::size_t samples, std::uint64_t seed,
                                            Execution exec) {
    require(samples >= 1, "monte_carlo_robust_error: samples must be >= 1");
    require(q.epsilon >= 0.0, "monte_carlo_robust_error: epsilon must be >= 0");
    const Vector& w = c.weights();
    require(w.size() == model.theta_star.size(), "monte_carlo_robust_error: dimension mismatch");
    const Vector sign_w = w.unaryExpr([](double v) { return static_cast<double>((v > 0) - (v < 0)); });

    const std::size_t chunks = (samples + kMcChunk - 1) / kMcChunk;
    std::vector<std::size_t> errors(chunks, 0);
    for_each_chunk(samples, kMcChunk, exec, [&](std::size_t b, std::size_t e, std::size_t ci) {
        Rng rng(derive_seed(seed, {ci}));
        std::normal_distribution<double> noise(0.0, model.sigma);
        Vector x(model.dim());
        std::size_t count = 0;
        for (std::size_t i = b; i < e; ++i) {
            const int y = draw_point(model, rng, noise, x);
            x -= (y * q.epsilon) * sign_w;
            if (c.predict(x) != y) {
                ++count;
            }
        }
        errors[ci] = count;
    });
    std::size_t total = 0;
    for (auto v : errors) {
        total += v;
    }
    MonteCarloEstimate out;
    out.samples = samples;
    out.value = static_cast<double>(total) / static_cast<double>(samples);
    out.stderr_ = stats::binomial_stderr(out.value, samples);
    return out;
}

double lemma20_error_bound(const LinearClassifier& unit_classifier, const GaussianModel& model,
                           RobustErrorQuery q) {
    const Vector& w = unit_classifier.weights();
    require(std::abs(w.norm() - 1.0) <= 1e-9, "lemma20_error_bound: weight vector must have unit norm");
    require(q.epsilon >= 0.0, "lemma20_error_bound: epsilon must be >= 0");
    const double gap = w.dot(model.theta_star) - q.epsilon * w.lpNorm<1>();
    if (gap <= 0.0) {
        return 1.0;
    }
    return std::exp(-gap * gap / (2.0 * model.sigma * model.sigma));
}

std::size_t theorem1_unlabeled_count(double epsilon, int d, double constant) {
    require(epsilon >= 0.0 && d >= 1, "theorem1_unlabeled_count: invalid epsilon or d");
    return static_cast<std::size_t>(std::ceil(constant * epsilon * epsilon * std::sqrt(static_cast<double>(d))));
}

EpsilonRange theorem1_epsilon_range(int d, double low_coeff, double high) {
    require(d >= 1, "theorem1_epsilon_range: d must be >= 1");
    return {low_coeff * std::pow(static_cast<double>(d), -0.25), high};
}

namespace {

// Streams one labeled point and m unlabeled points without storing the pool.
double sweep_trial(const GaussianModel& model, std::size_t m, std::uint64_t seed, double epsilon) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, model.sigma);
    Vector x(model.dim());
    const int y0 = draw_point(model, rng, noise, x);
    const Vector base = y0 * x;
    if (base.norm() == 0.0) {
        return 1.0;
    }
    Vector w = Vector::Zero(model.dim());
    for (std::size_t i = 0; i < m; ++i) {
        draw_point(model, rng, noise, x);
        const double pseudo = base.dot(x) >= 0.0 ? 1.0 : -1.0;
        w += pseudo * x;
    }
    if (w.norm() == 0.0) {
        return 1.0;
    }
    return exact_robust_error(LinearClassifier(std::move(w)), model, {epsilon});
}

}  // namespace

SweepReport theorem1_sweep(const SweepConfig& config, Execution exec) {
    require(!config.dims.empty() && !config.epsilons.empty(), "theorem1_sweep: empty grid");
    require(config.trials >= 1, "theorem1_sweep: trials must be >= 1");
    for (auto m : config.ms) {
        require(m >= 1, "theorem1_sweep: m = 0 leaves the estimator undefined");
    }
    SweepReport report;
    report.master_seed = config.seed;
    report.target_error = config.target_error;

    for (int d : config.dims) {
        require(d >= 1, "theorem1_sweep: d must be >= 1");
        for (double eps : config.epsilons) {
            std::vector<std::size_t> ms = config.ms;
            if (ms.empty()) {
                ms.push_back(std::max<std::size_t>(1, theorem1_unlabeled_count(eps, d)));
            }
            for (auto m : ms) {
                SweepCell cell;
                cell.d = d;
                cell.sigma = config.sigma_scale * std::pow(static_cast<double>(d), 0.25);
                cell.epsilon = eps;
                cell.m = m;
                cell.trials = config.trials;
                cell.seed = derive_seed(config.seed, {report.cells.size()});
                const GaussianModel model = GaussianModel::unit_mean(d, cell.sigma);
                cell.regime_note = model.theorem_regime_violation();
                cell.regime_ok = cell.regime_note.empty();
                report.cells.push_back(cell);
            }
        }
    }

    std::vector<bool> skipped(report.cells.size(), false);
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        auto& cell = report.cells[i];
        if (!cell.regime_ok) {
            cell.success_rate = std::nan("");
            cell.mean_error = std::nan("");
            continue;
        }
        if (skipped[i]) {
            continue;
        }
        const GaussianModel model = GaussianModel::unit_mean(cell.d, cell.sigma);
        const auto errors = parallel_map<double>(cell.trials, exec, [&](std::size_t t) {
            return sweep_trial(model, cell.m, derive_seed(cell.seed, {t}), cell.epsilon);
        });
        std::size_t ok = 0;
        double sum = 0.0;
        for (double e : errors) {
            ok += e <= config.target_error ? 1 : 0;
            sum += e;
        }
        cell.success_rate = static_cast<double>(ok) / static_cast<double>(cell.trials);
        cell.mean_error = sum / static_cast<double>(cell.trials);
        if (config.stop_at_success && cell.success_rate >= config.success_threshold) {
            for (std::size_t j = i + 1; j < report.cells.size(); ++j) {
                const auto& other = report.cells[j];
                if (other.d == cell.d && other.epsilon == cell.epsilon && other.m > cell.m) {
                    skipped[j] = true;
                }
            }
        }
    }
    std::vector<SweepCell> kept;
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        if (!skipped[i]) {
            kept.push_back(std::move(report.cells[i]));
        }
    }
    report.cells = std::move(kept);
    return report;
}

ScalingFit fit_scaling(const SweepReport& report, double success_threshold) {
    std::map<std::pair<int, double>, std::size_t> best;
    for (const auto& cell : report.cells) {
        const auto key = std::make_pair(cell.d, cell.epsilon);
        auto& slot = best[key];
        if (cell.regime_ok && cell.success_rate >= success_threshold && (slot == 0 || cell.m < slot)) {
            slot = cell.m;
        }
    }
    ScalingFit fit;
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_dim;
    std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_eps;
    for (const auto& [key, m_star] : best) {
        fit.table.push_back({key.first, key.second, m_star});
        if (m_star == 0) {
            continue;
        }
        const double lm = std::log(static_cast<double>(m_star));
        by_dim[key.first].first.push_back(std::log(key.second));
        by_dim[key.first].second.push_back(lm);
        by_eps[key.second].first.push_back(std::log(static_cast<double>(key.first)));
        by_eps[key.second].second.push_back(lm);
    }
    auto average_slope = [](const auto& groups, std::size_t& used) {
        double sum = 0.0;
        used = 0;
        for (const auto& [k, xy] : groups) {
            const auto& xs = xy.first;
            if (xs.size() < 2 || std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs.front(); })) {
                continue;
            }
            sum += stats::least_squares(xs, xy.second).slope;
            ++used;
        }
        return used == 0 ? std::nan("") : sum / static_cast<double>(used);
    };
    fit.epsilon_slope = average_slope(by_dim, fit.epsilon_groups);
    fit.dim_slope = average_slope(by_eps, fit.dim_groups);
    return fit;
}

double linear_accuracy(const LinearClassifier& c, const GaussianModel& model) {
    return 1.0 - exact_robust_error(c, model, {0.0});
}

namespace {

struct TailCounts {
    std::size_t a = 0, b = 0, c = 0;
};

template <typename DrawFn>
TailCounts count_tails(std::size_t draws, std::uint64_t seed, Execution exec, DrawFn&& fn) {
    const std::size_t chunk = 256;
    const std::size_t chunks = (draws + chunk - 1) / chunk;
    std::vector<TailCounts> parts(chunks);
    for_each_chunk(draws, chunk, exec, [&](std::size_t b, std::size_t e, std::size_t ci) {
        Rng rng(derive_seed(seed, {ci}));
        TailCounts t;
        for (std::size_t i = b; i < e; ++i) {
            fn(rng, t);
        }
        parts[ci] = t;
    });
    TailCounts total;
    for (const auto& p : parts) {
        total.a += p.a;
        total.b += p.b;
        total.c += p.c;
    }
    return total;
}

ConcentrationRow make_row(std::string name, double bound, std::size_t hits, std::size_t draws) {
    ConcentrationRow row;
    row.bound_name = std::move(name);
    row.analytic_bound = std::min(bound, 1.0);
    row.draws = draws;
    row.empirical_tail = static_cast<double>(hits) / static_cast<double>(draws);
    row.stderr_ = stats::binomial_stderr(row.empirical_tail, draws);
    row.pass = row.empirical_tail <= row.analytic_bound + 3.0 * row.stderr_;
    return row;
}

}  // namespace

std::vector<ConcentrationRow> concentration_checks(const ConcentrationConfig& cfg, std::uint64_t seed,
                                                   Execution exec) {
    require(cfg.chi_n >= 1, "chi-squared tail: n >= 1 violated");
    require(cfg.chi_sigma > 0.0, "chi-squared tail: sigma > 0 violated");
    require(cfg.chi_alpha2 > 2.0 * cfg.chi_n * cfg.chi_sigma * cfg.chi_sigma,
            "chi-squared tail: alpha^2 > 2 n sigma^2 violated");
    require(cfg.l1_m >= 1, "L1 tail: m >= 1 violated");
    require(cfg.l1_sigma > 0.0, "L1 tail: sigma > 0 violated");
    require(cfg.l1_a > 0.0, "L1 tail: a > 0 violated");
    require(cfg.mean_d >= 1 && cfg.mean_m >= 1, "sample-mean bounds: d >= 1 and m >= 1 violated");
    require(cfg.mean_sigma > 0.0, "sample-mean bounds: sigma > 0 violated");
    require(cfg.delta > 0.0 && cfg.delta < 1.0, "sample-mean inner product: 0 < delta < 1 violated");
    require(cfg.chi_draws >= 1 && cfg.l1_draws >= 1 && cfg.mean_draws >= 1, "concentration_checks: draws >= 1");

    std::vector<ConcentrationRow> rows;

    {
        const double s2 = cfg.chi_sigma * cfg.chi_sigma;
        const auto t = count_tails(cfg.chi_draws, derive_seed(seed, {1}), exec, [&](Rng& rng, TailCounts& c) {
            std::normal_distribution<double> z(0.0, cfg.chi_sigma);
            double sq = 0.0;
            for (int i = 0; i < cfg.chi_n; ++i) {
                const double v = z(rng);
                sq += v * v;
            }
            c.a += sq >= cfg.chi_alpha2 ? 1 : 0;
        });
        rows.push_back(make_row("chi_squared_tail", std::exp(-cfg.chi_alpha2 / (20.0 * s2)), t.a, cfg.chi_draws));
    }

    {
        const double m = cfg.l1_m;
        const auto t = count_tails(cfg.l1_draws, derive_seed(seed, {2}), exec, [&](Rng& rng, TailCounts& c) {
            std::normal_distribution<double> z(0.0, cfg.l1_sigma);
            double l1 = 0.0;
            for (int i = 0; i < cfg.l1_m; ++i) {
                l1 += std::abs(z(rng));
            }
            c.a += l1 / m >= cfg.l1_a ? 1 : 0;
        });
        const double log_bound = m * std::log(2.0) - m * cfg.l1_a * cfg.l1_a / (2.0 * cfg.l1_sigma * cfg.l1_sigma);
        rows.push_back(make_row("l1_norm_tail", std::exp(log_bound), t.a, cfg.l1_draws));
    }

    {
        // Fixed base classifier h from one labeled draw; z̄ = (1/m) Σ h(xᵢ)·xᵢ.
        const GaussianModel model = GaussianModel::unit_mean(cfg.mean_d, cfg.mean_sigma);
        const LabeledSet one = sample_gaussian(model, 1, derive_seed(seed, {3, 0}));
        const Vector base = one.y[0] * one.x.col(0);
        require(base.norm() > 0.0, "sample-mean bounds: degenerate base classifier");
        const LinearClassifier h(base);
        const double p = linear_accuracy(h, model);

        const double d = cfg.mean_d;
        const double m = static_cast<double>(cfg.mean_m);
        const double sigma = cfg.mean_sigma;
        const double theta_norm = model.theta_star.norm();
        const double c = std::sqrt(20.0) * sigma / theta_norm * std::sqrt(std::sqrt(d) / m + std::log(2.0));
        const double norm_threshold = (1.0 + c) * theta_norm + 2.0 * sigma * std::sqrt(d / m);
        const double chern = 7.0 * p / 4.0 - 1.0;
        const double chern_tail = std::exp(-m * p / 128.0);
        const double inner_threshold = chern * theta_norm * theta_norm -
                                       std::sqrt(2.0) * theta_norm * sigma *
                                           std::sqrt(std::log(1.0 / cfg.delta) / m + std::log(2.0));
        const double unit_threshold = (chern * std::sqrt(d * m) - std::sqrt(d + 2.0 * m * sigma * sigma * std::log(2.0))) /
                                      ((1.0 + c) * std::sqrt(m) + 2.0 * sigma);

        const auto t = count_tails(cfg.mean_draws, derive_seed(seed, {3, 1}), exec, [&](Rng& rng, TailCounts& cnt) {
            std::normal_distribution<double> noise(0.0, sigma);
            Vector x(model.dim());
            Vector zbar = Vector::Zero(model.dim());
            for (std::size_t i = 0; i < cfg.mean_m; ++i) {
                draw_point(model, rng, noise, x);
                zbar += static_cast<double>(h.predict(x)) * x;
            }
            zbar /= m;
            const double nrm = zbar.norm();
            const double ip = zbar.dot(model.theta_star);
            cnt.a += nrm >= norm_threshold ? 1 : 0;
            cnt.b += ip <= inner_threshold ? 1 : 0;
            cnt.c += (nrm == 0.0 || ip / nrm <= unit_threshold) ? 1 : 0;
        });
        rows.push_back(make_row("sample_mean_norm", std::exp(-6.0 * std::sqrt(d) / 5.0), t.a, cfg.mean_draws));
        rows.push_back(make_row("sample_mean_inner_product", chern_tail + cfg.delta, t.b, cfg.mean_draws));
        rows.push_back(make_row("normalized_inner_product",
                                std::exp(-6.0 * std::sqrt(d) / 5.0) + chern_tail + std::exp(-d / (2.0 * sigma * sigma)),
                                t.c, cfg.mean_draws));
    }
    return rows;
}

}  // namespace uat::gaussian
