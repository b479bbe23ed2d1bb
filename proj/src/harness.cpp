#include "uat/harness.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uat/stats.hpp"

using nlohmann::json;

namespace uat::train {
void to_json(json& j, const Method& m) { j = to_string(m); }
void from_json(const json& j, Method& m) { m = parse_method(j.get<std::string>()); }
void to_json(json& j, const OtWeight& w) { j = to_string(w); }
void from_json(const json& j, OtWeight& w) { w = parse_ot_weight(j.get<std::string>()); }
}  // namespace uat::train

namespace uat::toy {
void to_json(json& j, const Generator& g) { j = to_string(g); }
void from_json(const json& j, Generator& g) { g = parse_generator(j.get<std::string>()); }
}  // namespace uat::toy

namespace uat::harness {

namespace {

const std::set<std::string> kExperiments = {"data_gen",     "gaussian_sweep", "check_lemmas", "train",
                                            "evaluate",     "unlabeled_sweep", "noise_sweep", "shift_compare",
                                            "landscape",    "convergence",    "spsa_scatter"};

struct Field {
    std::string name;
    std::function<json(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const json&)> set;
    bool hashed = true;
};

template <class Ref>
Field field(std::string name, Ref ref, bool hashed = true) {
    using T = std::decay_t<decltype(ref(std::declval<ExperimentConfig&>()))>;
    return {std::move(name), [ref](const ExperimentConfig& c) { return json(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const json& j) { ref(c) = j.get<T>(); }, hashed};
}

#define UAT_FIELD(key, expr) field(key, [](ExperimentConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> all = [] {
        std::vector<Field> f = {
            UAT_FIELD("experiment", c.experiment),
            UAT_FIELD("seed", c.seed),
            field("out", [](ExperimentConfig& c) -> auto& { return c.out; }, false),
            field("threads", [](ExperimentConfig& c) -> auto& { return c.threads; }, false),
            UAT_FIELD("generator", c.toy.generator),
            UAT_FIELD("classes", c.toy.classes),
            UAT_FIELD("dim", c.toy.dim),
            UAT_FIELD("mean_radius", c.toy.mean_radius),
            UAT_FIELD("sigma", c.toy.sigma),
            UAT_FIELD("theta_star", c.toy.theta_star),
            UAT_FIELD("priors", c.toy.priors),
            UAT_FIELD("n_labeled", c.toy.n_labeled),
            UAT_FIELD("m_unlabeled", c.toy.m_unlabeled),
            UAT_FIELD("n_test", c.toy.n_test),
            UAT_FIELD("shift_magnitude", c.toy.shift_magnitude),
            UAT_FIELD("nuisance_fraction", c.toy.nuisance_fraction),
            UAT_FIELD("epsilon", c.epsilon),
            UAT_FIELD("method", c.method),
            UAT_FIELD("lambda", c.lambda),
            UAT_FIELD("batch", c.batch),
            UAT_FIELD("labeled_batch", c.labeled_batch),
            UAT_FIELD("steps", c.steps),
            UAT_FIELD("learning_rate", c.learning_rate),
            UAT_FIELD("momentum", c.momentum),
            UAT_FIELD("weight_decay", c.weight_decay),
            UAT_FIELD("decay_fraction", c.decay_fraction),
            UAT_FIELD("decay_factor", c.decay_factor),
            UAT_FIELD("hidden", c.hidden),
            UAT_FIELD("train_attack_steps", c.train_attack_steps),
            UAT_FIELD("distribution_shift_mode", c.distribution_shift_mode),
            UAT_FIELD("ot_weight", c.ot_weight),
            UAT_FIELD("labeled_in_unlabeled", c.labeled_in_unlabeled),
            UAT_FIELD("base_steps", c.base_steps),
            UAT_FIELD("full_budget", c.full_budget),
            UAT_FIELD("eval_points", c.eval_points),
            UAT_FIELD("fgsm_steps", c.fgsm_steps),
            UAT_FIELD("pgd_steps", c.pgd_steps),
            UAT_FIELD("pgd_restarts", c.pgd_restarts),
            UAT_FIELD("mt_steps", c.mt_steps),
            UAT_FIELD("mt_restarts", c.mt_restarts),
            UAT_FIELD("m_values", c.m_values),
            UAT_FIELD("methods", c.methods),
            UAT_FIELD("noise_rates", c.noise_rates),
            UAT_FIELD("correlated_base_sizes", c.correlated_base_sizes),
            UAT_FIELD("correlated_base_steps", c.correlated_base_steps),
            UAT_FIELD("shift_magnitudes", c.shift_magnitudes),
            UAT_FIELD("shift_nuisance_fraction", c.nuisance_fraction),
            UAT_FIELD("confidence_filtering", c.confidence_filtering),
            UAT_FIELD("filter_threshold", c.filter_threshold),
            UAT_FIELD("top_per_class", c.top_per_class),
            UAT_FIELD("landscape_resolution", c.landscape_resolution),
            UAT_FIELD("landscape_extent", c.landscape_extent),
            UAT_FIELD("landscape_example", c.landscape_example),
            UAT_FIELD("trace_examples", c.trace_examples),
            UAT_FIELD("trace_restarts", c.trace_restarts),
            UAT_FIELD("trace_steps", c.trace_steps),
            UAT_FIELD("spread_threshold", c.spread_threshold),
            UAT_FIELD("spsa_points", c.spsa_points),
            UAT_FIELD("spsa_iterations", c.spsa_iterations),
            UAT_FIELD("spsa_batch", c.spsa_batch),
            UAT_FIELD("gaussian_dims", c.gaussian_dims),
            UAT_FIELD("gaussian_epsilons", c.gaussian_epsilons),
            UAT_FIELD("gaussian_ms", c.gaussian_ms),
            UAT_FIELD("scaling_ms", c.scaling_ms),
            UAT_FIELD("gaussian_trials", c.gaussian_trials),
            UAT_FIELD("gaussian_target_error", c.gaussian_target_error),
            UAT_FIELD("epsilon_low_coeff", c.epsilon_low_coeff),
            UAT_FIELD("epsilon_high", c.epsilon_high),
            UAT_FIELD("chi_n", c.concentration.chi_n),
            UAT_FIELD("chi_sigma", c.concentration.chi_sigma),
            UAT_FIELD("chi_alpha2", c.concentration.chi_alpha2),
            UAT_FIELD("chi_draws", c.concentration.chi_draws),
            UAT_FIELD("l1_m", c.concentration.l1_m),
            UAT_FIELD("l1_sigma", c.concentration.l1_sigma),
            UAT_FIELD("l1_a", c.concentration.l1_a),
            UAT_FIELD("l1_draws", c.concentration.l1_draws),
            UAT_FIELD("mean_d", c.concentration.mean_d),
            UAT_FIELD("mean_m", c.concentration.mean_m),
            UAT_FIELD("mean_sigma", c.concentration.mean_sigma),
            UAT_FIELD("delta", c.concentration.delta),
            UAT_FIELD("mean_draws", c.concentration.mean_draws),
        };
        return f;
    }();
    return all;
}

#undef UAT_FIELD

std::string strip_commas(std::string s) {
    for (auto& ch : s) {
        if (ch == ',' || ch == '\n') {
            ch = ';';
        }
    }
    return s;
}

bool uses_pool(train::Method m) { return m != train::Method::sup_at && m != train::Method::standard; }

bool needs_pseudo(train::Method m) { return m == train::Method::uat_ft || m == train::Method::uat_pp; }

Matrix first_columns(const Matrix& x, std::size_t k) {
    k = std::min<std::size_t>(k, static_cast<std::size_t>(x.cols()));
    return x.leftCols(static_cast<Eigen::Index>(k));
}

template <class T>
std::vector<T> prefix(const std::vector<T>& v, std::size_t k) {
    return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(k, v.size()))};
}

/// Points passed to an experiment that inspects individual test examples.
std::pair<Matrix, std::vector<int>> test_points(const toy::SplitDataset& data, std::size_t k) {
    if (k == 0) {
        k = data.test_y.size();
    }
    return {first_columns(data.test_x, k), prefix(data.test_y, k)};
}

}  // namespace

train::TrainConfig ExperimentConfig::train_config(train::Method m) const {
    train::TrainConfig t;
    t.method = m;
    t.lambda = lambda;
    t.batch = batch;
    t.labeled_batch = labeled_batch;
    t.steps = steps;
    t.learning_rate = learning_rate;
    t.momentum = momentum;
    t.weight_decay = weight_decay;
    t.decay_fraction = decay_fraction;
    t.decay_factor = decay_factor;
    t.hidden = hidden;
    t.attack = attacks::training_config(epsilon, train_attack_steps);
    t.distribution_shift_mode = distribution_shift_mode;
    t.ot_weight = ot_weight;
    t.labeled_in_unlabeled = labeled_in_unlabeled;
    t.seed = train_seed(*this);
    return t;
}

eval::AttackSuite ExperimentConfig::attack_suite() const {
    auto s = eval::default_suite(epsilon, eval_seed(*this), full_budget);
    if (!full_budget) {
        s.fgsm.steps = fgsm_steps;
        s.pgd.steps = pgd_steps;
        s.pgd.restarts = pgd_restarts;
        s.mt.steps = mt_steps;
        s.mt.restarts = mt_restarts;
    }
    return s;
}

ExperimentConfig apply_json(ExperimentConfig base, const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    require(doc.is_object(), "config: expected a JSON object of key/value settings");
    std::map<std::string, const Field*> by_name;
    for (const auto& f : fields()) {
        by_name[f.name] = &f;
    }
    for (const auto& [key, value] : doc.items()) {
        auto it = by_name.find(key);
        require(it != by_name.end(), "config: unknown key '" + key + "'");
        try {
            it->second->set(base, value);
        } catch (const json::exception& e) {
            throw InvalidArgument("config: bad value for '" + key + "': " + e.what());
        }
    }
    require(kExperiments.count(base.experiment) == 1, "config: unknown experiment '" + base.experiment + "'");
    require(base.epsilon >= 0.0, "config: epsilon must be non-negative");
    return base;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return apply_json(ExperimentConfig{}, ss.str());
}

std::string canonical_json(const ExperimentConfig& cfg) {
    json j = json::object();
    for (const auto& f : fields()) {
        if (f.hashed) {
            j[f.name] = f.get(cfg);
        }
    }
    return j.dump();
}

std::string config_hash(const ExperimentConfig& cfg) {
    // FNV-1a, so the hash is the same on every platform.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canonical_json(cfg)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CsvWriter::CsvWriter(const ExperimentConfig& cfg, std::vector<std::string> columns) : width_(columns.size()) {
    text_ = "# config_hash=" + config_hash(cfg) + ", seed=" + std::to_string(cfg.seed) + "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) {
        text_ += (i ? "," : "") + columns[i];
    }
    text_ += "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    require(cells.size() == width_, "CsvWriter: row width does not match the header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        text_ += (i ? "," : "") + cells[i];
    }
    text_ += "\n";
}

void CsvWriter::save(const std::string& path) const { write_text(path, text_); }

void write_text(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write " + path);
    out << text;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }

std::uint64_t train_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0x7a1aULL}); }
std::uint64_t eval_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, {0xe7a1ULL}); }

toy::SplitDataset make_dataset(const ExperimentConfig& cfg) {
    auto spec = cfg.toy;
    spec.seed = derive_seed(cfg.seed, {0xda7aULL});
    return toy::generate(spec);
}

toy::SplitDataset with_pool_prefix(toy::SplitDataset data, std::size_t m) {
    require(m <= data.m(), "with_pool_prefix: pool has fewer points than requested");
    data.unlabeled_x = first_columns(data.unlabeled_x, m);
    data.unlabeled_ids = prefix(data.unlabeled_ids, m);
    data.unlabeled_truth = prefix(data.unlabeled_truth, m);
    if (data.pseudo_labels) {
        data.pseudo_labels = prefix(*data.pseudo_labels, m);
    }
    return data;
}

nn::DenseNet train_base(const toy::SplitDataset& data, const ExperimentConfig& cfg, std::size_t steps,
                        Execution exec) {
    auto labeled_only = with_pool_prefix(data, 0);
    labeled_only.pseudo_labels.reset();
    auto tc = cfg.train_config(train::Method::standard);
    tc.steps = steps;
    tc.seed = derive_seed(cfg.seed, {0xba5eULL});
    return train::train(labeled_only, tc, exec).net;
}

train::TrainResult train_method(toy::SplitDataset data, train::Method method, const ExperimentConfig& cfg,
                                const nn::DenseNet* base, Execution exec) {
    if (data.m() == 0 && uses_pool(method)) {
        method = train::Method::sup_at;
    }
    if (needs_pseudo(method) && !data.pseudo_labels) {
        require(base != nullptr, "train_method: pseudo-labels need a base classifier");
        data.pseudo_labels = train::generate_pseudo_labels(*base, data.unlabeled_x, exec);
    }
    return train::train(data, cfg.train_config(method), exec);
}

eval::EvalRow evaluate_model(const nn::DenseNet& net, const toy::SplitDataset& data, const ExperimentConfig& cfg,
                             const std::string& method, std::size_t m, Execution exec) {
    const auto [x, y] = test_points(data, cfg.eval_points);
    auto row = eval::evaluate(net, x, y, cfg.attack_suite(), exec);
    row.method = method;
    row.n = data.n();
    row.m = m;
    return row;
}

double robust_accuracy(const eval::EvalRow& row) { return std::min({row.a_fgsm, row.a_pgd, row.a_mt}); }

EvalTable run_unlabeled_sweep(const ExperimentConfig& cfg, Execution exec) {
    EvalTable table;
    auto data = make_dataset(cfg);
    std::optional<nn::DenseNet> base;
    for (auto m : cfg.methods) {
        if (needs_pseudo(m)) {
            base = train_base(data, cfg, cfg.base_steps, exec);
            data.pseudo_labels = train::generate_pseudo_labels(*base, data.unlabeled_x, exec);
            break;
        }
    }
    // SUP_AT ignores the pool and every UAT variant reduces to it at m = 0,
    // so equal (method, m) keys after the reduction share one run.
    std::map<std::pair<train::Method, std::size_t>, eval::EvalRow> done;
    for (auto m : cfg.m_values) {
        for (auto method : cfg.methods) {
            const bool reduced = !uses_pool(method) || m == 0;
            const auto effective = (m == 0 && uses_pool(method)) ? train::Method::sup_at : method;
            const auto key = std::make_pair(effective, reduced ? std::size_t{0} : m);
            try {
                auto it = done.find(key);
                if (it == done.end()) {
                    auto sub = with_pool_prefix(data, m);
                    auto result = train_method(sub, effective, cfg, base ? &*base : nullptr, exec);
                    it = done.emplace(key, evaluate_model(result.net, sub, cfg, "", m, exec)).first;
                }
                auto row = it->second;
                row.method = train::to_string(method);
                row.m = m;
                table.rows.push_back(row);
            } catch (const std::exception& e) {
                table.failures.push_back(train::to_string(method) + "," + std::to_string(m) + ": " + e.what());
            }
        }
    }
    return table;
}

std::string eval_table_csv(const ExperimentConfig& cfg, const EvalTable& table) {
    CsvWriter csv(cfg, {"method", "n", "m", "a_nat", "a_fgsm", "a_pgd", "a_mt", "classification_error",
                        "smoothness_violation", "status"});
    for (const auto& r : table.rows) {
        csv.row({r.method, fmt(r.n), fmt(r.m), fmt(r.a_nat), fmt(r.a_fgsm), fmt(r.a_pgd), fmt(r.a_mt),
                 fmt(r.classification_error), fmt(r.smoothness_violation), "ok"});
    }
    for (const auto& f : table.failures) {
        const auto comma = f.find(',');
        const auto colon = f.find(": ");
        csv.row({f.substr(0, comma), "", f.substr(comma + 1, colon - comma - 1), "nan", "nan", "nan", "nan", "nan",
                 "nan", "failed: " + strip_commas(f.substr(colon + 2))});
    }
    return csv.str();
}

NoiseReport run_noise_sweep(const ExperimentConfig& cfg, Execution exec) {
    NoiseReport report;
    auto data = make_dataset(cfg);
    const auto& truth = data.unlabeled_truth;

    auto record = [&](const std::string& kind, train::Method method, double rate, const std::vector<int>* labels) {
        try {
            auto d = data;
            d.pseudo_labels.reset();
            if (labels) {
                d.pseudo_labels = *labels;
            }
            auto result = train_method(d, method, cfg, nullptr, exec);
            auto row = evaluate_model(result.net, d, cfg, train::to_string(method), d.m(), exec);
            NoiseRow out{kind, train::to_string(method), rate, 0.0, robust_accuracy(row), row.a_nat};
            if (labels) {
                std::size_t wrong = 0;
                for (std::size_t i = 0; i < truth.size(); ++i) {
                    wrong += (*labels)[i] != truth[i] ? 1 : 0;
                }
                out.realized_error = truth.empty() ? 0.0 : static_cast<double>(wrong) / truth.size();
            }
            report.rows.push_back(out);
        } catch (const std::exception& e) {
            report.failures.push_back(kind + "," + train::to_string(method) + "," + fmt(rate) + ": " + e.what());
        }
    };

    record("none", train::Method::sup_at, 0.0, nullptr);

    // UAT-OT never reads labels, so one run covers every noise level.
    std::optional<NoiseRow> ot;
    {
        const auto before = report.rows.size();
        record("none", train::Method::uat_ot, 0.0, nullptr);
        if (report.rows.size() > before) {
            ot = report.rows.back();
            report.rows.pop_back();
        }
    }

    for (std::size_t i = 0; i < cfg.noise_rates.size(); ++i) {
        const double rate = cfg.noise_rates[i];
        const auto noisy = train::inject_random_flip(truth, data.classes, rate, derive_seed(cfg.seed, {0x401eULL, i}));
        record("random_flip", train::Method::uat_ft, rate, &noisy.labels);
        record("random_flip", train::Method::standard, rate, &noisy.labels);
        if (ot) {
            auto r = *ot;
            r.kind = "random_flip";
            r.noise_rate = rate;
            r.realized_error = noisy.meta.realized_error;
            report.rows.push_back(r);
        }
    }

    // Weak base classifiers trained on separate labeled pools of varying size.
    std::vector<double> errs;
    std::vector<double> nat;
    for (std::size_t i = 0; i < cfg.correlated_base_sizes.size(); ++i) {
        const auto size = cfg.correlated_base_sizes[i];
        try {
            auto spec = cfg.toy;
            spec.seed = derive_seed(cfg.seed, {0xda7aULL});
            spec.m_unlabeled = size;
            auto pool = toy::make_shifted_pool(spec, data.map, 0.0, 0.0, 0xc0 + i);
            auto weak_data = with_pool_prefix(data, 0);
            weak_data.pseudo_labels.reset();
            weak_data.labeled_x = pool.x;
            weak_data.labeled_y = pool.truth;
            weak_data.labeled_ids.clear();
            for (std::size_t k = 0; k < pool.truth.size(); ++k) {
                weak_data.labeled_ids.push_back(1'000'000'000ULL + k);
            }
            auto tc = cfg.train_config(train::Method::standard);
            tc.steps = cfg.correlated_base_steps;
            tc.seed = derive_seed(cfg.seed, {0x3ea4ULL, i});
            const auto weak = train::train(weak_data, tc, exec).net;
            const auto noisy = train::inject_correlated(weak, data.unlabeled_x, truth, exec);
            const double rate = noisy.meta.realized_error;
            record("correlated", train::Method::uat_ft, rate, &noisy.labels);
            const auto before = report.rows.size();
            record("correlated", train::Method::standard, rate, &noisy.labels);
            if (report.rows.size() > before) {
                errs.push_back(report.rows.back().realized_error);
                nat.push_back(report.rows.back().natural_acc);
            }
            if (ot) {
                auto r = *ot;
                r.kind = "correlated";
                r.noise_rate = rate;
                r.realized_error = rate;
                report.rows.push_back(r);
            }
        } catch (const std::exception& e) {
            report.failures.push_back("correlated,base_size=" + std::to_string(size) + ": " + e.what());
        }
    }
    if (errs.size() >= 2) {
        report.correlated_standard_slope = stats::least_squares(errs, nat).slope;
    } else {
        report.correlated_standard_slope = std::nan("");
    }
    return report;
}

std::string noise_csv(const ExperimentConfig& cfg, const NoiseReport& report) {
    CsvWriter csv(cfg, {"kind", "method", "noise_rate", "realized_error", "robust_acc", "natural_acc", "status"});
    for (const auto& r : report.rows) {
        csv.row({r.kind, r.method, fmt(r.noise_rate), fmt(r.realized_error), fmt(r.robust_acc), fmt(r.natural_acc),
                 "ok"});
    }
    for (const auto& f : report.failures) {
        csv.row({"", "", "nan", "nan", "nan", "nan", "failed: " + strip_commas(f)});
    }
    return csv.str();
}

std::vector<ShiftRow> run_shift_compare(const ExperimentConfig& cfg, Execution exec) {
    std::vector<ShiftRow> rows;
    auto data = make_dataset(cfg);
    const auto base = train_base(data, cfg, cfg.base_steps, exec);
    data.pseudo_labels = train::generate_pseudo_labels(base, data.unlabeled_x, exec);

    auto run = [&](const std::string& pool, double shift, double nuisance, bool filtered, const toy::SplitDataset& d,
                   train::Method method, const ExperimentConfig& c) {
        try {
            auto result = train_method(d, method, c, &base, exec);
            auto row = evaluate_model(result.net, d, c, pool, d.m(), exec);
            rows.push_back({pool, shift, nuisance, filtered, d.m(), row.a_nat, row.a_pgd, "ok"});
        } catch (const std::exception& e) {
            rows.push_back({pool, shift, nuisance, filtered, d.m(), 0.0, 0.0, e.what()});
        }
    };

    run("none", 0.0, 0.0, false, with_pool_prefix(data, 0), train::Method::sup_at, cfg);
    run("in_distribution", 0.0, 0.0, false, data, train::Method::uat_pp, cfg);

    auto shifted_cfg = cfg;
    shifted_cfg.distribution_shift_mode = true;
    for (std::size_t i = 0; i < cfg.shift_magnitudes.size(); ++i) {
        const double s = cfg.shift_magnitudes[i];
        auto spec = cfg.toy;
        spec.seed = derive_seed(cfg.seed, {0xda7aULL});
        const auto pool = toy::make_shifted_pool(spec, data.map, s, cfg.nuisance_fraction, 0x5f + i);

        auto shifted = with_pool_prefix(data, 0);
        auto fill = [&](const Matrix& x, const std::vector<int>& labels, const std::vector<int>& truth) {
            shifted.unlabeled_x = x;
            shifted.pseudo_labels = labels;
            shifted.unlabeled_truth = truth;
            shifted.unlabeled_ids.clear();
            for (Eigen::Index k = 0; k < x.cols(); ++k) {
                shifted.unlabeled_ids.push_back(2'000'000'000ULL + static_cast<std::size_t>(k));
            }
        };
        fill(pool.x, train::generate_pseudo_labels(base, pool.x, exec), pool.truth);
        run("shifted", s, cfg.nuisance_fraction, false, shifted, train::Method::uat_pp, shifted_cfg);

        if (cfg.confidence_filtering) {
            const std::size_t top = cfg.top_per_class > 0 ? cfg.top_per_class : pool.truth.size() / 10;
            train::FilteredPool f;
            try {
                f = train::confidence_filter(base, pool.x, cfg.filter_threshold, top,
                                             derive_seed(cfg.seed, {0xf117ULL, i}), exec);
            } catch (const std::exception& e) {
                rows.push_back({"shifted", s, cfg.nuisance_fraction, true, 0, 0.0, 0.0, e.what()});
                continue;
            }
            std::vector<int> truth;
            for (auto src : f.source) {
                truth.push_back(pool.truth[src]);
            }
            fill(f.x, f.labels, truth);
            run("shifted", s, cfg.nuisance_fraction, true, shifted, train::Method::uat_pp, shifted_cfg);
        }
    }
    return rows;
}

std::string shift_csv(const ExperimentConfig& cfg, const std::vector<ShiftRow>& rows) {
    CsvWriter csv(cfg, {"pool", "shift", "nuisance", "filtered", "m_used", "a_nat", "a_pgd", "status"});
    for (const auto& r : rows) {
        const bool ok = r.status == "ok";
        csv.row({r.pool, fmt(r.shift), fmt(r.nuisance), r.filtered ? "1" : "0", fmt(r.m_used),
                 ok ? fmt(r.a_nat) : "nan", ok ? fmt(r.a_pgd) : "nan", ok ? "ok" : "failed: " + strip_commas(r.status)});
    }
    return csv.str();
}

std::vector<LandscapePoint> loss_landscape_grid(const nn::DenseNet& net, const Vector& x, int y,
                                                const attacks::AttackConfig& pgd, int resolution, double extent,
                                                std::uint64_t seed) {
    require(resolution >= 1, "loss_landscape_grid: resolution must be positive");
    require(extent > 0.0, "loss_landscape_grid: extent must be positive");
    const auto attacked = attacks::pgd_adam_margin(net, x, y, pgd);
    const Vector u = attacked.x_adv - x;
    require(u.lpNorm<Eigen::Infinity>() > 0.0, "loss_landscape_grid: PGD direction has zero norm");
    Rng rng(seed);
    Vector v(x.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        v(i) = (rng() >> 63) ? pgd.epsilon : -pgd.epsilon;
    }
    std::vector<LandscapePoint> grid;
    grid.reserve(static_cast<std::size_t>(resolution) * resolution);
    auto coord = [&](int i) {
        return resolution == 1 ? 0.0 : -extent + 2.0 * extent * i / (resolution - 1);
    };
    for (int i = 0; i < resolution; ++i) {
        for (int j = 0; j < resolution; ++j) {
            const double a = coord(i);
            const double b = coord(j);
            const Vector delta = a * u + b * v;
            const double loss = -nn::margin_loss(nn::logits(net, Vector(x + delta)), y);
            grid.push_back({a, b, loss, delta.lpNorm<Eigen::Infinity>() <= pgd.epsilon + 1e-12});
        }
    }
    return grid;
}

std::string landscape_csv(const ExperimentConfig& cfg, const std::vector<LandscapePoint>& grid) {
    CsvWriter csv(cfg, {"a", "b", "loss", "in_ball"});
    for (const auto& p : grid) {
        csv.row({fmt(p.a), fmt(p.b), fmt(p.loss), p.in_ball ? "1" : "0"});
    }
    return csv.str();
}

TraceReport convergence_traces(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y,
                               const attacks::AttackConfig& attack, double spread_threshold, Execution exec) {
    attacks::AttackLabels labels;
    labels.labels = y;
    auto result = attacks::attack_batch(net, x, labels, attack, exec, true);
    TraceReport report;
    report.traces = std::move(result.traces);
    for (std::size_t i = 0; i < report.traces.size(); ++i) {
        TraceSummary s;
        s.example_id = i;
        s.min_final = std::numeric_limits<double>::infinity();
        s.max_final = -std::numeric_limits<double>::infinity();
        for (const auto& curve : report.traces[i]) {
            if (curve.empty()) {
                continue;
            }
            s.min_final = std::min(s.min_final, curve.back());
            s.max_final = std::max(s.max_final, curve.back());
        }
        s.flagged = s.max_final - s.min_final > spread_threshold;
        report.summary.push_back(s);
    }
    return report;
}

std::string traces_csv(const ExperimentConfig& cfg, const TraceReport& report) {
    CsvWriter csv(cfg, {"example_id", "restart", "step", "objective"});
    for (std::size_t i = 0; i < report.traces.size(); ++i) {
        for (std::size_t r = 0; r < report.traces[i].size(); ++r) {
            for (std::size_t s = 0; s < report.traces[i][r].size(); ++s) {
                csv.row({fmt(i), fmt(r), fmt(s), fmt(report.traces[i][r][s])});
            }
        }
    }
    return csv.str();
}

std::string trace_summary_csv(const ExperimentConfig& cfg, const TraceReport& report) {
    CsvWriter csv(cfg, {"example_id", "min_final", "max_final", "spread", "flagged"});
    for (const auto& s : report.summary) {
        csv.row({fmt(s.example_id), fmt(s.min_final), fmt(s.max_final), fmt(s.max_final - s.min_final),
                 s.flagged ? "1" : "0"});
    }
    return csv.str();
}

ScatterReport spsa_scatter(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y,
                           const attacks::AttackConfig& pgd, const attacks::AttackConfig& spsa, Execution exec) {
    attacks::AttackLabels labels;
    labels.labels = y;
    ScatterReport report;
    report.pgd_margin = attacks::attack_batch(net, x, labels, pgd, exec).objective;
    report.spsa_margin = attacks::attack_batch(net, x, labels, spsa, exec).objective;
    report.correlation = stats::pearson(report.pgd_margin, report.spsa_margin);
    std::size_t below = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        // Differences below 1e-9 are rounding, not a better attack.
        below += report.spsa_margin[i] < report.pgd_margin[i] - 1e-9 ? 1 : 0;
    }
    report.below_diagonal = y.empty() ? 0.0 : static_cast<double>(below) / y.size();
    return report;
}

std::string scatter_csv(const ExperimentConfig& cfg, const ScatterReport& report) {
    CsvWriter csv(cfg, {"example_id", "pgd_final_margin", "spsa_final_margin"});
    for (std::size_t i = 0; i < report.pgd_margin.size(); ++i) {
        csv.row({fmt(i), fmt(report.pgd_margin[i]), fmt(report.spsa_margin[i])});
    }
    return csv.str();
}

std::vector<double> gaussian_epsilon_grid(const ExperimentConfig& cfg) {
    if (!cfg.gaussian_epsilons.empty()) {
        return cfg.gaussian_epsilons;
    }
    require(!cfg.gaussian_dims.empty(), "gaussian sweep: no dimensions configured");
    const int d = *std::min_element(cfg.gaussian_dims.begin(), cfg.gaussian_dims.end());
    const auto r = gaussian::theorem1_epsilon_range(d, cfg.epsilon_low_coeff, cfg.epsilon_high);
    return {r.low, std::sqrt(r.low * r.high), r.high};
}

gaussian::SweepConfig sweep_config(const ExperimentConfig& cfg) {
    gaussian::SweepConfig s;
    s.dims = cfg.gaussian_dims;
    s.epsilons = gaussian_epsilon_grid(cfg);
    s.ms = cfg.gaussian_ms;
    s.trials = cfg.gaussian_trials;
    s.target_error = cfg.gaussian_target_error;
    s.seed = derive_seed(cfg.seed, {0x6a55ULL});
    return s;
}

std::string sweep_csv(const ExperimentConfig& cfg, const gaussian::SweepReport& report) {
    CsvWriter csv(cfg, {"d", "sigma", "epsilon", "m", "trials", "success_rate", "mean_error", "cell_seed",
                        "regime_ok", "regime_note"});
    for (const auto& c : report.cells) {
        csv.row({std::to_string(c.d), fmt(c.sigma), fmt(c.epsilon), fmt(c.m), fmt(c.trials), fmt(c.success_rate),
                 fmt(c.mean_error), std::to_string(c.seed), c.regime_ok ? "1" : "0", strip_commas(c.regime_note)});
    }
    return csv.str();
}

std::string sweep_json(const ExperimentConfig& cfg, const gaussian::SweepReport& report) {
    json cells = json::array();
    for (const auto& c : report.cells) {
        cells.push_back({{"d", c.d},
                         {"sigma", c.sigma},
                         {"epsilon", c.epsilon},
                         {"m", c.m},
                         {"trials", c.trials},
                         {"success_rate", std::isnan(c.success_rate) ? json(nullptr) : json(c.success_rate)},
                         {"mean_error", std::isnan(c.mean_error) ? json(nullptr) : json(c.mean_error)},
                         {"cell_seed", c.seed},
                         {"regime_ok", c.regime_ok},
                         {"regime_note", c.regime_note}});
    }
    json body = {{"cells", cells}, {"master_seed", report.master_seed}, {"target_error", report.target_error}};
    return report_json(cfg, body.dump());
}

std::string lemma_csv(const ExperimentConfig& cfg, const std::vector<gaussian::ConcentrationRow>& rows) {
    CsvWriter csv(cfg, {"bound", "analytic_bound", "empirical_tail", "stderr", "draws", "pass"});
    for (const auto& r : rows) {
        csv.row({r.bound_name, fmt(r.analytic_bound), fmt(r.empirical_tail), fmt(r.stderr_), fmt(r.draws),
                 r.pass ? "1" : "0"});
    }
    return csv.str();
}

std::string report_json(const ExperimentConfig& cfg, const std::string& body_json) {
    json j = json::object();
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["config"] = json::parse(canonical_json(cfg));
    const auto body = json::parse(body_json);
    require(body.is_object(), "report_json: body must be an object");
    for (const auto& [k, v] : body.items()) {
        j[k] = v;
    }
    return j.dump(2) + "\n";
}

std::string train_curve_csv(const ExperimentConfig& cfg, const train::TrainReport& report) {
    CsvWriter csv(cfg, {"step", "classification", "smoothness", "lr"});
    for (const auto& p : report.curve) {
        csv.row({fmt(p.step), fmt(p.classification), fmt(p.smoothness), fmt(p.lr)});
    }
    return csv.str();
}

}  // namespace uat::harness

namespace uat::harness {

namespace {

json row_json(const eval::EvalRow& r) {
    return {{"method", r.method},
            {"n", r.n},
            {"m", r.m},
            {"a_nat", r.a_nat},
            {"a_fgsm", r.a_fgsm},
            {"a_pgd", r.a_pgd},
            {"a_mt", r.a_mt},
            {"classification_error", r.classification_error},
            {"smoothness_violation", r.smoothness_violation},
            {"dominance_chain", eval::dominance_chain_holds(r)}};
}

struct Subject {
    toy::SplitDataset data;
    nn::DenseNet net;
};

Subject load_subject(const ExperimentConfig& cfg, const RunInputs& in, Execution exec) {
    Subject s{in.data.empty() ? make_dataset(cfg) : toy::read_toyset(in.data), nn::DenseNet::zeros({1, 2})};
    if (!in.checkpoint.empty()) {
        s.net = nn::load_checkpoint(in.checkpoint);
        require(s.net.input_dim() == s.data.dim, "checkpoint input width does not match the dataset");
        return s;
    }
    std::optional<nn::DenseNet> base;
    if (needs_pseudo(cfg.method) && !s.data.pseudo_labels) {
        base = train_base(s.data, cfg, cfg.base_steps, exec);
    }
    s.net = train_method(s.data, cfg.method, cfg, base ? &*base : nullptr, exec).net;
    return s;
}

}  // namespace

Outputs run_experiment(const ExperimentConfig& cfg, const RunInputs& in, Execution exec) {
    Outputs out;
    const auto& e = cfg.experiment;
    if (e == "data_gen") {
        const auto data = make_dataset(cfg);
        out["dataset.toyset"] = toy::format_toyset(data);
        json body = {{"n", data.n()}, {"m", data.m()}, {"test", data.test_y.size()}, {"dim", data.dim},
                     {"classes", data.classes}};
        out["dataset.json"] = report_json(cfg, body.dump());
    } else if (e == "gaussian_sweep") {
        auto sc = sweep_config(cfg);
        const auto rule = gaussian::theorem1_sweep(sc, exec);
        out["sweep.csv"] = sweep_csv(cfg, rule);
        out["sweep.json"] = sweep_json(cfg, rule);
        sc.ms = cfg.scaling_ms;
        std::sort(sc.ms.begin(), sc.ms.end());
        sc.stop_at_success = true;
        const auto grid = gaussian::theorem1_sweep(sc, exec);
        out["scaling_grid.csv"] = sweep_csv(cfg, grid);
        const auto fit = gaussian::fit_scaling(grid);
        CsvWriter csv(cfg, {"d", "epsilon", "m_star"});
        for (const auto& r : fit.table) {
            csv.row({std::to_string(r.d), fmt(r.epsilon), fmt(r.m_star)});
        }
        out["scaling.csv"] = csv.str();
        json body = {{"epsilon_slope", fit.epsilon_slope},
                     {"dim_slope", fit.dim_slope},
                     {"epsilon_groups", fit.epsilon_groups},
                     {"dim_groups", fit.dim_groups}};
        out["scaling.json"] = report_json(cfg, body.dump());
    } else if (e == "check_lemmas") {
        const auto rows = gaussian::concentration_checks(cfg.concentration, derive_seed(cfg.seed, {0x1e44ULL}), exec);
        out["lemmas.csv"] = lemma_csv(cfg, rows);
        json arr = json::array();
        for (const auto& r : rows) {
            arr.push_back({{"bound", r.bound_name},
                           {"analytic_bound", r.analytic_bound},
                           {"empirical_tail", r.empirical_tail},
                           {"stderr", r.stderr_},
                           {"draws", r.draws},
                           {"pass", r.pass}});
        }
        out["lemmas.json"] = report_json(cfg, json{{"rows", arr}}.dump());
    } else if (e == "train") {
        auto data = in.data.empty() ? make_dataset(cfg) : toy::read_toyset(in.data);
        std::optional<nn::DenseNet> base;
        if (needs_pseudo(cfg.method) && !data.pseudo_labels) {
            base = train_base(data, cfg, cfg.base_steps, exec);
        }
        const auto result = train_method(data, cfg.method, cfg, base ? &*base : nullptr, exec);
        out["model.json"] = nn::to_json(result.net);
        out["curve.csv"] = train_curve_csv(cfg, result.report);
        const auto row = evaluate_model(result.net, data, cfg, train::to_string(cfg.method), data.m(), exec);
        json body = {{"b_s", result.report.b_s},
                     {"b_u", result.report.b_u},
                     {"attacked_examples", result.report.attacks.examples},
                     {"attack_calls", result.report.attacks.calls},
                     {"evaluation", row_json(row)}};
        out["train.json"] = report_json(cfg, body.dump());
    } else if (e == "evaluate") {
        const auto s = load_subject(cfg, in, exec);
        const auto row = evaluate_model(s.net, s.data, cfg, train::to_string(cfg.method), s.data.m(), exec);
        out["eval.csv"] = eval_table_csv(cfg, EvalTable{{row}, {}});
        out["eval.json"] = report_json(cfg, row_json(row).dump());
    } else if (e == "unlabeled_sweep") {
        const auto table = run_unlabeled_sweep(cfg, exec);
        out["unlabeled_sweep.csv"] = eval_table_csv(cfg, table);
        json rows = json::array();
        for (const auto& r : table.rows) {
            rows.push_back(row_json(r));
        }
        out["unlabeled_sweep.json"] = report_json(cfg, json{{"rows", rows}, {"failures", table.failures}}.dump());
    } else if (e == "noise_sweep") {
        const auto report = run_noise_sweep(cfg, exec);
        out["noise_sweep.csv"] = noise_csv(cfg, report);
        json body = {{"correlated_standard_slope", std::isnan(report.correlated_standard_slope)
                                                       ? json(nullptr)
                                                       : json(report.correlated_standard_slope)},
                     {"failures", report.failures}};
        out["noise_sweep.json"] = report_json(cfg, body.dump());
    } else if (e == "shift_compare") {
        out["shift_compare.csv"] = shift_csv(cfg, run_shift_compare(cfg, exec));
    } else if (e == "landscape") {
        const auto s = load_subject(cfg, in, exec);
        require(cfg.landscape_example < s.data.test_y.size(), "landscape: example index outside the test set");
        const auto i = static_cast<Eigen::Index>(cfg.landscape_example);
        const auto grid = loss_landscape_grid(s.net, s.data.test_x.col(i), s.data.test_y[cfg.landscape_example],
                                              cfg.attack_suite().pgd, cfg.landscape_resolution, cfg.landscape_extent,
                                              derive_seed(cfg.seed, {0x1a4dULL}));
        out["landscape.csv"] = landscape_csv(cfg, grid);
    } else if (e == "convergence") {
        const auto s = load_subject(cfg, in, exec);
        const auto [x, y] = test_points(s.data, cfg.trace_examples);
        auto attack = attacks::pgd_config(cfg.epsilon, cfg.trace_steps, cfg.trace_restarts);
        attack.seed = derive_seed(eval_seed(cfg), {6});
        const auto report = convergence_traces(s.net, x, y, attack, cfg.spread_threshold, exec);
        out["traces.csv"] = traces_csv(cfg, report);
        out["traces_summary.csv"] = trace_summary_csv(cfg, report);
    } else if (e == "spsa_scatter") {
        const auto s = load_subject(cfg, in, exec);
        const auto [x, y] = test_points(s.data, cfg.spsa_points);
        auto spsa = attacks::spsa_config(cfg.epsilon, cfg.spsa_iterations, cfg.spsa_batch);
        spsa.seed = derive_seed(eval_seed(cfg), {5});
        const auto report = spsa_scatter(s.net, x, y, cfg.attack_suite().pgd, spsa, exec);
        out["spsa_scatter.csv"] = scatter_csv(cfg, report);
        json body = {{"points", y.size()},
                     {"correlation", std::isnan(report.correlation) ? json(nullptr) : json(report.correlation)},
                     {"below_diagonal", report.below_diagonal}};
        out["spsa_scatter.json"] = report_json(cfg, body.dump());
    } else {
        throw InvalidArgument("run_experiment: unknown experiment '" + e + "'");
    }
    return out;
}

void write_outputs(const std::string& dir, const Outputs& outputs) {
    for (const auto& [name, text] : outputs) {
        write_text((std::filesystem::path(dir) / name).string(), text);
    }
}

}  // namespace uat::harness
