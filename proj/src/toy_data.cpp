#include "uat/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace uat::toy {

namespace {

constexpr int kToysetVersion = 1;

enum Stream : std::uint64_t { labeled_stream = 1, unlabeled_stream = 2, test_stream = 3, shift_stream = 4 };

int class_count(const ToySpec& spec) { return spec.generator == Generator::gaussian_pair ? 2 : spec.classes; }

struct RawSplit {
    Matrix x;
    std::vector<int> y;
};

RawSplit draw(const ToySpec& spec, const std::vector<Vector>& means, std::size_t count, std::uint64_t seed) {
    const int k = static_cast<int>(means.size());
    Rng rng(seed);
    std::vector<double> priors = spec.priors.empty() ? std::vector<double>(static_cast<std::size_t>(k), 1.0) : spec.priors;
    std::discrete_distribution<int> pick(priors.begin(), priors.end());
    std::normal_distribution<double> noise(0.0, spec.sigma);
    RawSplit out{Matrix(spec.dim, static_cast<Eigen::Index>(count)), std::vector<int>(count)};
    for (std::size_t i = 0; i < count; ++i) {
        const int y = pick(rng);
        out.y[i] = y;
        for (int j = 0; j < spec.dim; ++j) {
            out.x(j, static_cast<Eigen::Index>(i)) = means[static_cast<std::size_t>(y)][j] + noise(rng);
        }
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, sep)) {
        out.push_back(cur);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), "toyset: malformed number '" + s + "'");
    return v;
}

}  // namespace

std::string to_string(Generator g) {
    switch (g) {
        case Generator::gaussian_pair: return "gaussian_pair";
        case Generator::gaussian_mixture: return "gaussian_mixture";
        case Generator::shifted_mixture: return "shifted_mixture";
    }
    return "?";
}

NoiseKind parse_noise_kind(const std::string& s) {
    for (auto k : {NoiseKind::none, NoiseKind::random_flip, NoiseKind::correlated}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw InvalidArgument("unknown noise kind: " + s);
}

Generator parse_generator(const std::string& s) {
    for (auto g : {Generator::gaussian_pair, Generator::gaussian_mixture, Generator::shifted_mixture}) {
        if (to_string(g) == s) {
            return g;
        }
    }
    throw InvalidArgument("unknown generator: " + s);
}

std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::random_flip: return "random_flip";
        case NoiseKind::correlated: return "correlated";
    }
    return "?";
}

void ToySpec::validate() const {
    require(dim >= 1, "ToySpec: dim must be >= 1");
    require(sigma > 0.0, "ToySpec: sigma must be positive");
    if (generator == Generator::gaussian_pair) {
        require(theta_star.empty() || static_cast<int>(theta_star.size()) == dim, "ToySpec: theta_star size mismatch");
    } else {
        require(classes >= 1, "ToySpec: zero classes");
        require(classes >= 2, "ToySpec: need at least two classes");
        require(classes <= 2 * dim, "ToySpec: at most 2*dim classes");
    }
    const int k = class_count(*this);
    if (!priors.empty()) {
        require(static_cast<int>(priors.size()) == k, "ToySpec: prior count mismatch");
        double s = 0.0;
        for (double p : priors) {
            require(p >= 0.0, "ToySpec: negative prior");
            s += p;
        }
        require(std::abs(s - 1.0) <= 1e-9, "ToySpec: priors must sum to 1");
    }
    require(shift_magnitude >= 0.0, "ToySpec: shift_magnitude must be >= 0");
    require(nuisance_fraction >= 0.0 && nuisance_fraction <= 1.0, "ToySpec: nuisance_fraction outside [0,1]");
}

std::vector<Vector> ToySpec::class_means() const {
    std::vector<Vector> means;
    if (generator == Generator::gaussian_pair) {
        Vector theta = theta_star.empty() ? Vector(Vector::Ones(dim)) : Vector(Eigen::Map<const Vector>(theta_star.data(), dim));
        means.push_back(-theta);  // class 0 ↔ y = −1
        means.push_back(theta);   // class 1 ↔ y = +1
        return means;
    }
    for (int k = 0; k < classes; ++k) {
        Vector m = Vector::Zero(dim);
        m[k % dim] = (k / dim) % 2 == 0 ? mean_radius : -mean_radius;
        means.push_back(m);
    }
    return means;
}

Matrix AffineMap::apply(const Matrix& raw) const {
    return (raw.colwise() - offset).array().colwise() * factor.array();
}

Matrix AffineMap::invert(const Matrix& scaled) const {
    Matrix out = scaled.array().colwise() / factor.array();
    return out.colwise() + offset;
}

void SplitDataset::validate() const {
    require(labeled_x.cols() == static_cast<Eigen::Index>(labeled_y.size()), "SplitDataset: labeled size mismatch");
    require(unlabeled_x.cols() == static_cast<Eigen::Index>(unlabeled_ids.size()), "SplitDataset: unlabeled size mismatch");
    if (pseudo_labels) {
        require(pseudo_labels->size() == unlabeled_ids.size(), "SplitDataset: pseudo-labels do not align with the pool");
    }
    std::set<std::size_t> seen;
    for (const auto* ids : {&labeled_ids, &unlabeled_ids, &test_ids}) {
        for (auto id : *ids) {
            require(seen.insert(id).second, "SplitDataset: splits share an identifier");
        }
    }
}

SplitDataset generate(const ToySpec& spec) {
    spec.validate();
    const auto means = spec.class_means();
    SplitDataset data;
    data.dim = spec.dim;
    data.classes = class_count(spec);
    data.generator = spec.generator;

    RawSplit lab = draw(spec, means, spec.n_labeled, derive_seed(spec.seed, {labeled_stream}));
    RawSplit test = draw(spec, means, spec.n_test, derive_seed(spec.seed, {test_stream}));
    RawSplit unl;
    std::vector<int> unl_truth;
    const bool shifted = spec.generator == Generator::shifted_mixture;
    if (!shifted) {
        unl = draw(spec, means, spec.m_unlabeled, derive_seed(spec.seed, {unlabeled_stream}));
        unl_truth = unl.y;
    }

    // Map fitted on in-distribution points only.
    Vector lo = Vector::Constant(spec.dim, std::numeric_limits<double>::infinity());
    Vector hi = -lo;
    for (const auto* m : {&lab.x, &test.x, &unl.x}) {
        if (m->cols() > 0) {
            lo = lo.cwiseMin(m->rowwise().minCoeff());
            hi = hi.cwiseMax(m->rowwise().maxCoeff());
        }
    }
    data.map.offset = Vector(spec.dim);
    data.map.factor = Vector(spec.dim);
    for (int j = 0; j < spec.dim; ++j) {
        const bool ok = std::isfinite(lo[j]) && hi[j] > lo[j];
        data.map.offset[j] = ok ? lo[j] : 0.0;
        data.map.factor[j] = ok ? 1.0 / (hi[j] - lo[j]) : 1.0;
    }

    std::size_t next_id = 0;
    data.labeled_x = data.map.apply(lab.x);
    data.labeled_y = lab.y;
    for (std::size_t i = 0; i < spec.n_labeled; ++i) {
        data.labeled_ids.push_back(next_id++);
    }
    if (shifted) {
        auto pool = make_shifted_pool(spec, data.map, spec.shift_magnitude, spec.nuisance_fraction);
        data.unlabeled_x = std::move(pool.x);
        data.unlabeled_truth = std::move(pool.truth);
    } else {
        data.unlabeled_x = data.map.apply(unl.x);
        data.unlabeled_truth = unl_truth;
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(data.unlabeled_x.cols()); ++i) {
        data.unlabeled_ids.push_back(next_id++);
    }
    data.test_x = data.map.apply(test.x);
    data.test_y = test.y;
    for (std::size_t i = 0; i < spec.n_test; ++i) {
        data.test_ids.push_back(next_id++);
    }
    return data;
}

UnlabeledPool make_shifted_pool(const ToySpec& spec, const AffineMap& map, double shift_magnitude,
                                double nuisance_fraction, std::uint64_t stream) {
    spec.validate();
    require(shift_magnitude >= 0.0, "make_shifted_pool: shift_magnitude must be >= 0");
    require(nuisance_fraction >= 0.0 && nuisance_fraction <= 1.0, "make_shifted_pool: nuisance_fraction outside [0,1]");
    require(map.offset.size() == spec.dim, "make_shifted_pool: map dimension mismatch");

    auto means = spec.class_means();
    const int k = static_cast<int>(means.size());
    Vector centroid = Vector::Zero(spec.dim);
    for (const auto& m : means) {
        centroid += m / k;
    }

    Rng rng(derive_seed(spec.seed, {shift_stream, stream}));
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector direction(spec.dim);
    for (int j = 0; j < spec.dim; ++j) {
        direction[j] = gauss(rng);
    }
    direction /= direction.norm();
    for (auto& m : means) {
        m += shift_magnitude * direction;
    }

    const std::size_t count = spec.m_unlabeled;
    const auto nuisance = static_cast<std::size_t>(std::llround(nuisance_fraction * static_cast<double>(count)));
    ToySpec in_spec = spec;
    RawSplit task = draw(in_spec, means, count - nuisance, rng());
    // Two nuisance classes straddle the centroid at a quarter of the mean radius,
    // with a quarter of the task noise so they sit where no task class dominates.
    std::vector<Vector> extra;
    Vector offset = Vector::Zero(spec.dim);
    offset[spec.dim - 1] = 0.25 * (spec.generator == Generator::gaussian_pair ? 1.0 : spec.mean_radius);
    extra.push_back(centroid + offset);
    extra.push_back(centroid - offset);
    ToySpec extra_spec = spec;
    extra_spec.priors.clear();
    extra_spec.sigma = 0.25 * spec.sigma;
    RawSplit other = draw(extra_spec, extra, nuisance, rng());

    UnlabeledPool pool;
    Matrix raw(spec.dim, static_cast<Eigen::Index>(count));
    raw.leftCols(task.x.cols()) = task.x;
    raw.rightCols(other.x.cols()) = other.x;
    pool.x = map.apply(raw).cwiseMax(0.0).cwiseMin(1.0);
    pool.truth = task.y;
    pool.truth.resize(count, -1);
    for (std::size_t i = 0; i < count; ++i) {
        pool.ids.push_back(i);
    }
    return pool;
}

std::string format_toyset(const SplitDataset& data) {
    data.validate();
    std::ostringstream out;
    out << "# toyset\n";
    out << "version=" << kToysetVersion << '\n';
    out << "generator=" << to_string(data.generator) << '\n';
    out << "dim=" << data.dim << '\n';
    out << "classes=" << data.classes << '\n';
    auto vec = [&](const Vector& v) {
        std::string s;
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            s += (j ? "," : "") + format_double(v[j]);
        }
        return s;
    };
    out << "map_offset=" << vec(data.map.offset) << '\n';
    out << "map_factor=" << vec(data.map.factor) << '\n';
    if (data.pseudo_labels) {
        out << "noise=" << to_string(data.noise.kind) << ',' << format_double(data.noise.rate) << ','
            << format_double(data.noise.realized_error) << '\n';
    }
    out << "columns=split,id";
    for (int j = 0; j < data.dim; ++j) {
        out << ",x" << j;
    }
    const bool pseudo = data.pseudo_labels.has_value();
    out << (pseudo ? ",label,pseudo\n" : ",label\n");
    auto row = [&](const char* split_name, std::size_t id, const Eigen::Ref<const Vector>& x, const std::string& label,
                   const std::string& extra = "") {
        out << split_name << ',' << id;
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            out << ',' << format_double(x[j]);
        }
        out << ',' << label;
        if (pseudo) {
            out << ',' << extra;
        }
        out << '\n';
    };
    for (std::size_t i = 0; i < data.n(); ++i) {
        row("labeled", data.labeled_ids[i], data.labeled_x.col(static_cast<Eigen::Index>(i)),
            std::to_string(data.labeled_y[i]));
    }
    for (std::size_t i = 0; i < data.m(); ++i) {
        const int truth = i < data.unlabeled_truth.size() ? data.unlabeled_truth[i] : -1;
        row("unlabeled", data.unlabeled_ids[i], data.unlabeled_x.col(static_cast<Eigen::Index>(i)),
            truth >= 0 ? "?" + std::to_string(truth) : "?",
            data.pseudo_labels ? std::to_string((*data.pseudo_labels)[i]) : "");
    }
    for (std::size_t i = 0; i < data.test_y.size(); ++i) {
        row("test", data.test_ids[i], data.test_x.col(static_cast<Eigen::Index>(i)), std::to_string(data.test_y[i]));
    }
    return out.str();
}

SplitDataset parse_toyset(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::map<std::string, std::string> header;
    SplitDataset data;
    std::vector<std::vector<double>> cols[3];
    std::vector<std::size_t> ids[3];
    std::vector<int> labels[3];
    std::vector<int> pseudo;
    bool has_pseudo = false;
    bool in_body = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        if (!in_body) {
            const auto eq = line.find('=');
            require(eq != std::string::npos, "toyset: malformed header line " + std::to_string(line_no));
            header[line.substr(0, eq)] = line.substr(eq + 1);
            if (line.rfind("columns=", 0) == 0) {
                in_body = true;
                require(header.count("version") && std::stoi(header["version"]) == kToysetVersion,
                        "toyset: missing or unsupported version");
                data.generator = parse_generator(header.at("generator"));
                data.dim = std::stoi(header.at("dim"));
                data.classes = std::stoi(header.at("classes"));
                auto read_vec = [&](const std::string& key) {
                    const auto parts = split(header.at(key), ',');
                    require(static_cast<int>(parts.size()) == data.dim, "toyset: map size mismatch");
                    Vector v(data.dim);
                    for (int j = 0; j < data.dim; ++j) {
                        v[j] = parse_double(parts[static_cast<std::size_t>(j)]);
                    }
                    return v;
                };
                data.map.offset = read_vec("map_offset");
                data.map.factor = read_vec("map_factor");
                const std::string columns = header.at("columns");
                has_pseudo = columns.size() >= 7 && columns.compare(columns.size() - 7, 7, ",pseudo") == 0;
                if (has_pseudo) {
                    const auto noise = split(header.at("noise"), ',');
                    require(noise.size() == 3, "toyset: malformed noise header");
                    data.noise.kind = parse_noise_kind(noise[0]);
                    data.noise.rate = parse_double(noise[1]);
                    data.noise.realized_error = parse_double(noise[2]);
                }
            }
            continue;
        }
        const auto f = split(line, ',');
        require(static_cast<int>(f.size()) == data.dim + (has_pseudo ? 4 : 3),
                "toyset: wrong field count on line " + std::to_string(line_no));
        int s = f[0] == "labeled" ? 0 : f[0] == "unlabeled" ? 1 : f[0] == "test" ? 2 : -1;
        require(s >= 0, "toyset: unknown split on line " + std::to_string(line_no));
        ids[s].push_back(std::stoull(f[1]));
        std::vector<double> x(static_cast<std::size_t>(data.dim));
        for (int j = 0; j < data.dim; ++j) {
            x[static_cast<std::size_t>(j)] = parse_double(f[static_cast<std::size_t>(j) + 2]);
        }
        cols[s].push_back(std::move(x));
        const std::string& lab = f[static_cast<std::size_t>(data.dim) + 2];
        if (s == 1) {
            require(!lab.empty() && lab[0] == '?', "toyset: unlabeled rows must use '?'");
            labels[s].push_back(lab.size() > 1 ? std::stoi(lab.substr(1)) : -1);
            if (has_pseudo) {
                pseudo.push_back(std::stoi(f.back()));
            }
        } else {
            labels[s].push_back(std::stoi(lab));
        }
    }
    require(in_body, "toyset: missing header");
    auto to_matrix = [&](const std::vector<std::vector<double>>& v) {
        Matrix m(data.dim, static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            for (int j = 0; j < data.dim; ++j) {
                m(j, static_cast<Eigen::Index>(i)) = v[i][static_cast<std::size_t>(j)];
            }
        }
        return m;
    };
    data.labeled_x = to_matrix(cols[0]);
    data.labeled_y = labels[0];
    data.labeled_ids = ids[0];
    data.unlabeled_x = to_matrix(cols[1]);
    data.unlabeled_truth = labels[1];
    data.unlabeled_ids = ids[1];
    data.test_x = to_matrix(cols[2]);
    data.test_y = labels[2];
    data.test_ids = ids[2];
    if (has_pseudo) {
        data.pseudo_labels = pseudo;
    }
    data.validate();
    return data;
}

void write_toyset(const SplitDataset& data, const std::string& path) {
    std::ofstream f(path);
    require(static_cast<bool>(f), "write_toyset: cannot open " + path);
    f << format_toyset(data);
}

SplitDataset read_toyset(const std::string& path) {
    std::ifstream f(path);
    require(static_cast<bool>(f), "read_toyset: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_toyset(ss.str());
}

}  // namespace uat::toy
