#pragma once

// Central-difference gradient oracle shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <random>

#include "uat/nn.hpp"

namespace uat::testing {

struct GradCheckCase {
    nn::DenseNet net;
    Matrix x;
    nn::LossSpec spec;
    std::size_t resamples = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t compared = 0;
    std::size_t resamples = 0;
};

inline double summed_loss(const nn::DenseNet& net, const Matrix& x, const nn::LossSpec& spec) {
    const auto losses = nn::example_losses(nn::forward(net, x).logits, spec);
    double s = 0.0;
    for (double l : losses) {
        s += l;
    }
    return s;
}

/// True when every hidden preactivation and every deciding logit gap is at
/// least `gap` away from a kink of the loss.
inline bool away_from_kinks(const nn::DenseNet& net, const Matrix& x, const nn::LossSpec& spec, double gap) {
    Matrix a = x;
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Matrix z = (layers[l].weight * a).colwise() + layers[l].bias;
        if (l + 1 < layers.size()) {
            if (z.cwiseAbs().minCoeff() < gap) {
                return false;
            }
            a = z.cwiseMax(0.0);
            continue;
        }
        if (spec.kind != nn::LossKind::margin) {
            return true;
        }
        for (Eigen::Index b = 0; b < z.cols(); ++b) {
            std::vector<double> others;
            for (Eigen::Index k = 0; k < z.rows(); ++k) {
                if (k != spec.labels[static_cast<std::size_t>(b)]) {
                    others.push_back(z(k, b));
                }
            }
            std::sort(others.rbegin(), others.rend());
            if (others.size() >= 2 && others[0] - others[1] < gap) {
                return false;
            }
        }
    }
    return true;
}

/// Random net (1–3 hidden layers, widths 4–64), three inputs in [0,1] and a
/// loss of the requested kind; redrawn until no kink lies within 1e-3.
inline GradCheckCase random_case(nn::LossKind kind, std::uint64_t seed) {
    GradCheckCase c{nn::DenseNet::zeros({1, 2}), {}, {}, 0};
    for (std::uint64_t attempt = 0;; ++attempt) {
        Rng rng = make_rng(seed, {attempt});
        std::uniform_int_distribution<int> depth(1, 3);
        std::uniform_int_distribution<int> width(4, 64);
        std::uniform_int_distribution<int> dim(2, 8);
        std::uniform_int_distribution<int> classes(2, 5);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<int> widths{dim(rng)};
        const int hidden = depth(rng);
        for (int h = 0; h < hidden; ++h) {
            widths.push_back(width(rng));
        }
        const int k = classes(rng);
        widths.push_back(k);
        c.net = nn::DenseNet::random(widths, rng());
        for (auto& layer : c.net.layers()) {
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
                layer.bias(i) = 0.2 * (unit(rng) - 0.5);
            }
        }
        const int batch = 3;
        c.x.resize(widths.front(), batch);
        for (Eigen::Index i = 0; i < c.x.size(); ++i) {
            c.x.data()[i] = unit(rng);
        }
        std::uniform_int_distribution<int> label(0, k - 1);
        std::vector<int> labels(batch);
        for (auto& y : labels) {
            y = label(rng);
        }
        switch (kind) {
            case nn::LossKind::xent:
                c.spec = nn::LossSpec::xent(labels);
                break;
            case nn::LossKind::margin:
                c.spec = nn::LossSpec::margin(labels);
                break;
            case nn::LossKind::kl_to_target: {
                Matrix t(k, batch);
                for (Eigen::Index i = 0; i < t.size(); ++i) {
                    t.data()[i] = 0.05 + unit(rng);
                }
                for (Eigen::Index b = 0; b < batch; ++b) {
                    t.col(b) /= t.col(b).sum();
                }
                c.spec = nn::LossSpec::kl(t);
                break;
            }
            case nn::LossKind::targeted_margin: {
                std::vector<int> targets(batch);
                for (int b = 0; b < batch; ++b) {
                    targets[b] = (labels[b] + 1) % k;
                }
                c.spec = nn::LossSpec::targeted(labels, targets);
                break;
            }
        }
        if (away_from_kinks(c.net, c.x, c.spec, 1e-3)) {
            c.resamples = attempt;
            return c;
        }
    }
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Every parameter and input coordinate against central differences with step h.
inline GradCheckResult gradient_check(const GradCheckCase& c, double h = 1e-5) {
    GradCheckResult r;
    r.resamples = c.resamples;
    const auto g = nn::backward(c.net, c.x, c.spec);
    auto net = c.net;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto probe = [&](double& slot, double analytic) {
            const double keep = slot;
            slot = keep + h;
            const double up = summed_loss(net, c.x, c.spec);
            slot = keep - h;
            const double down = summed_loss(net, c.x, c.spec);
            slot = keep;
            r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic, (up - down) / (2.0 * h)));
            ++r.compared;
        };
        auto& layer = net.layers()[l];
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
            probe(layer.weight.data()[i], g.params[l].weight.data()[i]);
        }
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
            probe(layer.bias.data()[i], g.params[l].bias.data()[i]);
        }
    }
    Matrix x = c.x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = summed_loss(net, x, c.spec);
        x.data()[i] = keep - h;
        const double down = summed_loss(net, x, c.spec);
        x.data()[i] = keep;
        r.max_rel_error = std::max(r.max_rel_error, relative_error(g.input.data()[i], (up - down) / (2.0 * h)));
        ++r.compared;
    }
    return r;
}

}  // namespace uat::testing
