#include "uat/evaluation.hpp"

namespace uat::eval {

AttackSuite default_suite(double epsilon, std::uint64_t seed, bool full_budget) {
    AttackSuite s;
    s.fgsm = attacks::fgsm_config(epsilon, 20);
    s.pgd = full_budget ? attacks::pgd_config(epsilon, 200, 20) : attacks::pgd_config(epsilon, 100, 5);
    s.mt = full_budget ? attacks::multi_targeted_config(epsilon, 200, 20) : attacks::multi_targeted_config(epsilon, 100, 5);
    s.fgsm.seed = derive_seed(seed, {1});
    s.pgd.seed = derive_seed(seed, {2});
    s.mt.seed = derive_seed(seed, {3});
    return s;
}

EvalRow evaluate(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y, const AttackSuite& suite,
                 Execution exec) {
    require(!y.empty() && static_cast<std::size_t>(x.cols()) == y.size(), "evaluate: empty or mismatched test set");
    const std::size_t n = y.size();
    const auto pred = nn::predict(net, x, exec);
    auto accuracy = [&](const std::vector<bool>& success) {
        std::size_t ok = 0;
        for (bool s : success) {
            ok += s ? 0 : 1;
        }
        return static_cast<double>(ok) / static_cast<double>(n);
    };
    attacks::AttackLabels labels;
    labels.labels = y;

    EvalRow row;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        correct += pred[i] == y[i] ? 1 : 0;
    }
    row.a_nat = static_cast<double>(correct) / static_cast<double>(n);
    row.classification_error = 1.0 - row.a_nat;
    row.a_fgsm = accuracy(attacks::attack_batch(net, x, labels, suite.fgsm, exec).success);
    row.a_pgd = accuracy(attacks::attack_batch(net, x, labels, suite.pgd, exec).success);

    const auto& smooth_cfg = suite.run_mt ? suite.mt : suite.pgd;
    const auto strongest = attacks::attack_batch(net, x, labels, smooth_cfg, exec).success;
    row.a_mt = suite.run_mt ? accuracy(strongest) : row.a_pgd;

    // Points with f(x) ≠ y are re-attacked against f(x) under their own ids.
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
        if (pred[i] != y[i]) {
            ids.push_back(i);
        }
    }
    std::size_t flips = 0;
    for (std::size_t i = 0; i < n; ++i) {
        flips += (pred[i] == y[i] && strongest[i]) ? 1 : 0;
    }
    if (!ids.empty()) {
        Matrix sub(x.rows(), static_cast<Eigen::Index>(ids.size()));
        attacks::AttackLabels own;
        for (std::size_t j = 0; j < ids.size(); ++j) {
            sub.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(ids[j]));
            own.labels.push_back(pred[ids[j]]);
        }
        for (bool s : attacks::attack_batch(net, sub, own, smooth_cfg, exec, false, &ids).success) {
            flips += s ? 1 : 0;
        }
    }
    row.smoothness_violation = static_cast<double>(flips) / static_cast<double>(n);
    return row;
}

bool dominance_chain_holds(const EvalRow& row, double tol) {
    return row.a_nat + tol >= row.a_fgsm && row.a_fgsm + tol >= row.a_pgd && row.a_pgd + tol >= row.a_mt;
}

}  // namespace uat::eval
