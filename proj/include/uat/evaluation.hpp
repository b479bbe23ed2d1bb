#pragma once

#include <string>
#include <vector>

#include "uat/attacks.hpp"

namespace uat::eval {

struct AttackSuite {
    attacks::AttackConfig fgsm;
    attacks::AttackConfig pgd;
    attacks::AttackConfig mt;
    bool run_mt = true;
};

/// FGSM^20; PGD 100×5; MultiTargeted 100×5 per class. full_budget switches
/// PGD and MultiTargeted to 200 steps × 20 restarts.
AttackSuite default_suite(double epsilon, std::uint64_t seed, bool full_budget = false);

struct EvalRow {
    std::string method;
    std::size_t n = 0;
    std::size_t m = 0;
    double a_nat = 0.0;
    double a_fgsm = 0.0;
    double a_pgd = 0.0;
    double a_mt = 0.0;
    /// 1 − A_nat.
    double classification_error = 0.0;
    /// Fraction of points where MultiTargeted against f(x) changes the prediction.
    double smoothness_violation = 0.0;
};

/// Natural and per-attack accuracy plus the classification / smoothness split.
/// The smoothness attack reuses the MultiTargeted run wherever f(x) = y.
EvalRow evaluate(const nn::DenseNet& net, const Matrix& x, const std::vector<int>& y, const AttackSuite& suite,
                 Execution exec = Execution::parallel);

/// A_nat ≥ A_FGSM ≥ A_PGD ≥ A_MT, each within tol.
bool dominance_chain_holds(const EvalRow& row, double tol = 0.01);

}  // namespace uat::eval
