#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uat/common.hpp"

namespace uat::toy {

enum class Generator { gaussian_pair, gaussian_mixture, shifted_mixture };

std::string to_string(Generator g);
Generator parse_generator(const std::string& s);

struct ToySpec {
    Generator generator = Generator::gaussian_mixture;
    int classes = 4;  // forced to 2 for gaussian_pair
    int dim = 8;
    /// Class k has mean mean_radius·(±e_{k mod dim}); gaussian_pair uses ±theta_star.
    double mean_radius = 3.0;
    double sigma = 1.0;
    /// gaussian_pair only; empty means (1, ..., 1).
    std::vector<double> theta_star;
    /// Empty means uniform priors.
    std::vector<double> priors;
    std::size_t n_labeled = 50;
    std::size_t m_unlabeled = 5000;
    std::size_t n_test = 1000;
    /// shifted_mixture only: applied to the unlabeled split.
    double shift_magnitude = 0.0;
    double nuisance_fraction = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<Vector> class_means() const;
};

/// x_scaled = (x − offset) ⊙ factor, with factor = 1/(max − min) per coordinate.
struct AffineMap {
    Vector offset;
    Vector factor;

    Matrix apply(const Matrix& raw) const;
    Matrix invert(const Matrix& scaled) const;
};

enum class NoiseKind { none, random_flip, correlated };

std::string to_string(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& s);

struct NoiseMeta {
    NoiseKind kind = NoiseKind::none;
    double rate = 0.0;           // requested flip rate, or base-model error for correlated
    double realized_error = 0.0; // fraction of pseudo-labels differing from the truth
};

struct SplitDataset {
    int dim = 0;
    int classes = 0;
    Generator generator = Generator::gaussian_mixture;

    Matrix labeled_x;
    std::vector<int> labeled_y;
    std::vector<std::size_t> labeled_ids;

    Matrix unlabeled_x;
    std::vector<std::size_t> unlabeled_ids;
    /// Hidden ground truth; −1 for nuisance points from classes outside the task.
    std::vector<int> unlabeled_truth;
    std::optional<std::vector<int>> pseudo_labels;
    NoiseMeta noise;

    Matrix test_x;
    std::vector<int> test_y;
    std::vector<std::size_t> test_ids;

    AffineMap map;

    std::size_t n() const { return labeled_y.size(); }
    std::size_t m() const { return unlabeled_ids.size(); }
    /// Throws when pseudo-labels exist but do not align with the pool.
    void validate() const;
};

/// Deterministic given spec.seed. Coordinates are scaled into [0, 1] with a
/// map fitted on all generated in-distribution points.
SplitDataset generate(const ToySpec& spec);

struct UnlabeledPool {
    Matrix x;
    std::vector<int> truth;  // −1 marks nuisance points
    std::vector<std::size_t> ids;
};

/// Off-distribution pool of spec.m_unlabeled points: class means translated by
/// shift_magnitude along a seeded unit direction, plus a nuisance_fraction of
/// points from extra classes centred near the centroid of the class means.
/// Uses the dataset's map and clips to [0, 1].
UnlabeledPool make_shifted_pool(const ToySpec& spec, const AffineMap& map, double shift_magnitude,
                                double nuisance_fraction, std::uint64_t stream = 0);

void write_toyset(const SplitDataset& data, const std::string& path);
SplitDataset read_toyset(const std::string& path);
std::string format_toyset(const SplitDataset& data);
SplitDataset parse_toyset(const std::string& text);

}  // namespace uat::toy
