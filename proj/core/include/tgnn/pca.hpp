#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tgnn {

/// Principal component projection fitted by SVD of the centered data matrix.
/// Component rows are orthonormal and sign-fixed (largest-magnitude entry
/// positive) for determinism. Immutable after fitting.
struct PcaModel {
  std::size_t raw_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> mean;                      // raw_dim
  std::vector<double> components;                // row-major out_dim x raw_dim
  std::vector<double> explained_variance;        // eigenvalues, nonincreasing
  std::vector<double> explained_variance_ratio;  // fractions of total variance

  std::span<const double> component(std::size_t i) const {
    return {components.data() + i * raw_dim, raw_dim};
  }
};

/// Fits on an N x D row-major matrix; out_dim must not exceed min(N, D).
PcaModel pca_fit(const std::vector<double>& rows, std::size_t n, std::size_t d,
                 std::size_t out_dim);

/// components * (x - mean).
std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x);

/// Mean squared reconstruction error of the fitted matrix, normalized by
/// N - 1 so it is comparable to the discarded eigenvalue mass.
double pca_reconstruction_error(const PcaModel& model, const std::vector<double>& rows,
                                std::size_t n, std::size_t d);

void save_pca_model(const std::string& path, const PcaModel& model);
PcaModel load_pca_model(const std::string& path);

}  // namespace tgnn
