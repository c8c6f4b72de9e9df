#pragma once

#include "ebmgan/autodiff.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ebmgan::oracle {

/// N(mu, sigma), parameterized by the standard deviation.
struct GaussianModel {
  double mu = 0.0;
  double sigma = 1.0;
};

/// (d/dmu, d/dsigma) of log N(x; mu, sigma).
std::array<double, 2> gaussian_fisher_score_exact(const GaussianModel& model, double x);

/// Diagonal of the Fisher Information: (1/sigma^2, 2/sigma^2).
std::array<double, 2> gaussian_fisher_information_exact(const GaussianModel& model);

std::vector<double> gaussian_sample(const GaussianModel& model, std::size_t n, std::uint64_t seed);

using Point = std::vector<double>;

/// All monomials of total degree 1..degree in `dim` variables, in graded
/// lexicographic order. For dim 2, degree 2: x, y, x^2, xy, y^2.
class PolynomialFeatures {
public:
  PolynomialFeatures(std::size_t dim, std::size_t degree);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return exponents_.size(); }
  std::vector<double> operator()(std::span<const double> x) const;

private:
  std::size_t dim_;
  std::vector<std::vector<unsigned>> exponents_;
};

/// Energy model D(x; theta) = theta . phi(x) on a finite domain, where the
/// partition function is an exact sum.
class GridEbm {
public:
  GridEbm(std::vector<Point> domain, PolynomialFeatures features, std::vector<double> theta);

  const std::vector<Point>& domain() const { return domain_; }
  const PolynomialFeatures& features() const { return features_; }
  const std::vector<double>& theta() const { return theta_; }
  std::size_t num_params() const { return theta_.size(); }

  double logit(std::span<const double> x) const;
  const std::vector<double>& probabilities() const { return probs_; }
  double log_partition() const { return log_z_; }

  /// grad_theta D(x) = phi(x).
  std::vector<double> param_gradient(std::span<const double> x) const { return features_(x); }

  /// E_p[phi], the exact second term of the Fisher Score.
  const std::vector<double>& expected_gradient() const { return expected_phi_; }

  std::size_t index_of(std::span<const double> x) const;

  /// phi(x) - E_p[phi]; x must be a domain point.
  std::vector<double> fisher_score_exact(std::span<const double> x) const;

  /// Var_p[phi_i], the diagonal of the Fisher Information.
  std::vector<double> fisher_information_diag_exact() const;

  /// Full matrix E_p[U U^T], row-major.
  std::vector<double> fisher_information_exact() const;

  /// Inverse-CDF sampling over the enumerated domain; returns domain indices.
  std::vector<std::size_t> sample_indices(std::size_t n, std::uint64_t seed) const;
  std::vector<Point> sample_exact(std::size_t n, std::uint64_t seed) const;

private:
  std::vector<Point> domain_;
  PolynomialFeatures features_;
  std::vector<double> theta_;
  std::vector<std::vector<double>> phi_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
  std::vector<double> expected_phi_;
  double log_z_ = 0.0;
};

/// n evenly spaced points on [lo, hi].
std::vector<Point> grid_1d(std::size_t n, double lo, double hi);
/// nx * ny points on [lo, hi]^2, x-major.
std::vector<Point> grid_2d(std::size_t nx, std::size_t ny, double lo, double hi);

}  // namespace ebmgan::oracle
