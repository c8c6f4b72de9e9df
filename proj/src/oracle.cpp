#include "ebmgan/oracle.hpp"

#include "ebmgan/errors.hpp"
#include "ebmgan/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace ebmgan::oracle {

std::array<double, 2> gaussian_fisher_score_exact(const GaussianModel& model, double x) {
  require(model.sigma > 0.0, "Gaussian sigma must be positive");
  const double s2 = model.sigma * model.sigma;
  const double d = x - model.mu;
  return {d / s2, (d * d - s2) / (s2 * model.sigma)};
}

std::array<double, 2> gaussian_fisher_information_exact(const GaussianModel& model) {
  require(model.sigma > 0.0, "Gaussian sigma must be positive");
  const double s2 = model.sigma * model.sigma;
  return {1.0 / s2, 2.0 / s2};
}

std::vector<double> gaussian_sample(const GaussianModel& model, std::size_t n, std::uint64_t seed) {
  require(model.sigma > 0.0, "Gaussian sigma must be positive");
  Rng rng = Rng::stream(seed, "gaussian-oracle");
  std::vector<double> out(n);
  for (double& x : out) x = model.mu + model.sigma * rng.normal();
  return out;
}

PolynomialFeatures::PolynomialFeatures(std::size_t dim, std::size_t degree) : dim_(dim) {
  require(dim >= 1 && degree >= 1, "polynomial features need dim >= 1 and degree >= 1");
  // Graded lexicographic: by total degree, then exponent of x0 descending.
  std::vector<unsigned> e(dim, 0);
  for (std::size_t total = 1; total <= degree; ++total) {
    std::function<void(std::size_t, unsigned)> fill = [&](std::size_t var, unsigned left) {
      if (var + 1 == dim) {
        e[var] = left;
        exponents_.push_back(e);
        return;
      }
      for (unsigned k = left + 1; k-- > 0;) {
        e[var] = k;
        fill(var + 1, left - k);
      }
    };
    fill(0, static_cast<unsigned>(total));
  }
}

std::vector<double> PolynomialFeatures::operator()(std::span<const double> x) const {
  require(x.size() == dim_, "feature map expects {} coordinates, got {}", dim_, x.size());
  std::vector<double> out;
  out.reserve(exponents_.size());
  for (const auto& e : exponents_) {
    double v = 1.0;
    for (std::size_t j = 0; j < dim_; ++j)
      for (unsigned k = 0; k < e[j]; ++k) v *= x[j];
    out.push_back(v);
  }
  return out;
}

GridEbm::GridEbm(std::vector<Point> domain, PolynomialFeatures features, std::vector<double> theta)
    : domain_(std::move(domain)), features_(std::move(features)), theta_(std::move(theta)) {
  require(!domain_.empty(), "grid EBM domain must be non-empty");
  require(theta_.size() == features_.size(), "theta has {} entries for {} features", theta_.size(), features_.size());
  {
    auto sorted = domain_;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "grid EBM domain has duplicate points");
  }

  std::vector<double> logits;
  for (const auto& x : domain_) {
    phi_.push_back(features_(x));
    logits.push_back(std::inner_product(theta_.begin(), theta_.end(), phi_.back().begin(), 0.0));
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - top);
  log_z_ = top + std::log(z);
  require(std::isfinite(log_z_), "grid EBM partition function is not finite");

  probs_.resize(domain_.size());
  cdf_.resize(domain_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < domain_.size(); ++i) {
    probs_[i] = std::exp(logits[i] - log_z_);
    acc += probs_[i];
    cdf_[i] = acc;
  }
  expected_phi_.assign(features_.size(), 0.0);
  for (std::size_t i = 0; i < domain_.size(); ++i)
    for (std::size_t k = 0; k < features_.size(); ++k) expected_phi_[k] += probs_[i] * phi_[i][k];
}

double GridEbm::logit(std::span<const double> x) const {
  const auto phi = features_(x);
  return std::inner_product(theta_.begin(), theta_.end(), phi.begin(), 0.0);
}

std::size_t GridEbm::index_of(std::span<const double> x) const {
  for (std::size_t i = 0; i < domain_.size(); ++i)
    if (std::equal(x.begin(), x.end(), domain_[i].begin(), domain_[i].end())) return i;
  throw ContractError("point is not in the grid EBM domain");
}

std::vector<double> GridEbm::fisher_score_exact(std::span<const double> x) const {
  const auto& phi = phi_[index_of(x)];
  std::vector<double> u(phi.size());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = phi[k] - expected_phi_[k];
  return u;
}

std::vector<double> GridEbm::fisher_information_diag_exact() const {
  std::vector<double> diag(features_.size(), 0.0);
  for (std::size_t i = 0; i < domain_.size(); ++i)
    for (std::size_t k = 0; k < diag.size(); ++k) {
      const double u = phi_[i][k] - expected_phi_[k];
      diag[k] += probs_[i] * u * u;
    }
  return diag;
}

std::vector<double> GridEbm::fisher_information_exact() const {
  const std::size_t p = features_.size();
  std::vector<double> info(p * p, 0.0);
  for (std::size_t i = 0; i < domain_.size(); ++i)
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b)
        info[a * p + b] += probs_[i] * (phi_[i][a] - expected_phi_[a]) * (phi_[i][b] - expected_phi_[b]);
  return info;
}

std::vector<std::size_t> GridEbm::sample_indices(std::size_t n, std::uint64_t seed) const {
  require(n >= 1, "sample count must be at least 1");
  Rng rng = Rng::stream(seed, "grid-ebm");
  std::vector<std::size_t> out(n);
  const double total = cdf_.back();
  for (auto& idx : out) {
    const double u = rng.uniform() * total;
    idx = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    idx = std::min(idx, domain_.size() - 1);
  }
  return out;
}

std::vector<Point> GridEbm::sample_exact(std::size_t n, std::uint64_t seed) const {
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i : sample_indices(n, seed)) out.push_back(domain_[i]);
  return out;
}

std::vector<Point> grid_1d(std::size_t n, double lo, double hi) {
  require(n >= 2, "grid needs at least two points");
  std::vector<Point> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1)});
  return out;
}

std::vector<Point> grid_2d(std::size_t nx, std::size_t ny, double lo, double hi) {
  const auto xs = grid_1d(nx, lo, hi);
  const auto ys = grid_1d(ny, lo, hi);
  std::vector<Point> out;
  for (const auto& x : xs)
    for (const auto& y : ys) out.push_back({x[0], y[0]});
  return out;
}

}  // namespace ebmgan::oracle
