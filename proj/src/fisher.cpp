#include "ebmgan/fisher.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ebmgan {

FisherStats fisher_stats_from_gradients(std::span<const Gradient> grads, const ParamLayout& layout, double epsilon) {
  require(grads.size() >= 2, "Fisher statistics need at least two samples");
  require(epsilon >= 0.0, "variance floor must be non-negative");
  const std::size_t p = layout.total_size();
  const double n = static_cast<double>(grads.size());

  FisherStats stats;
  stats.mean_grad = ParamVector(layout);
  stats.diag_info.assign(p, 0.0);
  stats.n_samples = grads.size();
  stats.epsilon = epsilon;

  auto& mean = stats.mean_grad.values;
  for (const auto& g : grads) {
    require(g.size() == p, "gradient of length {} does not match layout size {}", g.size(), p);
    for (std::size_t i = 0; i < p; ++i) mean[i] += g[i];
  }
  for (double& m : mean) m /= n;
  for (const auto& g : grads)
    for (std::size_t i = 0; i < p; ++i) {
      const double u = g[i] - mean[i];
      stats.diag_info[i] += u * u;
    }
  for (double& v : stats.diag_info) v /= n;
  return stats;
}

std::vector<Gradient> logit_param_gradients(const DiscriminatorModel& d, const Tensor& x) {
  require(x.cols() == d.spec.input_dim(), "discriminator expects {} features, got {}", d.spec.input_dim(), x.cols());
  std::vector<Gradient> out;
  out.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.push_back(logit_param_gradient(d, x.row(i)).values);
  return out;
}

FisherStats fisher_stats_estimate(const DiscriminatorModel& d, const GeneratorModel& g, std::size_t n_samples,
                                  double epsilon, std::uint64_t seed) {
  require(n_samples >= 2, "Fisher statistics need at least two samples");
  Rng rng = Rng::stream(seed, "fisher-stats");
  const Tensor fake = generator_forward(g, sample_normal(n_samples, g.latent_dim(), rng));
  const auto grads = logit_param_gradients(d, fake);
  FisherStats stats = fisher_stats_from_gradients(grads, d.params.layout, epsilon);
  stats.seed = seed;
  return stats;
}

Gradient fisher_score_from_gradient(std::span<const double> grad, const FisherStats& stats) {
  require(grad.size() == stats.size(), "gradient of length {} does not match statistics of length {}", grad.size(), stats.size());
  Gradient u(grad.begin(), grad.end());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] -= stats.mean_grad.values[i];
  return u;
}

Gradient fisher_score(const DiscriminatorModel& d, const FisherStats& stats, std::span<const double> x) {
  require(x.size() == d.spec.input_dim(), "discriminator expects {} features, got {}", d.spec.input_dim(), x.size());
  return fisher_score_from_gradient(logit_param_gradient(d, x).values, stats);
}

AdversarialFisherVector afv_normalize(std::span<const double> score, const FisherStats& stats, std::string source_id) {
  require(score.size() == stats.size(), "afv_normalize: score and statistics lengths differ");
  AdversarialFisherVector v{std::vector<double>(score.begin(), score.end()), std::move(source_id)};
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i] /= std::sqrt(stats.diag_info[i] + stats.epsilon);
  return v;
}

std::vector<AdversarialFisherVector> extract_afvs(const DiscriminatorModel& d, const FisherStats& stats,
                                                  const Tensor& x) {
  const auto grads = logit_param_gradients(d, x);
  std::vector<AdversarialFisherVector> out;
  out.reserve(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i)
    out.push_back(afv_normalize(fisher_score_from_gradient(grads[i], stats), stats, std::to_string(i)));
  return out;
}

double fisher_distance_squared(std::span<const double> vx, std::span<const double> vy) {
  require(vx.size() == vy.size(), "AFV lengths differ: {} vs {}", vx.size(), vy.size());
  double s = 0.0;
  for (std::size_t i = 0; i < vx.size(); ++i) {
    const double diff = vx[i] - vy[i];
    s += diff * diff;
  }
  return s;
}

double fisher_distance(std::span<const double> vx, std::span<const double> vy) {
  return std::sqrt(fisher_distance_squared(vx, vy));
}

namespace {

std::vector<double> mean_vector(std::span<const AdversarialFisherVector> set) {
  std::vector<double> m(set.front().values.size(), 0.0);
  for (const auto& v : set) {
    require(v.values.size() == m.size(), "AFV lengths differ within a set");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += v.values[i];
  }
  const double n = static_cast<double>(set.size());
  for (double& x : m) x /= n;
  return m;
}

}  // namespace

double set_fisher_distance(std::span<const AdversarialFisherVector> x, std::span<const AdversarialFisherVector> y) {
  require(!x.empty() && !y.empty(), "set Fisher distance needs two non-empty sets");
  return fisher_distance_squared(mean_vector(x), mean_vector(y));
}

double set_fisher_distance(const Tensor& x, const Tensor& y, const DiscriminatorModel& d, const FisherStats& stats) {
  const auto vx = extract_afvs(d, stats, x);
  const auto vy = extract_afvs(d, stats, y);
  return set_fisher_distance(vx, vy);
}

double similarity_from_distance(double distance, double temperature) {
  require(temperature > 0.0, "similarity temperature must be positive");
  return std::exp(-temperature * distance);
}

double fisher_similarity(const Tensor& x, const Tensor& y, const DiscriminatorModel& d, const FisherStats& stats,
                         double temperature, DistanceScale scale) {
  require(temperature > 0.0, "similarity temperature must be positive");
  double distance = set_fisher_distance(x, y, d, stats);
  if (scale == DistanceScale::kPerParameter) distance /= static_cast<double>(stats.size());
  return similarity_from_distance(distance, temperature);
}

}  // namespace ebmgan
