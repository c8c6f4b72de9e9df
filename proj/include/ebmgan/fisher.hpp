#pragma once

#include "ebmgan/autodiff.hpp"
#include "ebmgan/models.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ebmgan {

using Gradient = std::vector<double>;

/// Generator-sampled Fisher statistics: the mean logit gradient over
/// generated examples and the per-coordinate variance of those gradients
/// (the diagonal of the Fisher Information).
struct FisherStats {
  ParamVector mean_grad;
  std::vector<double> diag_info;
  std::size_t n_samples = 0;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::string checkpoint_id;

  std::size_t size() const { return diag_info.size(); }
  friend bool operator==(const FisherStats&, const FisherStats&) = default;
};

/// Statistics from an explicit sample of parameter gradients. The mean and
/// variance both come from this one sample.
FisherStats fisher_stats_from_gradients(std::span<const Gradient> grads, const ParamLayout& layout, double epsilon);

/// Per-example logit gradients for every row of `x`.
std::vector<Gradient> logit_param_gradients(const DiscriminatorModel& d, const Tensor& x);

/// Draws `n_samples` latents from a stream keyed by `seed`, pushes them
/// through G and gathers statistics of the logit gradients of D.
FisherStats fisher_stats_estimate(const DiscriminatorModel& d, const GeneratorModel& g, std::size_t n_samples,
                                  double epsilon, std::uint64_t seed);

/// U = grad - mean_grad.
Gradient fisher_score_from_gradient(std::span<const double> grad, const FisherStats& stats);
Gradient fisher_score(const DiscriminatorModel& d, const FisherStats& stats, std::span<const double> x);

struct AdversarialFisherVector {
  std::vector<double> values;
  std::string source_id;
};

/// V[i] = U[i] / sqrt(diag_info[i] + epsilon).
AdversarialFisherVector afv_normalize(std::span<const double> score, const FisherStats& stats,
                                      std::string source_id = {});

/// AFVs for every row of `x`, ids "0", "1", ...
std::vector<AdversarialFisherVector> extract_afvs(const DiscriminatorModel& d, const FisherStats& stats,
                                                  const Tensor& x);

/// Euclidean distance between AFVs and its square, the quadratic form
/// (U_x - U_y)^T diag(I)^-1 (U_x - U_y).
double fisher_distance(std::span<const double> vx, std::span<const double> vy);
double fisher_distance_squared(std::span<const double> vx, std::span<const double> vy);

/// Squared distance between the mean AFVs of two sets.
double set_fisher_distance(std::span<const AdversarialFisherVector> x, std::span<const AdversarialFisherVector> y);
double set_fisher_distance(const Tensor& x, const Tensor& y, const DiscriminatorModel& d, const FisherStats& stats);

enum class DistanceScale {
  kTotal,         // the plain quadratic form
  kPerParameter,  // quadratic form divided by the parameter count
};

double similarity_from_distance(double distance, double temperature);

/// exp(-temperature * set distance). With kPerParameter the distance is
/// divided by the parameter count first, which keeps the value away from
/// underflow for models with thousands of parameters.
double fisher_similarity(const Tensor& x, const Tensor& y, const DiscriminatorModel& d, const FisherStats& stats,
                         double temperature, DistanceScale scale = DistanceScale::kTotal);

}  // namespace ebmgan
