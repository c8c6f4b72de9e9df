#pragma once

#include "ebmgan/autodiff.hpp"
#include "ebmgan/fisher.hpp"
#include "ebmgan/models.hpp"
#include "ebmgan/rng.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ebmgan {

/// Training hyperparameters. Field names double as config-file keys.
struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t iterations = 5000;
  double lr_g = 2e-4;
  double lr_d = 4e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  double gamma = 0.0;         // weight of the locality term in the G loss
  double mcmc_lambda = 0.1;   // Langevin step size; scales the optional noise
  bool noise_enabled = false;
  double gp_rho = 0.0;        // probability of real-example particles
  double gp_lambda = 1.0;
  double polyak_tau = 0.999;
  std::size_t d_steps_per_g = 1;
  std::uint64_t seed = 0;

  std::size_t latent_dim = 8;
  std::size_t hidden_width = 64;
  std::size_t hidden_layers = 2;
  Activation g_activation = Activation::kRelu;
  Activation d_activation = Activation::kRelu;
  bool spectral_norm = true;

  std::size_t similarity_every = 100;  // 0 disables Fisher similarity monitoring
  std::size_t similarity_batch = 64;
  std::size_t stats_samples = 640;
  double stats_epsilon = 1e-8;
  double similarity_temperature = 10.0;
  std::size_t checkpoint_every = 0;    // 0: only the final checkpoint

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

MlpSpec generator_spec(const TrainConfig& config, std::size_t data_dim);
MlpSpec discriminator_spec(const TrainConfig& config, std::size_t data_dim);

struct AdamState {
  ParamVector m;
  ParamVector v;
  std::uint64_t step = 0;

  static AdamState zeros(const ParamLayout& layout);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam step; the denominator sqrt(v_hat) is floored at 1e-8.
void adam_update(ParamVector& params, const ParamVector& grad, AdamState& state, double lr, double beta1,
                 double beta2);

struct MetricsRecord {
  std::uint64_t iteration = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double mean_d_real = 0.0;
  double mean_d_fake = 0.0;
  double delta_g = 0.0;
  std::optional<double> fisher_similarity_train;
  std::optional<double> fisher_similarity_val;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// 1/2 mean[(d_real - 1)^2] + 1/2 mean[d_fake^2].
NodeId attach_lsgan_d_loss(Graph& graph, NodeId d_real, NodeId d_fake);
double lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake);

/// mean over rows of ||d logit / d x||^2, differentiable in the parameters.
NodeId attach_input_gradient_norm(Graph& graph, const DiscriminatorModel& d, const DiscriminatorPass& pass);

struct DStepResult {
  double loss = 0.0;
  double penalty = 0.0;  // already included in loss
  double mean_d_real = 0.0;
  double mean_d_fake = 0.0;
};

/// LSGAN discriminator update on `real` and G(z). With gp_rho > 0 the loss
/// gains (gp_rho * gp_lambda / 2) * mean ||grad_x logit(x)||^2 on real rows.
DStepResult d_step(DiscriminatorModel& d, const GeneratorModel& g, const Tensor& real, const Tensor& z,
                   const TrainConfig& config, AdamState& adam);

struct GStepResult {
  double loss = 0.0;
  double delta_g = 0.0;  // mean ||G(z) - Gbar(z)||^2 after both updates
};

/// Generator update: mean[(D(G(z)) - 1)^2] + gamma * mean ||G(z) - anchor||^2
/// with anchor = Gbar(z) - lambda * noise (noise may be null). The shadow is
/// Polyak-updated afterwards.
GStepResult g_step(GeneratorModel& g, ShadowGenerator& shadow, const DiscriminatorModel& d, const Tensor& z,
                   const Tensor* noise, const TrainConfig& config, AdamState& adam);

struct McmcCheckOptions {
  double step_size = 1.0;
  double tolerance = 1e-11;
  std::size_t max_iterations = 100000;
};

struct McmcCheckResult {
  Tensor minimizer;
  double residual = 0.0;        // ||x* - (a + lambda/2 grad(x*))||
  double one_step_error = 0.0;  // ||x* - (a + lambda/2 grad(a))||
  std::size_t iterations = 0;
};

/// Minimizes 1/2 ||x - a||^2 - (lambda/2) logit(x) row by row by gradient
/// descent, starting from the anchors a. Norms are Frobenius over the batch.
McmcCheckResult mcmc_fixed_point_check(const DiscriminatorModel& d, const Tensor& anchors, double lambda,
                                       const McmcCheckOptions& options = {});
McmcCheckResult mcmc_fixed_point_check(const DiscriminatorModel& d, const ShadowGenerator& shadow,
                                       const MlpSpec& generator, const Tensor& z, double lambda,
                                       const McmcCheckOptions& options = {});

/// Everything needed to continue a run exactly.
struct TrainState {
  DiscriminatorModel d;
  GeneratorModel g;
  ShadowGenerator shadow;
  AdamState adam_d;
  AdamState adam_g;
  std::uint64_t iteration = 0;
  Rng data_rng;
  Rng z_rng;
  Rng noise_rng;
  Rng monitor_rng;

  static TrainState initial(const TrainConfig& config, std::size_t data_dim);
  friend bool operator==(const TrainState&, const TrainState&) = default;
};

class Trainer {
public:
  Trainer(TrainConfig config, Tensor train, Tensor val);
  Trainer(TrainConfig config, Tensor train, Tensor val, TrainState state);

  /// One outer iteration: d_steps_per_g D updates, then one G update.
  MetricsRecord step();
  bool done() const { return state_.iteration >= config_.iterations; }

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }

  struct Similarities {
    double train = 0.0;
    double val = 0.0;
  };

  /// Fisher similarity of the fixed train and validation probe batches
  /// against one fresh generated batch, with statistics re-estimated from the
  /// current models. Distances are per parameter.
  Similarities monitor_similarity();

private:
  TrainConfig config_;
  Tensor train_;
  Tensor val_;
  Tensor train_probe_;
  Tensor val_probe_;
  TrainState state_;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRecord> metrics;
};

using CheckpointHook = std::function<void(const TrainState&)>;

/// Runs the configured number of iterations. `on_checkpoint` fires every
/// `checkpoint_every` iterations.
TrainResult train(const TrainConfig& config, const Tensor& train_data, const Tensor& val_data,
                  const CheckpointHook& on_checkpoint = {});

/// Continues from `state` until the configured iteration count.
TrainResult resume(const TrainConfig& config, const Tensor& train_data, const Tensor& val_data, TrainState state,
                   const CheckpointHook& on_checkpoint = {});

}  // namespace ebmgan
