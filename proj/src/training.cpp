#include "ebmgan/training.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ebmgan {

namespace {

std::string batch_summary(const Tensor& x) {
  double lo = x[0], hi = x[0], sum = 0.0;
  for (double v : x.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  return fmt::format("rows={} min={:.6g} max={:.6g} mean={:.6g}", x.rows(), lo, hi, sum / x.numel());
}

Tensor gather_rows(const Tensor& data, std::span<const std::size_t> idx) {
  Tensor out({idx.size(), data.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i) std::ranges::copy(data.row(idx[i]), out.row(i).begin());
  return out;
}

Tensor leading_rows(const Tensor& data, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, data.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather_rows(data, idx);
}

double mean_sq_row_distance(const Tensor& a, const Tensor& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ra = a.row(i), rb = b.row(i);
    for (std::size_t j = 0; j < ra.size(); ++j) total += (ra[j] - rb[j]) * (ra[j] - rb[j]);
  }
  return total / static_cast<double>(a.rows());
}

double frobenius(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

void TrainConfig::validate() const {
  auto check = [](bool ok, const char* key, const std::string& what) {
    if (!ok) throw ContractError(fmt::format("config key '{}' {}", key, what));
  };
  check(batch_size > 0, "batch_size", "must be positive");
  check(lr_g > 0.0, "lr_g", "must be positive");
  check(lr_d > 0.0, "lr_d", "must be positive");
  check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  check(gamma >= 0.0, "gamma", "must be non-negative");
  check(mcmc_lambda > 0.0, "mcmc_lambda", "must be positive");
  check(gp_rho >= 0.0 && gp_rho <= 1.0, "gp_rho", "must lie in [0, 1]");
  check(gp_lambda >= 0.0, "gp_lambda", "must be non-negative");
  check(polyak_tau >= 0.0 && polyak_tau <= 1.0, "polyak_tau", "must lie in [0, 1]");
  check(d_steps_per_g >= 1, "d_steps_per_g", "must be at least 1");
  check(latent_dim > 0, "latent_dim", "must be positive");
  check(hidden_width > 0, "hidden_width", "must be positive");
  check(hidden_layers > 0, "hidden_layers", "must be positive");
  check(similarity_batch > 0, "similarity_batch", "must be positive");
  check(stats_samples >= 2, "stats_samples", "must be at least 2");
  check(stats_epsilon >= 0.0, "stats_epsilon", "must be non-negative");
  check(similarity_temperature > 0.0, "similarity_temperature", "must be positive");
}

MlpSpec generator_spec(const TrainConfig& config, std::size_t data_dim) {
  return make_mlp_spec(config.latent_dim, config.hidden_width, config.hidden_layers, data_dim, config.g_activation,
                       Activation::kIdentity);
}

MlpSpec discriminator_spec(const TrainConfig& config, std::size_t data_dim) {
  return make_mlp_spec(data_dim, config.hidden_width, config.hidden_layers, 1, config.d_activation,
                       Activation::kSigmoid);
}

AdamState AdamState::zeros(const ParamLayout& layout) { return AdamState{ParamVector(layout), ParamVector(layout), 0}; }

void adam_update(ParamVector& params, const ParamVector& grad, AdamState& state, double lr, double beta1,
                 double beta2) {
  require(params.layout == grad.layout && params.layout == state.m.layout && params.layout == state.v.layout,
          "adam_update: parameter, gradient and moment layouts differ");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad.values[i];
    double& m = state.m.values[i];
    double& v = state.v.values[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params.values[i] -= lr * m_hat / std::max(std::sqrt(v_hat), 1e-8);
  }
}

NodeId attach_lsgan_d_loss(Graph& graph, NodeId d_real, NodeId d_fake) {
  const NodeId real_term = graph.mean(graph.square(graph.add_scalar(d_real, -1.0)));
  const NodeId fake_term = graph.mean(graph.square(d_fake));
  return graph.add(graph.scale(real_term, 0.5), graph.scale(fake_term, 0.5));
}

double lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake) {
  Graph g;
  return g.value(attach_lsgan_d_loss(g, g.constant(d_real), g.constant(d_fake))).item();
}

NodeId attach_input_gradient_norm(Graph& graph, const DiscriminatorModel& d, const DiscriminatorPass& pass) {
  const NodeId grad_x = attach_logit_input_gradient(graph, d, pass);
  const double rows = static_cast<double>(graph.value(grad_x).rows());
  return graph.scale(graph.sum(graph.square(grad_x)), 1.0 / rows);
}

DStepResult d_step(DiscriminatorModel& d, const GeneratorModel& g, const Tensor& real, const Tensor& z,
                   const TrainConfig& config, AdamState& adam) {
  require(real.rows() > 0, "d_step: empty real batch");
  require(real.cols() == d.spec.input_dim(), "d_step: real batch has {} columns, discriminator expects {}", real.cols(), d.spec.input_dim());
  d.update_spectral_state(1);
  const Tensor fake = generator_forward(g, z);

  Graph graph;
  const auto params = bind_params(graph, d.params);
  const auto real_pass = attach_discriminator(graph, d, graph.constant(real), params);
  const auto fake_pass = attach_discriminator(graph, d, graph.constant(fake), params);
  NodeId loss = attach_lsgan_d_loss(graph, real_pass.nodes.output, fake_pass.nodes.output);

  DStepResult result;
  if (config.gp_rho > 0.0) {
    const NodeId penalty =
        graph.scale(attach_input_gradient_norm(graph, d, real_pass), 0.5 * config.gp_rho * config.gp_lambda);
    result.penalty = graph.value(penalty).item();
    loss = graph.add(loss, penalty);
  }
  result.loss = graph.value(loss).item();
  result.mean_d_real = kernels::mean(graph.value(real_pass.nodes.output));
  result.mean_d_fake = kernels::mean(graph.value(fake_pass.nodes.output));
  if (!std::isfinite(result.loss))
    throw NumericalError(fmt::format("discriminator loss is not finite (real batch {}; fake batch {})",
                                     batch_summary(real), batch_summary(fake)));

  const ParamVector grad = flatten_grads(graph.backward(loss), params, d.params.layout);
  adam_update(d.params, grad, adam, config.lr_d, config.adam_beta1, config.adam_beta2);
  return result;
}

GStepResult g_step(GeneratorModel& g, ShadowGenerator& shadow, const DiscriminatorModel& d, const Tensor& z,
                   const Tensor* noise, const TrainConfig& config, AdamState& adam) {
  require(shadow.params.layout == g.params.layout, "g_step: shadow and generator layouts differ");
  require(z.cols() == g.latent_dim(), "g_step: z has {} columns, generator expects {}", z.cols(),
                                                  g.latent_dim());
  Tensor anchor = generate(g.spec, shadow.params, z);
  if (noise != nullptr) {
    require(noise->shape() == anchor.shape(), "g_step: noise shape does not match generated batch");
    anchor = kernels::sub(anchor, kernels::scale(*noise, config.mcmc_lambda));
  }

  Graph graph;
  const auto params = bind_params(graph, g.params);
  const NodeId fake = attach_mlp(graph, g.spec, params, graph.constant(z)).output;
  const auto pass = attach_discriminator(graph, d, fake, false);
  const NodeId adversarial = graph.mean(graph.square(graph.add_scalar(pass.nodes.output, -1.0)));
  const NodeId locality = graph.scale(graph.sum(graph.square(graph.sub(fake, graph.constant(anchor)))),
                                      1.0 / static_cast<double>(z.rows()));
  const NodeId loss = graph.add(adversarial, graph.scale(locality, config.gamma));

  GStepResult result;
  result.loss = graph.value(loss).item();
  if (!std::isfinite(result.loss))
    throw NumericalError(fmt::format("generator loss is not finite (generated batch {})",
                                     batch_summary(graph.value(fake))));

  const ParamVector grad = flatten_grads(graph.backward(loss), params, g.params.layout);
  adam_update(g.params, grad, adam, config.lr_g, config.adam_beta1, config.adam_beta2);
  polyak_update(shadow, g);
  result.delta_g = mean_sq_row_distance(generator_forward(g, z), generate(g.spec, shadow.params, z));
  return result;
}

McmcCheckResult mcmc_fixed_point_check(const DiscriminatorModel& d, const Tensor& anchors, double lambda,
                                       const McmcCheckOptions& options) {
  require(lambda >= 0.0, "mcmc_fixed_point_check: lambda must be non-negative");
  require(anchors.cols() == d.spec.input_dim(), "mcmc_fixed_point_check: anchor dimension does not match D");
  const double half = 0.5 * lambda;
  Tensor x = anchors;
  McmcCheckResult result;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    // Gradient of the objective: (x - a) - (lambda/2) grad logit(x).
    const Tensor step = kernels::sub(kernels::sub(x, anchors), kernels::scale(logit_input_gradient(d, x), half));
    if (!step.all_finite()) throw NumericalError("mcmc_fixed_point_check: non-finite gradient");
    if (frobenius(step) < options.tolerance) {
      result.iterations = it;
      const Tensor fixed = kernels::add(anchors, kernels::scale(logit_input_gradient(d, x), half));
      const Tensor one_step = kernels::add(anchors, kernels::scale(logit_input_gradient(d, anchors), half));
      result.residual = frobenius(kernels::sub(x, fixed));
      result.one_step_error = frobenius(kernels::sub(x, one_step));
      result.minimizer = std::move(x);
      return result;
    }
    x = kernels::sub(x, kernels::scale(step, options.step_size));
  }
  throw NumericalError(
      fmt::format("mcmc_fixed_point_check: no convergence within {} iterations", options.max_iterations));
}

McmcCheckResult mcmc_fixed_point_check(const DiscriminatorModel& d, const ShadowGenerator& shadow,
                                       const MlpSpec& generator, const Tensor& z, double lambda,
                                       const McmcCheckOptions& options) {
  return mcmc_fixed_point_check(d, generate(generator, shadow.params, z), lambda, options);
}

TrainState TrainState::initial(const TrainConfig& config, std::size_t data_dim) {
  config.validate();
  Rng init = Rng::stream(config.seed, "init");
  TrainState s;
  s.g = GeneratorModel::create(generator_spec(config, data_dim), init);
  s.d = DiscriminatorModel::create(discriminator_spec(config, data_dim), config.spectral_norm, init);
  s.shadow = ShadowGenerator::from(s.g, config.polyak_tau);
  s.adam_d = AdamState::zeros(s.d.params.layout);
  s.adam_g = AdamState::zeros(s.g.params.layout);
  s.data_rng = Rng::stream(config.seed, "data");
  s.z_rng = Rng::stream(config.seed, "z");
  s.noise_rng = Rng::stream(config.seed, "noise");
  s.monitor_rng = Rng::stream(config.seed, "monitor");
  return s;
}

Trainer::Trainer(TrainConfig config, Tensor train, Tensor val)
    : Trainer(config, train, std::move(val), TrainState::initial(config, train.cols())) {}

Trainer::Trainer(TrainConfig config, Tensor train, Tensor val, TrainState state)
    : config_(std::move(config)), train_(std::move(train)), val_(std::move(val)), state_(std::move(state)) {
  config_.validate();
  require(train_.rows() > 0, "training dataset is empty");
  require(train_.cols() == state_.d.spec.input_dim(), "training data dimension does not match the models");
  require(val_.rows() > 0, "validation dataset is empty");
  require(val_.cols() == train_.cols(), "validation data dimension differs from training data");
  train_probe_ = leading_rows(train_, config_.similarity_batch);
  val_probe_ = leading_rows(val_, config_.similarity_batch);
}

Trainer::Similarities Trainer::monitor_similarity() {
  const std::uint64_t stats_seed = state_.monitor_rng.next_u64();
  const FisherStats stats =
      fisher_stats_estimate(state_.d, state_.g, config_.stats_samples, config_.stats_epsilon, stats_seed);
  const Tensor fake =
      generator_forward(state_.g, sample_normal(config_.similarity_batch, state_.g.latent_dim(), state_.monitor_rng));
  const auto fake_afvs = extract_afvs(state_.d, stats, fake);
  const double per_param = 1.0 / static_cast<double>(stats.size());
  auto similarity = [&](const Tensor& rows) {
    const double distance = set_fisher_distance(extract_afvs(state_.d, stats, rows), fake_afvs);
    return similarity_from_distance(distance * per_param, config_.similarity_temperature);
  };
  return {similarity(train_probe_), similarity(val_probe_)};
}

MetricsRecord Trainer::step() {
  require(!done(), "training already reached the configured iteration count");
  const std::uint64_t it = state_.iteration + 1;
  MetricsRecord rec;
  rec.iteration = it;
  try {
    DStepResult dres;
    for (std::size_t k = 0; k < config_.d_steps_per_g; ++k) {
      std::vector<std::size_t> idx(config_.batch_size);
      for (auto& i : idx) i = state_.data_rng.below(train_.rows());
      const Tensor real = gather_rows(train_, idx);
      const Tensor z = sample_normal(config_.batch_size, state_.g.latent_dim(), state_.z_rng);
      dres = d_step(state_.d, state_.g, real, z, config_, state_.adam_d);
    }
    const Tensor z = sample_normal(config_.batch_size, state_.g.latent_dim(), state_.z_rng);
    std::optional<Tensor> noise;
    if (config_.noise_enabled) noise = sample_normal(config_.batch_size, state_.d.spec.input_dim(), state_.noise_rng);
    const GStepResult gres =
        g_step(state_.g, state_.shadow, state_.d, z, noise ? &*noise : nullptr, config_, state_.adam_g);

    rec.d_loss = dres.loss;
    rec.mean_d_real = dres.mean_d_real;
    rec.mean_d_fake = dres.mean_d_fake;
    rec.g_loss = gres.loss;
    rec.delta_g = gres.delta_g;
  } catch (const NumericalError& e) {
    throw NumericalError(fmt::format("iteration {}: {}", it, e.what()));
  }
  state_.iteration = it;

  if (config_.similarity_every > 0 && it % config_.similarity_every == 0) {
    const auto sims = monitor_similarity();
    rec.fisher_similarity_train = sims.train;
    rec.fisher_similarity_val = sims.val;
  }
  return rec;
}

TrainResult resume(const TrainConfig& config, const Tensor& train_data, const Tensor& val_data, TrainState state,
                   const CheckpointHook& on_checkpoint) {
  Trainer trainer(config, train_data, val_data, std::move(state));
  TrainResult result;
  while (!trainer.done()) {
    result.metrics.push_back(trainer.step());
    if (on_checkpoint && config.checkpoint_every > 0 && trainer.state().iteration % config.checkpoint_every == 0)
      on_checkpoint(trainer.state());
  }
  result.state = trainer.state();
  return result;
}

TrainResult train(const TrainConfig& config, const Tensor& train_data, const Tensor& val_data,
                  const CheckpointHook& on_checkpoint) {
  return resume(config, train_data, val_data, TrainState::initial(config, train_data.cols()), on_checkpoint);
}

}  // namespace ebmgan
