#include "ebmgan/errors.hpp"
#include "ebmgan/io.hpp"
#include "ebmgan/training.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ebmgan;
using ebmgan::testing::random_tensor;

namespace {

// D(x) = sigmoid(w . x) through an identity hidden layer, no spectral normalization.
DiscriminatorModel linear_discriminator(double w0, double w1) {
  DiscriminatorModel d;
  d.spec = MlpSpec{{2, 2, 1}, {Activation::kIdentity}, Activation::kSigmoid};
  d.params = ParamVector(d.spec.layout("d"));
  d.spectral_enabled = false;
  d.spectral_u = {{1.0, 0.0}, {1.0, 0.0}};
  d.params.slot(0)[0] = 1.0;
  d.params.slot(0)[3] = 1.0;
  d.params.slot(2)[0] = w0;
  d.params.slot(2)[1] = w1;
  return d;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.batch_size = 16;
  c.iterations = 20;
  c.hidden_width = 8;
  c.latent_dim = 2;
  c.similarity_every = 5;
  c.similarity_batch = 16;
  c.stats_samples = 32;
  return c;
}

Dataset moons(std::size_t n, std::uint64_t seed) { return gen_dataset("two-moons", n, 0.1, seed); }

}  // namespace

TEST(TrainConfig, ValidateNamesTheOffendingKey) {
  TrainConfig c;
  c.lr_g = 0.0;
  try {
    c.validate();
    FAIL() << "expected a contract error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("lr_g"), std::string::npos);
  }
  c = TrainConfig{};
  c.gp_rho = 1.5;
  EXPECT_THROW(c.validate(), ContractError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = TrainConfig{};
  c.gamma = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
  c = TrainConfig{};
  c.mcmc_lambda = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(LsganLoss, MatchesHandArithmetic) {
  const Tensor real({4}, 0.8), fake({4}, 0.3);
  EXPECT_NEAR(lsgan_d_loss(real, fake), 0.065, 1e-15);
}

TEST(LsganLoss, PerfectDiscriminatorHasZeroLoss) {
  EXPECT_EQ(lsgan_d_loss(Tensor({3}, 1.0), Tensor({3}, 0.0)), 0.0);
}

TEST(GradientPenalty, LinearDiscriminatorGivesSquaredWeightNorm) {
  const auto d = linear_discriminator(3.0, 4.0);
  Rng rng(1);
  Graph g;
  const auto pass = attach_discriminator(g, d, g.constant(random_tensor({5, 2}, rng, 10.0)), true);
  EXPECT_NEAR(g.value(attach_input_gradient_norm(g, d, pass)).item(), 25.0, 1e-12);
}

TEST(GradientPenalty, DStepPenaltyIsHalfRhoLambdaTimesNormSquared) {
  auto d = linear_discriminator(3.0, 4.0);
  Rng rng(2);
  auto gen = GeneratorModel::create(make_mlp_spec(2, 4, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  TrainConfig config;
  config.gp_rho = 0.5;
  config.gp_lambda = 2.0;
  AdamState adam = AdamState::zeros(d.params.layout);
  const auto res = d_step(d, gen, random_tensor({8, 2}, rng), random_tensor({8, 2}, rng), config, adam);
  EXPECT_NEAR(res.penalty, 0.5 * 0.5 * 2.0 * 25.0, 1e-12);
}

TEST(GradientPenalty, PenaltyGradientMatchesFiniteDifferences) {
  Rng rng(3);
  const auto d = [&] {
    auto m = DiscriminatorModel::create(make_mlp_spec(2, 5, 2, 1, Activation::kTanh, Activation::kSigmoid), true, rng);
    m.update_spectral_state(10);
    return m;
  }();
  const Tensor x = random_tensor({4, 2}, rng);
  const ScalarProgram f = [&](Graph& g, std::span<const NodeId> p) {
    const auto pass = attach_discriminator(g, d, g.constant(x), p);
    return attach_input_gradient_norm(g, d, pass);
  };
  // Spectral sigmas are treated as constants, so compare against a model
  // evaluated with the same sigmas.
  EXPECT_LT(finite_diff_check(f, d.params, 1e-5), 1e-6);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamLayout layout;
  layout.append("p", {3});
  ParamVector p(layout, {1.0, -2.0, 0.5});
  const ParamVector g(layout, {1.0, 1.0, 1.0});
  AdamState s = AdamState::zeros(layout);
  adam_update(p, g, s, 0.01, 0.0, 0.999);
  EXPECT_EQ(s.step, 1u);
  EXPECT_DOUBLE_EQ(p.values[0], 1.0 - 0.01);
  EXPECT_DOUBLE_EQ(p.values[1], -2.0 - 0.01);
  EXPECT_DOUBLE_EQ(s.m.values[0], 1.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamLayout layout;
  layout.append("p", {2});
  ParamVector p(layout, {1.0, -2.0});
  AdamState s = AdamState::zeros(layout);
  for (int i = 0; i < 3; ++i) adam_update(p, ParamVector(layout), s, 0.1, 0.5, 0.999);
  EXPECT_EQ(p.values, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, LayoutMismatchIsRejected) {
  ParamLayout a, b;
  a.append("p", {2});
  b.append("q", {2});
  ParamVector p(a);
  AdamState s = AdamState::zeros(a);
  EXPECT_THROW(adam_update(p, ParamVector(b), s, 0.1, 0.0, 0.999), ContractError);
}

TEST(GStep, GammaZeroMatchesPlainLsganReference) {
  Rng rng(4);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 8, 2, 1, Activation::kRelu, Activation::kSigmoid), true, rng);
  d.update_spectral_state(1);
  auto g = GeneratorModel::create(make_mlp_spec(3, 8, 2, 2, Activation::kRelu, Activation::kIdentity), rng);
  auto shadow = ShadowGenerator::from(g, 0.9);
  for (double& v : shadow.params.values) v += 0.01 * rng.normal();
  const Tensor z = random_tensor({16, 3}, rng);
  TrainConfig config;
  config.gamma = 0.0;

  // Reference: plain least-squares generator loss and one Adam step.
  GeneratorModel ref_g = g;
  ShadowGenerator ref_shadow = shadow;
  AdamState ref_adam = AdamState::zeros(g.params.layout);
  Graph graph;
  const auto leaves = bind_params(graph, ref_g.params);
  const NodeId fake = attach_mlp(graph, ref_g.spec, leaves, graph.constant(z)).output;
  const NodeId out = attach_discriminator(graph, d, fake, false).nodes.output;
  const NodeId loss = graph.mean(graph.square(graph.add_scalar(out, -1.0)));
  const double ref_loss = graph.value(loss).item();
  adam_update(ref_g.params, flatten_grads(graph.backward(loss), leaves, ref_g.params.layout), ref_adam,
              config.lr_g, config.adam_beta1, config.adam_beta2);
  polyak_update(ref_shadow, ref_g);

  AdamState adam = AdamState::zeros(g.params.layout);
  const auto res = g_step(g, shadow, d, z, nullptr, config, adam);
  EXPECT_EQ(res.loss, ref_loss);
  EXPECT_EQ(g.params, ref_g.params);
  EXPECT_EQ(shadow.params, ref_shadow.params);
}

TEST(GStep, ShadowEqualsLiveAndSaturatedDiscriminatorGiveZeroLoss) {
  Rng rng(5);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 4, 1, 1, Activation::kRelu, Activation::kSigmoid), false, rng);
  d.params.slot(3)[0] = 1000.0;  // output bias: sigmoid saturates at exactly 1
  for (double& w : d.params.slot(2)) w = 0.0;
  auto g = GeneratorModel::create(make_mlp_spec(3, 4, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  auto shadow = ShadowGenerator::from(g, 0.999);
  TrainConfig config;
  config.gamma = 1.0;
  AdamState adam = AdamState::zeros(g.params.layout);
  EXPECT_EQ(g_step(g, shadow, d, random_tensor({8, 3}, rng), nullptr, config, adam).loss, 0.0);
}

TEST(GStep, DeltaGIsMeasuredAfterBothUpdates) {
  Rng rng(6);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 8, 1, 1, Activation::kRelu, Activation::kSigmoid), true, rng);
  auto g = GeneratorModel::create(make_mlp_spec(3, 8, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  auto shadow = ShadowGenerator::from(g, 0.5);
  const Tensor z = random_tensor({8, 3}, rng);
  TrainConfig config;
  AdamState adam = AdamState::zeros(g.params.layout);
  const auto res = g_step(g, shadow, d, z, nullptr, config, adam);
  const Tensor a = generator_forward(g, z), b = generate(g.spec, shadow.params, z);
  double expected = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) expected += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(res.delta_g, expected / 8.0, 1e-15);
  EXPECT_GE(res.delta_g, 0.0);
}

TEST(GStep, NoiseShiftsTheAnchor) {
  Rng rng(7);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 4, 1, 1, Activation::kRelu, Activation::kSigmoid), true, rng);
  auto g = GeneratorModel::create(make_mlp_spec(3, 4, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  const Tensor z = random_tensor({4, 3}, rng);
  const Tensor noise({4, 2}, 1.0);
  TrainConfig config;
  config.gamma = 2.0;
  config.mcmc_lambda = 0.1;
  auto g1 = g, g2 = g;
  auto s1 = ShadowGenerator::from(g, 0.9), s2 = s1;
  AdamState a1 = AdamState::zeros(g.params.layout), a2 = a1;
  const double plain = g_step(g1, s1, d, z, nullptr, config, a1).loss;
  const double noisy = g_step(g2, s2, d, z, &noise, config, a2).loss;
  // The anchor moves by -lambda * 1 per coordinate: locality = 2 coords * 0.01.
  EXPECT_NEAR(noisy - plain, config.gamma * 2.0 * 0.01, 1e-12);
}

TEST(McmcFixedPoint, LinearLogitHasClosedForm) {
  const auto d = linear_discriminator(3.0, -4.0);
  Rng rng(8);
  const Tensor anchors = random_tensor({5, 2}, rng);
  const double lambda = 0.1;
  const auto res = mcmc_fixed_point_check(d, anchors, lambda);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(res.minimizer.at(i, 0), anchors.at(i, 0) + 0.5 * lambda * 3.0, 1e-12);
    EXPECT_NEAR(res.minimizer.at(i, 1), anchors.at(i, 1) - 0.5 * lambda * 4.0, 1e-12);
  }
  EXPECT_LT(res.residual, 1e-8);
}

TEST(McmcFixedPoint, ZeroLambdaReturnsTheAnchor) {
  Rng rng(9);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 8, 2, 1, Activation::kTanh, Activation::kSigmoid), true, rng);
  d.update_spectral_state(5);
  const Tensor anchors = random_tensor({4, 2}, rng);
  const auto res = mcmc_fixed_point_check(d, anchors, 0.0);
  EXPECT_EQ(res.minimizer, anchors);
  EXPECT_EQ(res.residual, 0.0);
}

TEST(McmcFixedPoint, ShadowOverloadUsesGeneratedAnchors) {
  Rng rng(10);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 8, 2, 1, Activation::kTanh, Activation::kSigmoid), true, rng);
  d.update_spectral_state(5);
  auto g = GeneratorModel::create(make_mlp_spec(3, 8, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  const auto shadow = ShadowGenerator::from(g, 0.999);
  const Tensor z = random_tensor({4, 3}, rng);
  const auto a = mcmc_fixed_point_check(d, shadow, g.spec, z, 0.05);
  const auto b = mcmc_fixed_point_check(d, generate(g.spec, shadow.params, z), 0.05);
  EXPECT_EQ(a.minimizer, b.minimizer);
  EXPECT_LT(a.residual, 1e-8);
}

TEST(McmcFixedPoint, IterationBudgetExhaustionIsAnError) {
  Rng rng(11);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 8, 2, 1, Activation::kTanh, Activation::kSigmoid), true, rng);
  McmcCheckOptions opts;
  opts.max_iterations = 1;
  opts.tolerance = 0.0;
  EXPECT_THROW(mcmc_fixed_point_check(d, random_tensor({2, 2}, rng), 0.1, opts), NumericalError);
}

TEST(Train, ZeroIterationsKeepsTheInitialization) {
  TrainConfig c = tiny_config();
  c.iterations = 0;
  const Dataset data = moons(200, 1);
  const TrainResult r = train(c, data.features, data.features);
  EXPECT_TRUE(r.metrics.empty());
  EXPECT_EQ(r.state, TrainState::initial(c, 2));
}

TEST(Train, SameSeedGivesIdenticalMetrics) {
  const TrainConfig c = tiny_config();
  const auto [tr, va] = split_dataset(moons(300, 2), 0.8, c.seed);
  const TrainResult a = train(c, tr.features, va.features);
  const TrainResult b = train(c, tr.features, va.features);
  ASSERT_EQ(a.metrics.size(), c.iterations);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.state, b.state);
}

TEST(Train, DifferentSeedsDiverge) {
  TrainConfig c = tiny_config();
  const auto data = moons(300, 2);
  const TrainResult a = train(c, data.features, data.features);
  c.seed = 1;
  const TrainResult b = train(c, data.features, data.features);
  EXPECT_NE(a.metrics.back().d_loss, b.metrics.back().d_loss);
}

TEST(Train, RecordsHaveValidRanges) {
  TrainConfig c = tiny_config();
  c.d_activation = Activation::kTanh;
  const auto data = moons(300, 3);
  const TrainResult r = train(c, data.features, data.features);
  for (const auto& m : r.metrics) {
    EXPECT_GE(m.delta_g, 0.0);
    EXPECT_TRUE(std::isfinite(m.d_loss) && std::isfinite(m.g_loss));
    const bool cadence = m.iteration % c.similarity_every == 0;
    EXPECT_EQ(m.fisher_similarity_train.has_value(), cadence);
    if (cadence) {
      EXPECT_GT(*m.fisher_similarity_val, 0.0);
      EXPECT_LE(*m.fisher_similarity_val, 1.0);
      EXPECT_GT(*m.fisher_similarity_train, 0.0);
      EXPECT_LE(*m.fisher_similarity_train, 1.0);
    }
  }
}

TEST(Train, ResumeReproducesTheUninterruptedRun) {
  TrainConfig c = tiny_config();
  const auto data = moons(300, 4);
  const TrainResult full = train(c, data.features, data.features);
  TrainConfig half = c;
  half.iterations = 8;
  const TrainResult first = train(half, data.features, data.features);
  const TrainResult rest = resume(c, data.features, data.features, first.state);
  auto joined = first.metrics;
  joined.insert(joined.end(), rest.metrics.begin(), rest.metrics.end());
  EXPECT_EQ(joined, full.metrics);
  EXPECT_EQ(rest.state, full.state);
}

TEST(Train, CheckpointHookFiresOnCadence) {
  TrainConfig c = tiny_config();
  c.checkpoint_every = 6;
  const auto data = moons(200, 5);
  std::vector<std::uint64_t> seen;
  train(c, data.features, data.features, [&](const TrainState& s) { seen.push_back(s.iteration); });
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{6, 12, 18}));
}

TEST(Train, DivergenceAbortsWithIterationContext) {
  TrainConfig c = tiny_config();
  c.lr_d = 1e300;
  c.lr_g = 1e300;
  c.spectral_norm = false;
  const auto data = moons(200, 6);
  try {
    train(c, data.features, data.features);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
}

TEST(Train, LargerGammaKeepsUpdatesMoreLocal) {
  TrainConfig c = tiny_config();
  c.iterations = 100;
  c.similarity_every = 0;
  c.batch_size = 32;
  const auto data = moons(500, 7);
  std::vector<double> mean_delta;
  for (double gamma : {0.0, 1.0, 10.0}) {
    c.gamma = gamma;
    const auto r = train(c, data.features, data.features);
    double s = 0.0;
    for (const auto& m : r.metrics) s += m.delta_g;
    mean_delta.push_back(s / static_cast<double>(r.metrics.size()));
  }
  EXPECT_GE(mean_delta[0], mean_delta[1]);
  EXPECT_GE(mean_delta[1], mean_delta[2]);
}

TEST(Train, DefaultTwoMoonsRunReachesANonDegenerateEquilibrium) {
  // Statistical check with the seed pinned.
  TrainConfig c;
  const auto [tr, va] = split_dataset(gen_dataset("two-moons", 2000, 0.1, 0), 0.8, c.seed);
  c.similarity_every = 0;
  const auto r = train(c, tr.features, va.features);
  double real = 0.0, fake = 0.0;
  const std::size_t window = 100;
  for (std::size_t i = r.metrics.size() - window; i < r.metrics.size(); ++i) {
    real += r.metrics[i].mean_d_real;
    fake += r.metrics[i].mean_d_fake;
  }
  real /= window;
  fake /= window;
  EXPECT_GE(real, 0.3);
  EXPECT_LE(real, 0.7);
  EXPECT_GE(fake, 0.3);
  EXPECT_LE(fake, 0.7);
}
