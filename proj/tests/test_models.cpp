#include "ebmgan/errors.hpp"
#include "ebmgan/models.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ebmgan;
using ebmgan::testing::jacobi_singular_values;
using ebmgan::testing::random_tensor;

namespace {

DiscriminatorModel small_discriminator(std::uint64_t seed, Activation act = Activation::kTanh, bool spectral = true) {
  Rng rng(seed);
  auto d = DiscriminatorModel::create(make_mlp_spec(2, 8, 2, 1, act, Activation::kSigmoid), spectral, rng);
  d.update_spectral_state(20);
  return d;
}

double vector_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(MlpSpec, RequiresAHiddenLayerAndPositiveWidths) {
  MlpSpec spec{{2, 1}, {}, Activation::kSigmoid};
  EXPECT_THROW(spec.validate(), ContractError);
  spec = MlpSpec{{2, 0, 1}, {Activation::kRelu}, Activation::kSigmoid};
  EXPECT_THROW(spec.validate(), ContractError);
  EXPECT_NO_THROW(make_mlp_spec(2, 4, 2, 1, Activation::kRelu, Activation::kSigmoid).validate());
}

TEST(MlpSpec, LayoutIsLayerOrderWeightBeforeBias) {
  const MlpSpec spec = make_mlp_spec(2, 3, 1, 1, Activation::kRelu, Activation::kSigmoid);
  const ParamLayout layout = spec.layout("d");
  ASSERT_EQ(layout.slots().size(), 4u);
  EXPECT_EQ(layout.slots()[0].name, "d.0.weight");
  EXPECT_EQ(layout.slots()[0].shape, (Shape{2, 3}));
  EXPECT_EQ(layout.slots()[1].name, "d.0.bias");
  EXPECT_EQ(layout.slots()[2].name, "d.1.weight");
  EXPECT_EQ(layout.slots()[3].offset, 2u * 3u + 3u + 3u);
  EXPECT_EQ(layout.total_size(), 13u);
}

TEST(MlpInit, GlorotBoundsAndZeroBiases) {
  Rng rng(4);
  const MlpSpec spec = make_mlp_spec(8, 64, 2, 2, Activation::kRelu, Activation::kIdentity);
  const ParamVector p = init_mlp_params(spec, "g", rng);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.widths[l] + spec.widths[l + 1]));
    for (double w : p.slot(2 * l)) EXPECT_LE(std::abs(w), bound);
    for (double b : p.slot(2 * l + 1)) EXPECT_EQ(b, 0.0);
  }
}

TEST(DiscriminatorForward, ZeroParametersGiveOneHalf) {
  auto d = small_discriminator(1);
  std::fill(d.params.values.begin(), d.params.values.end(), 0.0);
  Rng rng(2);
  const Tensor x = random_tensor({5, 2}, rng, 3.0);
  const Tensor out = discriminator_outputs(d, x);
  for (double v : out.values()) EXPECT_EQ(v, 0.5);
}

TEST(DiscriminatorForward, OneOutputPerExample) {
  const auto d = small_discriminator(1);
  Rng rng(2);
  const Tensor out = discriminator_outputs(d, random_tensor({7, 2}, rng));
  EXPECT_EQ(out.numel(), 7u);
}

TEST(DiscriminatorForward, ShapeMismatchIsRejected) {
  const auto d = small_discriminator(1);
  EXPECT_THROW(discriminator_outputs(d, Tensor({3, 5})), ContractError);
}

TEST(DiscriminatorForward, InputGradientMatchesFiniteDifferences) {
  const auto d = small_discriminator(3);
  Rng rng(8);
  const Tensor x = random_tensor({4, 2}, rng);
  DiscriminatorForward fwd = discriminator_forward(d, x);
  const Tensor grad = fwd.graph.backward(fwd.graph.sum(fwd.pass.nodes.output)).at(fwd.input);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor up = x, down = x;
    up[i] += h;
    down[i] -= h;
    const std::size_t row = i / x.cols();
    const double numeric = (discriminator_outputs(d, up)[row] - discriminator_outputs(d, down)[row]) / (2.0 * h);
    worst = std::max(worst, std::abs(grad[i] - numeric) / std::max({std::abs(grad[i]), std::abs(numeric), 1e-12}));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(DiscriminatorForward, LogitInputGradientMatchesGraphGradient) {
  const auto d = small_discriminator(6, Activation::kRelu);
  Rng rng(9);
  const Tensor x = random_tensor({6, 2}, rng);
  DiscriminatorForward fwd = discriminator_forward(d, x);
  const Tensor expected = fwd.graph.backward(fwd.graph.sum(fwd.pass.nodes.logit)).at(fwd.input);
  const Tensor got = logit_input_gradient(d, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-14);
}

TEST(DiscriminatorForward, OutputsStayInsideUnitInterval) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto d = small_discriminator(100 + trial, Activation::kRelu);
    const Tensor out = discriminator_outputs(d, random_tensor({32, 2}, rng, 5.0));
    for (double v : out.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(DiscriminatorModel, SpectralStatesHaveUnitNorm) {
  auto d = small_discriminator(5);
  for (int step = 0; step < 3; ++step) {
    d.update_spectral_state(1);
    for (const auto& u : d.spectral_u) EXPECT_NEAR(vector_norm(u), 1.0, 1e-12);
  }
}

TEST(GeneratorForward, ZeroWeightsGiveTheBiasForEveryLatent) {
  Rng rng(1);
  auto g = GeneratorModel::create(make_mlp_spec(3, 4, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  std::fill(g.params.values.begin(), g.params.values.end(), 0.0);
  g.params.slot(3)[0] = 0.25;
  g.params.slot(3)[1] = -1.5;
  const Tensor out = generator_forward(g, random_tensor({5, 3}, rng));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(out.at(i, 0), 0.25);
    EXPECT_EQ(out.at(i, 1), -1.5);
  }
}

TEST(GeneratorForward, SameSeedSameLatentIsBitIdentical) {
  auto make = [] {
    Rng rng(77);
    return GeneratorModel::create(make_mlp_spec(8, 16, 2, 2, Activation::kRelu, Activation::kIdentity), rng);
  };
  Rng zr(5);
  const Tensor z = random_tensor({10, 8}, zr);
  EXPECT_EQ(generator_forward(make(), z), generator_forward(make(), z));
}

TEST(GeneratorForward, IdentityWeightsApplyTheActivation) {
  Rng rng(1);
  auto g = GeneratorModel::create(make_mlp_spec(2, 2, 1, 2, Activation::kTanh, Activation::kIdentity), rng);
  std::fill(g.params.values.begin(), g.params.values.end(), 0.0);
  for (std::size_t l : {0u, 2u}) {
    g.params.slot(l)[0] = 1.0;
    g.params.slot(l)[3] = 1.0;
  }
  const Tensor z = Tensor::matrix(2, 2, {0.3, -1.2, 2.0, 0.0});
  const Tensor out = generator_forward(g, z);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(out[i], std::tanh(z[i]));
}

TEST(GeneratorForward, LatentWidthMismatchIsRejected) {
  Rng rng(1);
  auto g = GeneratorModel::create(make_mlp_spec(3, 4, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  EXPECT_THROW(generator_forward(g, Tensor({2, 4})), ContractError);
}

TEST(SpectralNormalize, DiagonalMatrix) {
  const Tensor w = Tensor::matrix(2, 2, {3, 0, 0, 1});
  const auto r = spectral_normalize(w, std::vector<double>{0.6, 0.8}, 60);
  EXPECT_NEAR(r.sigma, 3.0, 1e-12);
  EXPECT_NEAR(r.normalized.at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.normalized.at(1, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(vector_norm(r.u), 1.0, 1e-12);
}

TEST(SpectralNormalize, IdentityIsUnchanged) {
  const Tensor w = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const double s = 1.0 / std::sqrt(3.0);
  const auto r = spectral_normalize(w, std::vector<double>{s, s, s}, 1);
  EXPECT_NEAR(r.sigma, 1.0, 1e-15);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(r.normalized[i], w[i], 1e-15);
}

TEST(SpectralNormalize, ConvergedSigmaMatchesJacobiSvd) {
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor w = random_tensor({16, 16}, rng);
    std::vector<double> u(16, 0.25);
    const auto sv = jacobi_singular_values(w);
    const auto r = spectral_normalize(w, u, 5000);
    EXPECT_NEAR(r.sigma, sv[0], 1e-6 * sv[0]) << "trial " << trial << " gap " << sv[0] / sv[1];
    // Top singular value of the normalized matrix is 1.
    EXPECT_NEAR(jacobi_singular_values(r.normalized)[0], 1.0, 1e-4);
  }
}

TEST(SpectralNormalize, ZeroMatrixUsesTheFloor) {
  const Tensor w({3, 2}, 0.0);
  const auto r = spectral_normalize(w, std::vector<double>{1, 0, 0}, 5);
  EXPECT_EQ(r.sigma, 1e-12);
  for (double v : r.normalized.values()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(r.normalized.all_finite());
  EXPECT_NEAR(vector_norm(r.u), 1.0, 1e-15);
}

TEST(SpectralNormalize, NeedsAtLeastOneIteration) {
  EXPECT_THROW(spectral_normalize(Tensor({2, 2}, 1.0), std::vector<double>{1, 0}, 0), ContractError);
}

TEST(PolyakUpdate, DegenerateDecays) {
  Rng rng(3);
  const MlpSpec spec = make_mlp_spec(2, 3, 1, 2, Activation::kRelu, Activation::kIdentity);
  const auto live = GeneratorModel::create(spec, rng);
  auto other = GeneratorModel::create(spec, rng);

  auto copy = ShadowGenerator::from(other, 0.0);
  polyak_update(copy, live);
  EXPECT_EQ(copy.params, live.params);

  auto frozen = ShadowGenerator::from(other, 1.0);
  polyak_update(frozen, live);
  EXPECT_EQ(frozen.params, other.params);
}

TEST(PolyakUpdate, ScalarArithmetic) {
  Rng rng(3);
  auto live = GeneratorModel::create(make_mlp_spec(1, 1, 1, 1, Activation::kRelu, Activation::kIdentity), rng);
  auto shadow = ShadowGenerator::from(live, 0.9);
  std::fill(shadow.params.values.begin(), shadow.params.values.end(), 1.0);
  std::fill(live.params.values.begin(), live.params.values.end(), 0.0);
  polyak_update(shadow, live);
  for (double v : shadow.params.values) EXPECT_DOUBLE_EQ(v, 0.9);
}

TEST(PolyakUpdate, ContractsTowardLive) {
  Rng rng(31);
  const MlpSpec spec = make_mlp_spec(4, 8, 2, 2, Activation::kRelu, Activation::kIdentity);
  const auto live = GeneratorModel::create(spec, rng);
  auto shadow = ShadowGenerator::from(GeneratorModel::create(spec, rng), 0.37);
  const auto before = shadow.params.values;
  polyak_update(shadow, live);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_NEAR(std::abs(shadow.params.values[i] - live.params.values[i]),
                0.37 * std::abs(before[i] - live.params.values[i]), 1e-15);
}

TEST(PolyakUpdate, LayoutMismatchIsRejected) {
  Rng rng(3);
  const auto a = GeneratorModel::create(make_mlp_spec(2, 3, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  const auto b = GeneratorModel::create(make_mlp_spec(2, 4, 1, 2, Activation::kRelu, Activation::kIdentity), rng);
  auto shadow = ShadowGenerator::from(a, 0.5);
  EXPECT_THROW(polyak_update(shadow, b), ContractError);
}

TEST(DpoolFeatures, OneMeanPerHiddenLayer) {
  Rng rng(1);
  const auto d = DiscriminatorModel::create(make_mlp_spec(2, 64, 2, 1, Activation::kRelu, Activation::kSigmoid), true, rng);
  const std::vector<double> x = {0.3, -0.4};
  const auto f = dpool_features(d, x);
  EXPECT_EQ(f.size(), 2u);
  EXPECT_EQ(f, dpool_features(d, x));
}

TEST(DpoolFeatures, ZeroWeightsGiveConstantFeatures) {
  auto d = small_discriminator(2);
  std::fill(d.params.values.begin(), d.params.values.end(), 0.0);
  const auto a = dpool_features(d, std::vector<double>{1.0, 2.0});
  const auto b = dpool_features(d, std::vector<double>{-5.0, 0.5});
  EXPECT_EQ(a, b);
}
