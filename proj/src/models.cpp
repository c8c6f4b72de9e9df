#include "ebmgan/models.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ebmgan {

namespace {

constexpr double kSigmaFloor = 1e-12;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// W^T u for W stored [rows, cols].
std::vector<double> mul_transposed(const Tensor& w, std::span<const double> u) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto r = w.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j] * u[i];
  }
  return out;
}

std::vector<double> mul(const Tensor& w, std::span<const double> v) {
  std::vector<double> out(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    auto r = w.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * v[j];
    out[i] = s;
  }
  return out;
}

NodeId apply_activation(Graph& g, Activation a, NodeId x) {
  switch (a) {
    case Activation::kIdentity:
      return x;
    case Activation::kRelu:
      return g.relu(x);
    case Activation::kTanh:
      return g.tanh(x);
    case Activation::kSigmoid:
      return g.sigmoid(x);
  }
  return x;
}

// Derivative of the activation at `pre` (with output `post`), as a node.
NodeId activation_derivative(Graph& g, Activation a, NodeId pre, NodeId post) {
  switch (a) {
    case Activation::kIdentity:
      return g.constant(Tensor(g.value(pre).shape(), 1.0));
    case Activation::kRelu: {
      Tensor mask = g.value(pre);
      for (double& v : mask.values()) v = v > 0.0 ? 1.0 : 0.0;
      return g.constant(std::move(mask));
    }
    case Activation::kTanh:
      return g.add_scalar(g.scale(g.square(post), -1.0), 1.0);
    case Activation::kSigmoid:
      return g.mul(post, g.add_scalar(g.scale(post, -1.0), 1.0));
  }
  return pre;
}

}  // namespace

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity:
      return "identity";
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kSigmoid:
      return "sigmoid";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  for (Activation a : {Activation::kIdentity, Activation::kRelu, Activation::kTanh, Activation::kSigmoid})
    if (activation_name(a) == name) return a;
  throw ContractError(fmt::format("unknown activation '{}'", name));
}

void MlpSpec::validate() const {
  require(widths.size() >= 3, "MLP needs at least one hidden layer");
  for (std::size_t w : widths) require(w > 0, "MLP widths must be positive");
  require(hidden_activations.size() == widths.size() - 2, "MLP has {} hidden layers but {} hidden activations", widths.size() - 2,
                      hidden_activations.size());
}

ParamLayout MlpSpec::layout(std::string_view prefix) const {
  validate();
  ParamLayout layout;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    layout.append(fmt::format("{}.{}.weight", prefix, l), {widths[l], widths[l + 1]});
    layout.append(fmt::format("{}.{}.bias", prefix, l), {widths[l + 1]});
  }
  return layout;
}

MlpSpec make_mlp_spec(std::size_t input_dim, std::size_t hidden_width, std::size_t hidden_layers,
                      std::size_t output_dim, Activation hidden, Activation output) {
  MlpSpec spec;
  spec.widths.push_back(input_dim);
  for (std::size_t i = 0; i < hidden_layers; ++i) spec.widths.push_back(hidden_width);
  spec.widths.push_back(output_dim);
  spec.hidden_activations.assign(hidden_layers, hidden);
  spec.output_activation = output;
  spec.validate();
  return spec;
}

MlpNodes attach_mlp(Graph& graph, const MlpSpec& spec, std::span<const NodeId> layer_params, NodeId input) {
  require(layer_params.size() == 2 * spec.num_layers(), "attach_mlp: wrong number of parameter nodes");
  require(graph.value(input).cols() == spec.input_dim(), "MLP expects {} input columns, got {}", spec.input_dim(), graph.value(input).cols());
  MlpNodes nodes;
  NodeId h = input;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const NodeId pre = graph.add_bias(graph.matmul(h, layer_params[2 * l]), layer_params[2 * l + 1]);
    if (l + 1 < spec.num_layers()) {
      h = apply_activation(graph, spec.hidden_activations[l], pre);
      nodes.pre.push_back(pre);
      nodes.hidden.push_back(h);
    } else {
      nodes.logit = pre;
      nodes.output = apply_activation(graph, spec.output_activation, pre);
    }
  }
  return nodes;
}

ParamVector init_mlp_params(const MlpSpec& spec, std::string_view prefix, Rng& rng) {
  ParamVector p(spec.layout(prefix));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(spec.widths[l] + spec.widths[l + 1]));
    for (double& w : p.slot(2 * l)) w = rng.uniform(-limit, limit);
  }
  return p;
}

double spectral_sigma(const Tensor& weight, std::span<const double> u) {
  require(u.size() == weight.rows(), "spectral state length does not match weight rows");
  return std::max(norm(mul_transposed(weight, u)), kSigmaFloor);
}

SpectralResult spectral_normalize(const Tensor& weight, std::span<const double> u, int n_power_iters) {
  require(n_power_iters >= 1, "spectral_normalize: need at least one power iteration");
  require(u.size() == weight.rows(), "spectral state length does not match weight rows");
  std::vector<double> left(u.begin(), u.end());
  for (int it = 0; it < n_power_iters; ++it) {
    std::vector<double> v = mul_transposed(weight, left);
    const double nv = norm(v);
    if (nv < kSigmaFloor) break;
    for (double& x : v) x /= nv;
    std::vector<double> next = mul(weight, v);
    const double nu = norm(next);
    if (nu < kSigmaFloor) break;
    for (double& x : next) x /= nu;
    left = std::move(next);
  }
  SpectralResult out;
  out.sigma = spectral_sigma(weight, left);
  out.normalized = kernels::scale(weight, 1.0 / out.sigma);
  out.u = std::move(left);
  return out;
}

DiscriminatorModel DiscriminatorModel::create(const MlpSpec& spec, bool spectral, Rng& rng) {
  DiscriminatorModel d;
  d.spec = spec;
  d.params = init_mlp_params(spec, "d", rng);
  d.spectral_enabled = spectral;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    std::vector<double> u(spec.widths[l]);
    for (double& x : u) x = rng.normal();
    const double n = norm(u);
    for (double& x : u) x /= n;
    d.spectral_u.push_back(std::move(u));
  }
  return d;
}

void DiscriminatorModel::update_spectral_state(int iters) {
  if (!spectral_enabled) return;
  for (std::size_t l = 0; l < spec.num_layers(); ++l)
    spectral_u[l] = spectral_normalize(params.tensor(2 * l), spectral_u[l], iters).u;
}

std::vector<double> DiscriminatorModel::weight_sigmas() const {
  std::vector<double> sigmas(spec.num_layers(), 1.0);
  if (!spectral_enabled) return sigmas;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) sigmas[l] = spectral_sigma(params.tensor(2 * l), spectral_u[l]);
  return sigmas;
}

DiscriminatorPass attach_discriminator(Graph& graph, const DiscriminatorModel& d, NodeId input, bool track_params) {
  const auto ids = track_params ? bind_params(graph, d.params) : bind_constants(graph, d.params);
  return attach_discriminator(graph, d, input, ids);
}

DiscriminatorPass attach_discriminator(Graph& graph, const DiscriminatorModel& d, NodeId input,
                                       std::span<const NodeId> param_nodes) {
  require(param_nodes.size() == d.params.layout.slots().size(), "attach_discriminator: wrong number of parameter nodes");
  DiscriminatorPass pass;
  pass.params.assign(param_nodes.begin(), param_nodes.end());
  const auto sigmas = d.weight_sigmas();
  std::vector<NodeId> layer_params = pass.params;
  for (std::size_t l = 0; l < d.spec.num_layers(); ++l) {
    // sigma is held fixed within a pass; gradients flow through W / sigma.
    if (d.spectral_enabled) layer_params[2 * l] = graph.scale(pass.params[2 * l], 1.0 / sigmas[l]);
    pass.effective_weights.push_back(layer_params[2 * l]);
  }
  pass.nodes = attach_mlp(graph, d.spec, layer_params, input);
  return pass;
}

NodeId attach_logit_input_gradient(Graph& graph, const DiscriminatorModel& d, const DiscriminatorPass& pass) {
  const std::size_t batch = graph.value(pass.nodes.logit).rows();
  NodeId delta = graph.constant(Tensor({batch, 1}, 1.0));
  for (std::size_t l = d.spec.num_layers(); l-- > 0;) {
    NodeId g = graph.matmul(delta, graph.transpose(pass.effective_weights[l]));
    if (l == 0) return g;
    const NodeId deriv =
        activation_derivative(graph, d.spec.hidden_activations[l - 1], pass.nodes.pre[l - 1], pass.nodes.hidden[l - 1]);
    delta = graph.mul(g, deriv);
  }
  return delta;
}

DiscriminatorForward discriminator_forward(const DiscriminatorModel& d, const Tensor& x) {
  DiscriminatorForward f;
  f.input = f.graph.leaf(x, "x");
  f.pass = attach_discriminator(f.graph, d, f.input, true);
  return f;
}

Tensor discriminator_outputs(const DiscriminatorModel& d, const Tensor& x) {
  Graph g;
  auto pass = attach_discriminator(g, d, g.constant(x), false);
  return g.value(pass.nodes.output);
}

Tensor discriminator_logits(const DiscriminatorModel& d, const Tensor& x) {
  Graph g;
  auto pass = attach_discriminator(g, d, g.constant(x), false);
  return g.value(pass.nodes.logit);
}

ParamVector logit_param_gradient(const DiscriminatorModel& d, std::span<const double> x) {
  Graph g;
  const NodeId input = g.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  auto pass = attach_discriminator(g, d, input, true);
  return flatten_grads(g.backward(pass.nodes.logit), pass.params, d.params.layout);
}

Tensor logit_input_gradient(const DiscriminatorModel& d, const Tensor& x) {
  Graph g;
  const NodeId input = g.leaf(x, "x");
  auto pass = attach_discriminator(g, d, input, false);
  Tensor grad = g.backward(g.sum(pass.nodes.logit)).at(input);
  return Tensor({x.rows(), x.cols()}, std::move(grad.storage()));
}

std::vector<double> dpool_features(const DiscriminatorModel& d, std::span<const double> x) {
  Graph g;
  const NodeId input = g.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  auto pass = attach_discriminator(g, d, input, false);
  std::vector<double> out;
  for (NodeId h : pass.nodes.hidden) out.push_back(kernels::mean(g.value(h)));
  return out;
}

GeneratorModel GeneratorModel::create(const MlpSpec& spec, Rng& rng) {
  GeneratorModel g;
  g.spec = spec;
  g.params = init_mlp_params(spec, "g", rng);
  return g;
}

Tensor generate(const MlpSpec& spec, const ParamVector& params, const Tensor& z) {
  Graph g;
  auto ids = bind_constants(g, params);
  return g.value(attach_mlp(g, spec, ids, g.constant(z)).output);
}

ShadowGenerator ShadowGenerator::from(const GeneratorModel& g, double tau) {
  require(tau >= 0.0 && tau <= 1.0, "Polyak decay must lie in [0, 1]");
  return ShadowGenerator{g.params, tau};
}

void polyak_update(ShadowGenerator& shadow, const GeneratorModel& live) {
  require(shadow.params.layout == live.params.layout, "polyak_update: shadow and live layouts differ");
  const double keep = shadow.tau, take = 1.0 - shadow.tau;
  for (std::size_t i = 0; i < shadow.params.size(); ++i)
    shadow.params.values[i] = keep * shadow.params.values[i] + take * live.params.values[i];
}

Tensor sample_normal(std::size_t n, std::size_t dim, Rng& rng) {
  Tensor t({n, dim});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace ebmgan
