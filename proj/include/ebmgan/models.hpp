#pragma once

#include "ebmgan/autodiff.hpp"
#include "ebmgan/rng.hpp"
#include "ebmgan/tensor.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ebmgan {

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

/// Fully connected network. `widths` lists input, hidden and output sizes;
/// layer l maps widths[l] -> widths[l+1] as h * W + b with W stored
/// [fan_in, fan_out]. Parameters are laid out layer by layer, weight
/// before bias, named "<prefix>.<l>.weight" / "<prefix>.<l>.bias".
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> hidden_activations;
  Activation output_activation = Activation::kIdentity;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t num_layers() const { return widths.size() - 1; }
  std::size_t num_hidden() const { return widths.size() - 2; }

  void validate() const;
  ParamLayout layout(std::string_view prefix) const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

MlpSpec make_mlp_spec(std::size_t input_dim, std::size_t hidden_width, std::size_t hidden_layers,
                      std::size_t output_dim, Activation hidden, Activation output);

/// Nodes produced by attaching an MLP to a graph.
struct MlpNodes {
  std::vector<NodeId> pre;     // pre-activation of each hidden layer
  std::vector<NodeId> hidden;  // activation of each hidden layer
  NodeId logit;                // pre-activation of the output layer
  NodeId output;               // output activation applied to logit
};

/// `layer_params` holds weight and bias node ids in layout order. Weights may
/// be substitutes (e.g. spectrally scaled) for the raw parameter leaves.
MlpNodes attach_mlp(Graph& graph, const MlpSpec& spec, std::span<const NodeId> layer_params, NodeId input);

/// Glorot-uniform weights, zero biases.
ParamVector init_mlp_params(const MlpSpec& spec, std::string_view prefix, Rng& rng);

struct SpectralResult {
  Tensor normalized;
  std::vector<double> u;
  double sigma = 0.0;
};

/// Power-iteration estimate of the top singular value, sigma = ||W^T u||
/// after the update, floored at 1e-12.
SpectralResult spectral_normalize(const Tensor& weight, std::span<const double> u, int n_power_iters);
double spectral_sigma(const Tensor& weight, std::span<const double> u);

class DiscriminatorModel {
public:
  MlpSpec spec;
  ParamVector params;
  std::vector<std::vector<double>> spectral_u;  // one left vector per weight matrix
  bool spectral_enabled = true;

  static DiscriminatorModel create(const MlpSpec& spec, bool spectral, Rng& rng);

  std::size_t num_params() const { return params.size(); }

  /// Advances every power-iteration state by `iters` steps.
  void update_spectral_state(int iters);

  /// Per-layer weight divisor (1 when spectral normalization is off).
  std::vector<double> weight_sigmas() const;

  friend bool operator==(const DiscriminatorModel&, const DiscriminatorModel&) = default;
};

struct DiscriminatorPass {
  std::vector<NodeId> params;             // raw parameter nodes, layout order
  std::vector<NodeId> effective_weights;  // weight / sigma, one per layer
  MlpNodes nodes;
};

/// Attaches D to `graph`. With `track_params` the parameters are leaves
/// (differentiable), otherwise constants.
DiscriminatorPass attach_discriminator(Graph& graph, const DiscriminatorModel& d, NodeId input, bool track_params);

/// Same, reusing parameter nodes bound earlier (so several passes share one
/// set of leaves and their gradients accumulate).
DiscriminatorPass attach_discriminator(Graph& graph, const DiscriminatorModel& d, NodeId input,
                                       std::span<const NodeId> param_nodes);

/// Builds the input gradient of the logit, d logit / d x, as graph nodes so
/// that it can itself be differentiated with respect to the parameters.
/// ReLU masks enter as constants (their derivative is zero almost everywhere).
NodeId attach_logit_input_gradient(Graph& graph, const DiscriminatorModel& d, const DiscriminatorPass& pass);

struct DiscriminatorForward {
  Graph graph;
  NodeId input;
  DiscriminatorPass pass;

  const Tensor& outputs() const { return graph.value(pass.nodes.output); }
  const Tensor& logits() const { return graph.value(pass.nodes.logit); }
};

/// Forward pass with both the batch and the parameters as leaves.
DiscriminatorForward discriminator_forward(const DiscriminatorModel& d, const Tensor& x);

/// Sigmoid outputs and logits without gradient bookkeeping.
Tensor discriminator_outputs(const DiscriminatorModel& d, const Tensor& x);
Tensor discriminator_logits(const DiscriminatorModel& d, const Tensor& x);

/// Gradient of the logit with respect to the parameters for one example.
ParamVector logit_param_gradient(const DiscriminatorModel& d, std::span<const double> x);

/// Row i holds d logit(x_i) / d x_i.
Tensor logit_input_gradient(const DiscriminatorModel& d, const Tensor& x);

/// Mean of each hidden layer's activations, one feature per hidden layer.
std::vector<double> dpool_features(const DiscriminatorModel& d, std::span<const double> x);

class GeneratorModel {
public:
  MlpSpec spec;
  ParamVector params;

  static GeneratorModel create(const MlpSpec& spec, Rng& rng);
  std::size_t latent_dim() const { return spec.input_dim(); }

  friend bool operator==(const GeneratorModel&, const GeneratorModel&) = default;
};

Tensor generate(const MlpSpec& spec, const ParamVector& params, const Tensor& z);
inline Tensor generator_forward(const GeneratorModel& g, const Tensor& z) { return generate(g.spec, g.params, z); }

/// Polyak-averaged copy of a generator's parameters.
struct ShadowGenerator {
  ParamVector params;
  double tau = 0.999;

  static ShadowGenerator from(const GeneratorModel& g, double tau);
  friend bool operator==(const ShadowGenerator&, const ShadowGenerator&) = default;
};

/// shadow <- tau * shadow + (1 - tau) * live.
void polyak_update(ShadowGenerator& shadow, const GeneratorModel& live);

/// n x dim matrix of i.i.d. N(0, 1) draws.
Tensor sample_normal(std::size_t n, std::size_t dim, Rng& rng);

}  // namespace ebmgan
