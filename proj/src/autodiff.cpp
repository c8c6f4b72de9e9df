#include "ebmgan/autodiff.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ebmgan {

namespace {

// Reinterpret `t` with the shape of `like` (same element count).
Tensor reshaped_like(Tensor t, const Tensor& like) {
  if (t.shape() == like.shape()) return t;
  return Tensor(like.shape(), std::move(t.storage()));
}

void accumulate(std::optional<Tensor>& slot, Tensor contribution) {
  if (!slot) {
    slot = std::move(contribution);
    return;
  }
  auto dst = slot->values();
  auto src = contribution.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

const Graph::Node& Graph::node(NodeId id) const {
  require(id.index < nodes_.size(), "node id {} is not in this graph", id.index);
  return nodes_[id.index];
}

NodeId Graph::leaf(Tensor value, std::string name) {
  return push({OpKind::kLeaf, {}, {}, 0.0, std::move(value), std::move(name)});
}

NodeId Graph::constant(Tensor value) { return push({OpKind::kConstant, {}, {}, 0.0, std::move(value), {}}); }

NodeId Graph::matmul(NodeId a, NodeId b) {
  return push({OpKind::kMatmul, a, b, 0.0, kernels::matmul(value(a), value(b)), {}});
}

NodeId Graph::transpose(NodeId a) { return push({OpKind::kTranspose, a, {}, 0.0, kernels::transpose(value(a)), {}}); }

NodeId Graph::add(NodeId a, NodeId b) { return push({OpKind::kAdd, a, b, 0.0, kernels::add(value(a), value(b)), {}}); }

NodeId Graph::sub(NodeId a, NodeId b) { return push({OpKind::kSub, a, b, 0.0, kernels::sub(value(a), value(b)), {}}); }

NodeId Graph::mul(NodeId a, NodeId b) { return push({OpKind::kMul, a, b, 0.0, kernels::mul(value(a), value(b)), {}}); }

NodeId Graph::scale(NodeId a, double factor) {
  return push({OpKind::kScale, a, {}, factor, kernels::scale(value(a), factor), {}});
}

NodeId Graph::add_scalar(NodeId a, double offset) {
  return push({OpKind::kAddScalar, a, {}, offset, kernels::add_scalar(value(a), offset), {}});
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  return push({OpKind::kAddBias, x, bias, 0.0, kernels::add_bias(value(x), value(bias)), {}});
}

NodeId Graph::relu(NodeId a) { return push({OpKind::kRelu, a, {}, 0.0, kernels::relu(value(a)), {}}); }
NodeId Graph::sigmoid(NodeId a) { return push({OpKind::kSigmoid, a, {}, 0.0, kernels::sigmoid(value(a)), {}}); }
NodeId Graph::tanh(NodeId a) { return push({OpKind::kTanh, a, {}, 0.0, kernels::tanh(value(a)), {}}); }
NodeId Graph::square(NodeId a) { return push({OpKind::kSquare, a, {}, 0.0, kernels::square(value(a)), {}}); }

NodeId Graph::sum(NodeId a) { return push({OpKind::kSum, a, {}, 0.0, Tensor::scalar(kernels::sum(value(a))), {}}); }
NodeId Graph::mean(NodeId a) { return push({OpKind::kMean, a, {}, 0.0, Tensor::scalar(kernels::mean(value(a))), {}}); }

const Tensor& Graph::value(NodeId id) const { return node(id).value; }
OpKind Graph::kind(NodeId id) const { return node(id).kind; }
const std::string& Graph::name(NodeId id) const { return node(id).name; }

Gradients Graph::backward(NodeId output) const {
  require(node(output).value.is_scalar(),
          "backward: output node must be scalar, got shape {}", shape_view(node(output).value.shape()));

  std::vector<std::optional<Tensor>> grad(nodes_.size());
  grad[output.index] = Tensor(node(output).value.shape(), 1.0);

  for (std::size_t idx = output.index + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (!grad[idx] || n.kind == OpKind::kLeaf || n.kind == OpKind::kConstant) continue;
    const Tensor& g = *grad[idx];
    const Tensor& va = nodes_[n.a.index].value;

    switch (n.kind) {
      case OpKind::kMatmul: {
        const Tensor& vb = nodes_[n.b.index].value;
        accumulate(grad[n.a.index], reshaped_like(kernels::matmul(g, kernels::transpose(vb)), va));
        accumulate(grad[n.b.index], reshaped_like(kernels::matmul(kernels::transpose(va), g), vb));
        break;
      }
      case OpKind::kTranspose:
        accumulate(grad[n.a.index], reshaped_like(kernels::transpose(g), va));
        break;
      case OpKind::kAdd:
        accumulate(grad[n.a.index], g);
        accumulate(grad[n.b.index], g);
        break;
      case OpKind::kSub:
        accumulate(grad[n.a.index], g);
        accumulate(grad[n.b.index], kernels::scale(g, -1.0));
        break;
      case OpKind::kMul:
        accumulate(grad[n.a.index], kernels::mul(g, nodes_[n.b.index].value));
        accumulate(grad[n.b.index], kernels::mul(g, va));
        break;
      case OpKind::kScale:
        accumulate(grad[n.a.index], kernels::scale(g, n.constant));
        break;
      case OpKind::kAddScalar:
        accumulate(grad[n.a.index], g);
        break;
      case OpKind::kAddBias: {
        accumulate(grad[n.a.index], g);
        const Tensor& vb = nodes_[n.b.index].value;
        Tensor db(vb.shape());
        for (std::size_t i = 0; i < g.rows(); ++i) {
          auto r = g.row(i);
          for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
        }
        accumulate(grad[n.b.index], std::move(db));
        break;
      }
      case OpKind::kRelu: {
        // Subgradient at exactly zero is 0.
        Tensor d = g;
        for (std::size_t i = 0; i < d.numel(); ++i)
          if (!(va[i] > 0.0)) d[i] = 0.0;
        accumulate(grad[n.a.index], std::move(d));
        break;
      }
      case OpKind::kSigmoid: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= n.value[i] * (1.0 - n.value[i]);
        accumulate(grad[n.a.index], std::move(d));
        break;
      }
      case OpKind::kTanh: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(grad[n.a.index], std::move(d));
        break;
      }
      case OpKind::kSquare: {
        Tensor d = g;
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= 2.0 * va[i];
        accumulate(grad[n.a.index], std::move(d));
        break;
      }
      case OpKind::kSum:
        accumulate(grad[n.a.index], Tensor(va.shape(), g.item()));
        break;
      case OpKind::kMean:
        accumulate(grad[n.a.index], Tensor(va.shape(), g.item() / static_cast<double>(va.numel())));
        break;
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
    }
    if (idx != output.index) grad[idx].reset();
  }

  std::vector<std::optional<Tensor>> leaves(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind != OpKind::kLeaf) continue;
    leaves[i] = grad[i] ? std::move(*grad[i]) : Tensor(nodes_[i].value.shape(), 0.0);
  }
  return Gradients(std::move(leaves));
}

const Tensor& Gradients::at(NodeId id) const {
  if (!contains(id)) throw ContractError(fmt::format("no gradient recorded for node {} (not a leaf?)", id.index));
  return *by_node_[id.index];
}

void ParamLayout::append(std::string name, Shape shape) {
  require(!shape.empty() && shape_numel(shape) > 0, "parameter '{}' needs a non-empty shape", name);
  for (const auto& s : slots_) require(s.name != name, "duplicate parameter name '{}'", name);
  const std::size_t n = shape_numel(shape);
  slots_.push_back({std::move(name), std::move(shape), total_});
  total_ += n;
}

std::size_t ParamLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i)
    if (slots_[i].name == name) return i;
  throw ContractError("unknown parameter '" + name + "'");
}

ParamVector::ParamVector(ParamLayout l, std::vector<double> v) : layout(std::move(l)), values(std::move(v)) {
  require(values.size() == layout.total_size(), "parameter vector of length {} does not match layout size {}", values.size(), layout.total_size());
}

std::span<const double> ParamVector::slot(std::size_t i) const {
  const auto& s = layout.slots().at(i);
  return std::span<const double>(values).subspan(s.offset, s.size());
}

std::span<double> ParamVector::slot(std::size_t i) {
  const auto& s = layout.slots().at(i);
  return std::span<double>(values).subspan(s.offset, s.size());
}

Tensor ParamVector::tensor(std::size_t i) const {
  auto s = slot(i);
  return Tensor(layout.slots()[i].shape, std::vector<double>(s.begin(), s.end()));
}

std::vector<Tensor> unflatten(const ParamVector& params) {
  std::vector<Tensor> out;
  out.reserve(params.layout.slots().size());
  for (std::size_t i = 0; i < params.layout.slots().size(); ++i) out.push_back(params.tensor(i));
  return out;
}

ParamVector flatten(const ParamLayout& layout, std::span<const Tensor> tensors) {
  require(tensors.size() == layout.slots().size(), "flatten: {} tensors for {} layout slots", tensors.size(), layout.slots().size());
  ParamVector out(layout);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& s = layout.slots()[i];
    require(tensors[i].numel() == s.size(), "flatten: size mismatch for parameter '{}'", s.name);
    std::copy(tensors[i].values().begin(), tensors[i].values().end(), out.values.begin() + s.offset);
  }
  return out;
}

std::vector<NodeId> bind_params(Graph& graph, const ParamVector& params) {
  std::vector<NodeId> ids;
  ids.reserve(params.layout.slots().size());
  for (std::size_t i = 0; i < params.layout.slots().size(); ++i)
    ids.push_back(graph.leaf(params.tensor(i), params.layout.slots()[i].name));
  return ids;
}

std::vector<NodeId> bind_constants(Graph& graph, const ParamVector& params) {
  std::vector<NodeId> ids;
  ids.reserve(params.layout.slots().size());
  for (std::size_t i = 0; i < params.layout.slots().size(); ++i) ids.push_back(graph.constant(params.tensor(i)));
  return ids;
}

ParamVector flatten_grads(const Gradients& grads, std::span<const NodeId> leaves, const ParamLayout& layout) {
  require(leaves.size() == layout.slots().size(), "flatten_grads: {} leaves for {} layout slots", leaves.size(), layout.slots().size());
  ParamVector out(layout);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto& s = layout.slots()[i];
    if (!grads.contains(leaves[i])) throw ContractError("flatten_grads: missing gradient for parameter '" + s.name + "'");
    const Tensor& g = grads.at(leaves[i]);
    require(g.numel() == s.size(), "flatten_grads: gradient size mismatch for parameter '{}'", s.name);
    std::copy(g.values().begin(), g.values().end(), out.values.begin() + s.offset);
  }
  return out;
}

double evaluate(const ScalarProgram& program, const ParamVector& params) {
  Graph g;
  auto leaves = bind_params(g, params);
  return g.value(program(g, leaves)).item();
}

ParamVector gradient(const ScalarProgram& program, const ParamVector& params) {
  Graph g;
  auto leaves = bind_params(g, params);
  const NodeId out = program(g, leaves);
  return flatten_grads(g.backward(out), leaves, params.layout);
}

double finite_diff_check(const ScalarProgram& program, const ParamVector& params, double step) {
  require(step > 0.0, "finite_diff_check: step must be positive");
  const ParamVector analytic = gradient(program, params);
  ParamVector probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double original = params.values[i];
    probe.values[i] = original + step;
    const double up = evaluate(program, probe);
    probe.values[i] = original - step;
    const double down = evaluate(program, probe);
    probe.values[i] = original;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError(fmt::format("finite_diff_check: non-finite evaluation at coordinate {}", i));
    const double central = (up - down) / (2.0 * step);
    const double a = analytic.values[i];
    const double denom = std::max({std::abs(a), std::abs(central), 1e-12});
    worst = std::max(worst, std::abs(a - central) / denom);
  }
  return worst;
}

}  // namespace ebmgan
