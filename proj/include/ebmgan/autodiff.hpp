#pragma once

#include "ebmgan/tensor.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ebmgan {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind {
  kLeaf,
  kConstant,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kAddBias,
  kRelu,
  kSigmoid,
  kTanh,
  kSquare,
  kSum,
  kMean,
};

class Gradients;

/// Computation record for reverse-mode differentiation. Nodes are appended
/// in evaluation order, so node ids are already a topological order and the
/// backward sweep is a single reverse pass over the node list.
class Graph {
public:
  NodeId leaf(Tensor value, std::string name = {});
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double offset);
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  const Tensor& value(NodeId id) const;
  OpKind kind(NodeId id) const;
  const std::string& name(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// d(output)/d(leaf) for every leaf. Leaves that do not reach the output
  /// get zero gradients. Throws ContractError for a non-scalar output.
  Gradients backward(NodeId output) const;

private:
  struct Node {
    OpKind kind;
    NodeId a{}, b{};
    double constant = 0.0;
    Tensor value;
    std::string name;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
};

class Gradients {
public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> by_node) : by_node_(std::move(by_node)) {}

  bool contains(NodeId id) const { return id.index < by_node_.size() && by_node_[id.index].has_value(); }
  const Tensor& at(NodeId id) const;

private:
  std::vector<std::optional<Tensor>> by_node_;
};

struct ParamSlot {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return shape_numel(shape); }
  friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

/// Ordered list of named parameter tensors packed back to back.
class ParamLayout {
public:
  ParamLayout() = default;

  void append(std::string name, Shape shape);
  const std::vector<ParamSlot>& slots() const { return slots_; }
  std::size_t total_size() const { return total_; }
  std::size_t index_of(const std::string& name) const;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

private:
  std::vector<ParamSlot> slots_;
  std::size_t total_ = 0;
};

/// All parameters of one model as a single flat vector.
struct ParamVector {
  ParamLayout layout;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(ParamLayout l) : layout(std::move(l)), values(layout.total_size(), 0.0) {}
  ParamVector(ParamLayout l, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::span<const double> slot(std::size_t i) const;
  std::span<double> slot(std::size_t i);
  Tensor tensor(std::size_t i) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

std::vector<Tensor> unflatten(const ParamVector& params);
ParamVector flatten(const ParamLayout& layout, std::span<const Tensor> tensors);

/// Registers every slot of `params` as a named leaf and returns the leaf ids
/// in layout order.
std::vector<NodeId> bind_params(Graph& graph, const ParamVector& params);

/// Registers every slot as a constant (no gradient is tracked).
std::vector<NodeId> bind_constants(Graph& graph, const ParamVector& params);

/// Gathers the gradients of `leaves` (aligned with `layout`) into one vector.
ParamVector flatten_grads(const Gradients& grads, std::span<const NodeId> leaves, const ParamLayout& layout);

/// Builds a scalar output from parameter leaves bound in layout order.
using ScalarProgram = std::function<NodeId(Graph&, std::span<const NodeId>)>;

double evaluate(const ScalarProgram& program, const ParamVector& params);
ParamVector gradient(const ScalarProgram& program, const ParamVector& params);

/// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-12).
double finite_diff_check(const ScalarProgram& program, const ParamVector& params, double step);

}  // namespace ebmgan
