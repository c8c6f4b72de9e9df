#pragma once

#include <fmt/format.h>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ebmgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Formats as shape_string() without building a string up front.
struct ShapeView {
  const Shape& shape;
};
inline ShapeView shape_view(const Shape& shape) { return {shape}; }

/// Dense row-major array of doubles. Rank 1 tensors are treated as a single
/// row by the matrix kernels below.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  bool is_scalar() const { return data_.size() == 1; }

  // Matrix view: rank 1 -> (1, n), rank 2 -> (rows, cols).
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::span<const double> row(std::size_t r) const { return values().subspan(r * cols(), cols()); }
  std::span<double> row(std::size_t r) { return values().subspan(r * cols(), cols()); }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  Shape shape_;
  std::vector<double> data_;
};

// Plain kernels shared by the autodiff engine and the graph-free evaluators,
// so both paths produce bit-identical values.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
double sum(const Tensor& a);
double mean(const Tensor& a);

double sigmoid(double x);

}  // namespace kernels

}  // namespace ebmgan

template <>
struct fmt::formatter<ebmgan::ShapeView> : fmt::formatter<std::string> {
  auto format(const ebmgan::ShapeView& v, fmt::format_context& ctx) const {
    return fmt::formatter<std::string>::format(ebmgan::shape_string(v.shape), ctx);
  }
};
