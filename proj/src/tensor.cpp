#include "ebmgan/tensor.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>

namespace ebmgan {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ",")); }

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  require(!shape_.empty(), "tensor shape must have at least one dimension");
  for (std::size_t d : shape_) require(d > 0, "tensor dimensions must be positive, got {}", shape_view(shape_));
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(!shape_.empty(), "tensor shape must have at least one dimension");
  for (std::size_t d : shape_) require(d > 0, "tensor dimensions must be positive, got {}", shape_view(shape_));
  require(data_.size() == shape_numel(shape_), "tensor data length {} does not match shape {}", data_.size(), shape_view(shape_));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

std::size_t Tensor::rows() const {
  require(rank() == 1 || rank() == 2, "matrix view needs a rank 1 or 2 tensor, got {}", shape_view(shape_));
  return rank() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 1 || rank() == 2, "matrix view needs a rank 1 or 2 tensor, got {}", shape_view(shape_));
  return rank() == 1 ? shape_[0] : shape_[1];
}

double Tensor::item() const {
  require(is_scalar(), "item() on non-scalar tensor {}", shape_view(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace kernels {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), "{}: shape mismatch {} vs {}", op, shape_view(a.shape()), shape_view(b.shape()));
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.values()) v = f(v);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  Tensor out = a;
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(ov[i], bv[i]);
  return out;
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ {} x {}", shape_view(a.shape()),
                                     shape_view(b.shape()));
  Tensor out({n, m});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", [](double x, double y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", [](double x, double y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", [](double x, double y) { return x * y; }); }

Tensor scale(const Tensor& a, double factor) {
  return map(a, [factor](double x) { return x * factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return map(a, [offset](double x) { return x + offset; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = x.rows(), m = x.cols();
  require(bias.numel() == m, "add_bias: bias of length {} does not match {} columns", bias.numel(), m);
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < m; ++j) r[j] += bias[j];
  }
  return out;
}

Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return map(a, [](double x) { return sigmoid(x); });
}

Tensor tanh(const Tensor& a) {
  return map(a, [](double x) { return std::tanh(x); });
}

Tensor square(const Tensor& a) {
  return map(a, [](double x) { return x * x; });
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.numel()); }

}  // namespace kernels

}  // namespace ebmgan
