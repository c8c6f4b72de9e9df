#pragma once

#include "ebmgan/fisher.hpp"
#include "ebmgan/models.hpp"
#include "ebmgan/tensor.hpp"

#include <span>
#include <vector>

namespace ebmgan {

struct SvmOptions {
  double c = 1.0;
  std::size_t epochs = 500;
  double lr = 1e-3;
};

/// One-vs-rest linear classifier with squared hinge loss.
struct LinearSvmModel {
  Tensor weights;  // classes x features
  std::vector<double> bias;
  double c = 1.0;
  std::vector<double> objective_history;  // summed objective after each epoch

  std::size_t num_classes() const { return bias.size(); }
};

/// Minimizes 1/2 ||w||^2 + C sum max(0, 1 - y (w.x + b))^2 per class with
/// full-batch gradient descent. A step that would raise the objective is
/// halved until it does not, so the objective never increases.
LinearSvmModel l2svm_train(const Tensor& features, std::span<const int> labels, const SvmOptions& options = {});

/// Arg-max class score; ties go to the lowest class index.
std::vector<int> l2svm_predict(const LinearSvmModel& model, const Tensor& features);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

/// Per-column standardization fitted on one split and applied to others.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Tensor& features);
  Tensor apply(const Tensor& features) const;
};

/// Rows of mean-pooled hidden activations (one column per hidden layer).
Tensor dpool_feature_matrix(const DiscriminatorModel& d, const Tensor& x);

Tensor afv_matrix(std::span<const AdversarialFisherVector> afvs);

struct ClassDistanceMatrix {
  std::vector<int> labels;
  std::vector<double> entries;  // row-major, labels.size() squared

  std::size_t size() const { return labels.size(); }
  double at(std::size_t i, std::size_t j) const { return entries[i * size() + j]; }
};

/// Entry (i, j) is the set Fisher distance between the AFVs of class i and
/// class j. Only the upper triangle is computed and then mirrored.
ClassDistanceMatrix class_distance_matrix(const std::vector<std::vector<AdversarialFisherVector>>& sets,
                                          std::vector<int> labels);

/// Groups AFVs by label (labels sorted ascending).
ClassDistanceMatrix class_distance_matrix(std::span<const AdversarialFisherVector> afvs, std::span<const int> labels);

struct Neighbor {
  std::size_t id = 0;
  double distance = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// The k database entries closest to `query` in Fisher distance, nearest
/// first; equal distances are ordered by lower id (position in `database`).
std::vector<Neighbor> knn_query(std::span<const double> query, std::span<const AdversarialFisherVector> database,
                                std::size_t k);

}  // namespace ebmgan
