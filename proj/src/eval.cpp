#include "ebmgan/eval.hpp"

#include "ebmgan/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace ebmgan {

namespace {

// Objective and gradient of the squared-hinge problem for one class.
double ovr_objective(const Tensor& x, std::span<const double> y, std::span<const double> w, double b, double c,
                     std::vector<double>* grad_w, double* grad_b) {
  double reg = 0.0;
  for (double v : w) reg += v * v;
  double loss = 0.0;
  if (grad_w) {
    grad_w->assign(w.begin(), w.end());
    *grad_b = 0.0;
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row(i);
    double score = b;
    for (std::size_t j = 0; j < row.size(); ++j) score += w[j] * row[j];
    const double slack = 1.0 - y[i] * score;
    if (slack <= 0.0) continue;
    loss += slack * slack;
    if (grad_w) {
      const double coef = -2.0 * c * slack * y[i];
      for (std::size_t j = 0; j < row.size(); ++j) (*grad_w)[j] += coef * row[j];
      *grad_b += coef;
    }
  }
  return 0.5 * reg + c * loss;
}

}  // namespace

LinearSvmModel l2svm_train(const Tensor& features, std::span<const int> labels, const SvmOptions& options) {
  require(features.rows() == labels.size(), "l2svm_train: feature rows and labels differ in count");
  require(features.rows() > 0, "l2svm_train: no training examples");
  require(options.c > 0.0, "l2svm_train: C must be positive");
  require(options.lr > 0.0, "l2svm_train: learning rate must be positive");
  require(features.all_finite(), "l2svm_train: features must be finite");
  for (int l : labels) require(l >= 0, "l2svm_train: labels must be non-negative");
  const int max_label = *std::max_element(labels.begin(), labels.end());
  const bool single_class = std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; });
  require(!single_class, "l2svm_train: need at least two classes");

  const std::size_t classes = static_cast<std::size_t>(max_label) + 1;
  const std::size_t dim = features.cols();
  LinearSvmModel model;
  model.weights = Tensor({classes, dim}, 0.0);
  model.bias.assign(classes, 0.0);
  model.c = options.c;
  model.objective_history.assign(options.epochs, 0.0);

  std::vector<double> y(labels.size());
  std::vector<double> grad_w, trial(dim);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == static_cast<int>(k) ? 1.0 : -1.0;
    auto w = model.weights.row(k);
    double& b = model.bias[k];
    double lr = options.lr;
    double grad_b = 0.0;
    double current = ovr_objective(features, y, w, b, options.c, &grad_w, &grad_b);
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      double step = std::min(2.0 * lr, options.lr);
      for (int attempt = 0; attempt < 60; ++attempt, step *= 0.5) {
        for (std::size_t j = 0; j < dim; ++j) trial[j] = w[j] - step * grad_w[j];
        const double trial_b = b - step * grad_b;
        const double value = ovr_objective(features, y, trial, trial_b, options.c, nullptr, nullptr);
        if (value <= current) {
          std::copy(trial.begin(), trial.end(), w.begin());
          b = trial_b;
          lr = step;
          break;
        }
      }
      current = ovr_objective(features, y, w, b, options.c, &grad_w, &grad_b);
      model.objective_history[epoch] += current;
    }
  }
  return model;
}

std::vector<int> l2svm_predict(const LinearSvmModel& model, const Tensor& features) {
  require(features.cols() == model.weights.cols(), "l2svm_predict: model expects {} features, got {}", model.weights.cols(), features.cols());
  std::vector<int> out(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto row = features.row(i);
    int best = 0;
    double best_score = 0.0;
    for (std::size_t k = 0; k < model.num_classes(); ++k) {
      auto w = model.weights.row(k);
      double s = model.bias[k];
      for (std::size_t j = 0; j < row.size(); ++j) s += w[j] * row[j];
      if (k == 0 || s > best_score) {
        best = static_cast<int>(k);
        best_score = s;
      }
    }
    out[i] = best;
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  require(predicted.size() == labels.size() && !labels.empty(), "accuracy: size mismatch or empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Standardizer Standardizer::fit(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += features.at(i, j);
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = features.at(i, j) - s.mean[j];
      s.scale[j] += c * c;
    }
  for (double& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(n));
    if (!(v > 1e-12)) v = 1.0;  // constant column
  }
  return s;
}

Tensor Standardizer::apply(const Tensor& features) const {
  require(features.cols() == mean.size(), "Standardizer: column count differs from the fitted data");
  Tensor out = features;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mean[j]) / scale[j];
  }
  return out;
}

Tensor dpool_feature_matrix(const DiscriminatorModel& d, const Tensor& x) {
  require(x.cols() == d.spec.input_dim(), "discriminator expects {} features, got {}", d.spec.input_dim(), x.cols());
  Tensor out({x.rows(), d.spec.num_hidden()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto f = dpool_features(d, x.row(i));
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

Tensor afv_matrix(std::span<const AdversarialFisherVector> afvs) {
  require(!afvs.empty(), "afv_matrix: no vectors");
  Tensor out({afvs.size(), afvs.front().values.size()});
  for (std::size_t i = 0; i < afvs.size(); ++i) {
    require(afvs[i].values.size() == out.cols(), "afv_matrix: vectors differ in length");
    std::copy(afvs[i].values.begin(), afvs[i].values.end(), out.row(i).begin());
  }
  return out;
}

ClassDistanceMatrix class_distance_matrix(const std::vector<std::vector<AdversarialFisherVector>>& sets,
                                          std::vector<int> labels) {
  require(sets.size() == labels.size(), "class_distance_matrix: one label per set required");
  for (std::size_t i = 0; i < sets.size(); ++i)
    require(!sets[i].empty(), "class_distance_matrix: class {} has no examples", labels[i]);
  ClassDistanceMatrix m;
  m.labels = std::move(labels);
  const std::size_t n = sets.size();
  m.entries.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = set_fisher_distance(sets[i], sets[j]);
      m.entries[i * n + j] = d;
      m.entries[j * n + i] = d;
    }
  return m;
}

ClassDistanceMatrix class_distance_matrix(std::span<const AdversarialFisherVector> afvs, std::span<const int> labels) {
  require(afvs.size() == labels.size(), "class_distance_matrix: one label per vector required");
  std::map<int, std::vector<AdversarialFisherVector>> grouped;
  for (std::size_t i = 0; i < afvs.size(); ++i) grouped[labels[i]].push_back(afvs[i]);
  std::vector<std::vector<AdversarialFisherVector>> sets;
  std::vector<int> keys;
  for (auto& [label, set] : grouped) {
    keys.push_back(label);
    sets.push_back(std::move(set));
  }
  return class_distance_matrix(sets, std::move(keys));
}

std::vector<Neighbor> knn_query(std::span<const double> query, std::span<const AdversarialFisherVector> database,
                                std::size_t k) {
  require(k >= 1 && k <= database.size(), "knn_query: k = {} must lie in [1, {}]", k, database.size());
  std::vector<Neighbor> all(database.size());
  for (std::size_t i = 0; i < database.size(); ++i) all[i] = {i, fisher_distance(query, database[i].values)};
  auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), closer);
  all.resize(k);
  return all;
}

}  // namespace ebmgan
