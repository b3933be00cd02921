#pragma once

// Small differentiable classifiers with per-sample loss output. Two
// architectures: softmax regression (hidden == 0) and a one-hidden-layer
// tanh network. All operations are stateless over immutable inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedbal/rng.hpp"

namespace fedbal {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelLayout {
  int input_dim = 0;
  int hidden_dim = 0;  // 0 = softmax regression
  int num_classes = 0;

  std::size_t param_count() const {
    const std::size_t d = static_cast<std::size_t>(input_dim);
    const std::size_t h = static_cast<std::size_t>(hidden_dim);
    const std::size_t c = static_cast<std::size_t>(num_classes);
    if (hidden_dim == 0) return d * c + c;
    return d * h + h + h * c + c;
  }

  bool operator==(const ModelLayout&) const = default;
};

struct WeightVector {
  ModelLayout layout;
  std::vector<double> values;
};

// Dataset view the model operates on: row-major features, one label per row.
struct DatasetHandle {
  std::vector<double> features;  // n_samples x input_dim
  std::vector<int> labels;
  int input_dim = 0;
  int owner = -1;

  std::size_t size() const { return labels.size(); }
  const double* row(std::size_t i) const { return features.data() + i * static_cast<std::size_t>(input_dim); }
};

struct TrainOutcome {
  WeightVector updated_weights;
  // Loss observed at each trained sample's last forward pass within training
  // (pre-update value of the final epoch, never a post-training re-evaluation).
  std::map<std::size_t, double> per_sample_losses;
  int epochs_completed = 0;
};

inline WeightVector init_model(const ModelLayout& layout, RandomStream& rng) {
  WeightVector w;
  w.layout = layout;
  w.values.resize(layout.param_count());
  const std::size_t d = static_cast<std::size_t>(layout.input_dim);
  const std::size_t h = static_cast<std::size_t>(layout.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(layout.num_classes);
  // Uniform +-1/sqrt(fan_in) per layer; biases start at zero.
  if (layout.hidden_dim == 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d * c; ++i) w.values[i] = rng.uniform(-bound, bound);
  } else {
    const double b1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(h));
    std::size_t k = 0;
    for (std::size_t i = 0; i < d * h; ++i) w.values[k++] = rng.uniform(-b1, b1);
    k += h;  // hidden biases
    for (std::size_t i = 0; i < h * c; ++i) w.values[k++] = rng.uniform(-b2, b2);
  }
  return w;
}

namespace detail {

// Parameter block offsets. Softmax regression: W[c][d], b[c].
// Hidden net: W1[h][d], b1[h], W2[c][h], b2[c].
struct Blocks {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
};

inline Blocks blocks(const ModelLayout& l) {
  Blocks b;
  const std::size_t d = static_cast<std::size_t>(l.input_dim);
  const std::size_t h = static_cast<std::size_t>(l.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(l.num_classes);
  if (l.hidden_dim == 0) {
    b.w1 = 0;
    b.b1 = d * c;
  } else {
    b.w1 = 0;
    b.b1 = d * h;
    b.w2 = b.b1 + h;
    b.b2 = b.w2 + h * c;
  }
  return b;
}

struct ForwardScratch {
  std::vector<double> hidden;  // tanh activations
  std::vector<double> probs;   // softmax probabilities
};

// Computes softmax probabilities and the cross-entropy loss for one sample.
inline double forward_one(const WeightVector& w, const double* x, int label, ForwardScratch& s) {
  const ModelLayout& l = w.layout;
  const std::size_t d = static_cast<std::size_t>(l.input_dim);
  const std::size_t h = static_cast<std::size_t>(l.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(l.num_classes);
  const Blocks b = blocks(l);
  const double* v = w.values.data();
  s.probs.assign(c, 0.0);
  if (l.hidden_dim == 0) {
    for (std::size_t j = 0; j < c; ++j) {
      double z = v[b.b1 + j];
      const double* row = v + b.w1 + j * d;
      for (std::size_t i = 0; i < d; ++i) z += row[i] * x[i];
      s.probs[j] = z;
    }
  } else {
    s.hidden.assign(h, 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      double z = v[b.b1 + j];
      const double* row = v + b.w1 + j * d;
      for (std::size_t i = 0; i < d; ++i) z += row[i] * x[i];
      s.hidden[j] = std::tanh(z);
    }
    for (std::size_t j = 0; j < c; ++j) {
      double z = v[b.b2 + j];
      const double* row = v + b.w2 + j * h;
      for (std::size_t i = 0; i < h; ++i) z += row[i] * s.hidden[i];
      s.probs[j] = z;
    }
  }
  // Stable log-sum-exp softmax.
  const double m = *std::max_element(s.probs.begin(), s.probs.end());
  double sum = 0.0;
  for (double& z : s.probs) {
    z = std::exp(z - m);
    sum += z;
  }
  const double loss = std::log(sum) - std::log(s.probs[static_cast<std::size_t>(label)]);
  for (double& z : s.probs) z /= sum;
  return loss;
}

// Accumulates d(loss)/d(params) for one sample into grad (same length as weights).
inline void backward_one(const WeightVector& w, const double* x, int label, const ForwardScratch& s,
                         std::vector<double>& grad) {
  const ModelLayout& l = w.layout;
  const std::size_t d = static_cast<std::size_t>(l.input_dim);
  const std::size_t h = static_cast<std::size_t>(l.hidden_dim);
  const std::size_t c = static_cast<std::size_t>(l.num_classes);
  const Blocks b = blocks(l);
  const double* v = w.values.data();
  // dz[j] = p_j - [j == label]
  if (l.hidden_dim == 0) {
    for (std::size_t j = 0; j < c; ++j) {
      const double dz = s.probs[j] - (static_cast<int>(j) == label ? 1.0 : 0.0);
      double* grow = grad.data() + b.w1 + j * d;
      for (std::size_t i = 0; i < d; ++i) grow[i] += dz * x[i];
      grad[b.b1 + j] += dz;
    }
  } else {
    std::vector<double> dhidden(h, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
      const double dz = s.probs[j] - (static_cast<int>(j) == label ? 1.0 : 0.0);
      const double* row = v + b.w2 + j * h;
      double* grow = grad.data() + b.w2 + j * h;
      for (std::size_t i = 0; i < h; ++i) {
        grow[i] += dz * s.hidden[i];
        dhidden[i] += dz * row[i];
      }
      grad[b.b2 + j] += dz;
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double da = dhidden[j] * (1.0 - s.hidden[j] * s.hidden[j]);
      double* grow = grad.data() + b.w1 + j * d;
      for (std::size_t i = 0; i < d; ++i) grow[i] += da * x[i];
      grad[b.b1 + j] += da;
    }
  }
}

}  // namespace detail

// Pure whole- or partial-dataset inference; no weight mutation.
inline std::map<std::size_t, double> forward_losses(const WeightVector& weights,
                                                    const DatasetHandle& dataset,
                                                    const std::vector<std::size_t>& indices) {
  std::map<std::size_t, double> out;
  detail::ForwardScratch scratch;
  for (const std::size_t i : indices) {
    const double loss = detail::forward_one(weights, dataset.row(i), dataset.labels[i], scratch);
    if (!std::isfinite(loss))
      throw ModelError("non-finite loss at sample index " + std::to_string(i));
    out[i] = loss;
  }
  return out;
}

inline std::vector<std::size_t> all_indices(const DatasetHandle& dataset) {
  std::vector<std::size_t> idx(dataset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

// Mini-batch SGD for `epochs` passes over selected_indices, shuffled per
// epoch. Per-sample objective: cross-entropy + (mu/2)*||w - w_global||^2.
inline TrainOutcome train_local(const WeightVector& weights_global, const DatasetHandle& dataset,
                                const std::vector<std::size_t>& selected_indices, int epochs,
                                int batch_size, double lr, double mu, RandomStream& rng) {
  if (selected_indices.empty()) throw ModelError("train_local: empty selection");
  if (epochs < 1) throw ModelError("train_local: epochs must be >= 1");
  TrainOutcome out;
  out.updated_weights = weights_global;
  WeightVector& w = out.updated_weights;
  std::vector<double> grad(w.values.size());
  detail::ForwardScratch scratch;
  std::vector<std::size_t> order = selected_indices;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const double loss = detail::forward_one(w, dataset.row(i), dataset.labels[i], scratch);
        out.per_sample_losses[i] = loss;
        detail::backward_one(w, dataset.row(i), dataset.labels[i], scratch, grad);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      if (mu != 0.0) {
        for (std::size_t k = 0; k < w.values.size(); ++k)
          w.values[k] -= lr * (grad[k] * inv + mu * (w.values[k] - weights_global.values[k]));
      } else {
        for (std::size_t k = 0; k < w.values.size(); ++k) w.values[k] -= lr * grad[k] * inv;
      }
    }
    for (const double v : w.values)
      if (!std::isfinite(v))
        throw ModelError("training diverged at epoch " + std::to_string(epoch + 1));
    out.epochs_completed = epoch + 1;
  }
  return out;
}

// Central finite differences (h = 1e-5) against the analytic gradient over
// all parameters on a single sample; returns the max relative error.
inline double gradient_check(const WeightVector& weights, const DatasetHandle& dataset,
                             std::size_t index) {
  detail::ForwardScratch scratch;
  std::vector<double> grad(weights.values.size(), 0.0);
  detail::forward_one(weights, dataset.row(index), dataset.labels[index], scratch);
  detail::backward_one(weights, dataset.row(index), dataset.labels[index], scratch, grad);
  const double h = 1e-5;
  WeightVector probe = weights;
  double max_rel = 0.0;
  for (std::size_t k = 0; k < probe.values.size(); ++k) {
    const double orig = probe.values[k];
    probe.values[k] = orig + h;
    const double lp = detail::forward_one(probe, dataset.row(index), dataset.labels[index], scratch);
    probe.values[k] = orig - h;
    const double lm = detail::forward_one(probe, dataset.row(index), dataset.labels[index], scratch);
    probe.values[k] = orig;
    const double numeric = (lp - lm) / (2.0 * h);
    const double denom = std::max(1e-6, std::abs(numeric) + std::abs(grad[k]));
    max_rel = std::max(max_rel, std::abs(numeric - grad[k]) / denom);
  }
  return max_rel;
}

inline int predict(const WeightVector& weights, const DatasetHandle& dataset, std::size_t index) {
  detail::ForwardScratch scratch;
  detail::forward_one(weights, dataset.row(index), dataset.labels[index], scratch);
  int best = 0;
  for (std::size_t j = 1; j < scratch.probs.size(); ++j)
    if (scratch.probs[j] > scratch.probs[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

inline double test_accuracy(const WeightVector& weights, const DatasetHandle& test) {
  if (test.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (predict(weights, test, i) == test.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace fedbal
