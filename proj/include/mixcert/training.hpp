#pragma once

// Mini-batch gradient descent on softmax cross-entropy, optionally on
// PGD-perturbed batches (adversarial training).

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixcert/attacks.hpp"
#include "mixcert/classifier.hpp"
#include "mixcert/data.hpp"
#include "mixcert/model.hpp"

namespace mixcert {

struct ArchitectureSpec {
  std::vector<std::size_t> hidden;  // hidden layer widths; empty = linear model
  Activation activation = Activation::tanh;
  std::uint64_t init_seed = 0;

  FeedForwardModel initialize(std::size_t input_dim, std::size_t class_count) const {
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(class_count);
    return FeedForwardModel::random(dims, activation, init_seed);
  }
};

struct TrainConfig {
  std::size_t epochs = 1;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<AttackSpec> adversarial;

  void validate() const {
    if (epochs < 1) throw InputError("epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
    if (batch_size < 1) throw InputError("batch size must be at least 1");
    if (adversarial) adversarial->validate();
  }
};

struct TrainingLog {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;  // mean clean training loss after each epoch
};

inline double mean_cross_entropy(const FeedForwardModel& model, const Dataset& data) {
  CompensatedSum total;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total.add(cross_entropy(forward_logits(model, data.input(i)), data.labels[i]));
  }
  return data.empty() ? 0.0 : total.value() / static_cast<double>(data.size());
}

inline double accuracy(const Classifier& model, const Dataset& data) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    correct += argmax(model.probs(data.input(i))) == data.labels[i];
  }
  return data.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Trains from `start`. Batches are reshuffled every epoch with seed + epoch.
inline FeedForwardModel train(FeedForwardModel model, const Dataset& data, const TrainConfig& config,
                              TrainingLog* log = nullptr) {
  config.validate();
  if (data.empty()) throw InputError("cannot train on an empty dataset");
  if (data.split != Split::train) throw InputError("training requires the train split");
  if (data.dim() != model.input_dim() || data.class_count != model.class_count()) {
    throw InputError("dataset shape does not match the model");
  }
  if (log) log->initial_loss = mean_cross_entropy(model, data);

  const std::size_t n = data.size();
  const std::size_t d = data.dim();
  std::vector<std::size_t> order(n);
  Vector point(d);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    CounterRng rng(config.seed + epoch);
    rng.shuffle(std::span<std::size_t>(order));

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      ParameterGradient grad(model);
      std::optional<ModelClassifier> current;
      if (config.adversarial) current.emplace(model);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const std::size_t y = data.labels[i];
        if (config.adversarial) {
          AttackSpec spec = *config.adversarial;
          if (!spec.clip && data.box) spec.clip = data.box;
          spec.seed = derive_seed(config.seed + epoch, i);
          point = pgd_attack(*current, data.input(i), y, spec).x_adv;
        } else {
          const auto x = data.input(i);
          point.assign(x.begin(), x.end());
        }
        const ForwardTrace trace = trace_forward(model, point);
        Vector cot = softmax(trace.logits);
        cot[y] -= 1.0;
        backprop_parameters(model, trace, cot, scale, grad);
      }
      auto& layers = model.mutable_layers();
      for (std::size_t k = 0; k < layers.size(); ++k) {
        axpy(-config.learning_rate, grad.weights[k].data(), layers[k].weights.data());
        axpy(-config.learning_rate, grad.biases[k], layers[k].bias);
      }
    }

    const double loss = mean_cross_entropy(model, data);
    if (!std::isfinite(loss)) {
      throw TrainingError("training diverged: loss is " + std::to_string(loss) + " after epoch " +
                          std::to_string(epoch + 1));
    }
    if (log) log->epoch_losses.push_back(loss);
  }
  return model;
}

/// Initializes from `arch` and trains.
inline FeedForwardModel train(const ArchitectureSpec& arch, const Dataset& data,
                              const TrainConfig& config, TrainingLog* log = nullptr) {
  return train(arch.initialize(data.dim(), data.class_count), data, config, log);
}

}  // namespace mixcert
