#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "duq/nn.hpp"

namespace duq::trainer {

/// Piecewise-constant learning-rate schedule: (step, rate) pairs with
/// strictly increasing steps, first step 0.
struct TrainConfig {
  int batch_size = 100;
  std::vector<std::pair<int, double>> schedule = {{0, 1e-3}};
  int max_steps = 8000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_hat = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = false;
  int log_every = 0;  // 0 disables periodic full-dataset logging

  void validate() const;
};

struct TrainLogRow {
  int step;
  double learning_rate;
  double cost;       // full-dataset cost
  double grad_norm;  // full-dataset gradient norm
};

struct TrainReport {
  Eigen::VectorXd omega_hat;
  int steps_run = 0;
  double final_cost = 0.0;
  double final_grad_norm = 0.0;  // from the full-dataset gradient
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  std::vector<TrainLogRow> log;
};

/// Aborts (TrainDivergence) if the mini-batch cost stops being finite.
struct TrainDivergence : std::runtime_error {
  int step;
  explicit TrainDivergence(int s)
      : std::runtime_error("training diverged: non-finite cost at step " +
                           std::to_string(s)),
        step(s) {}
};

/// Deterministic mini-batch Adam. Batches are taken in fixed sequential
/// order (wrapping) unless cfg.shuffle reshuffles per epoch from the seed.
TrainReport train(const nn::NetworkConfig& network, const Dataset& data,
                  const TrainConfig& cfg, const Dataset* test_data = nullptr);

/// Fraction of examples whose predicted argmax matches the target argmax.
/// Ties resolve to the lowest class index on both sides.
double accuracy(const nn::NetworkConfig& network, const Eigen::VectorXd& w,
                const Dataset& data);

}  // namespace duq::trainer
