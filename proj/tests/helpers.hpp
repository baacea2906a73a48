#pragma once

#include <cmath>
#include <vector>

#include "duq/io.hpp"
#include "duq/nn.hpp"
#include "duq/rng.hpp"

namespace duq::testing {

// Straight-line re-implementation of the forward map with scalar loops and
// plain exp/sum softmax. Kept deliberately free of Eigen products so it
// shares nothing with the main path.
inline std::vector<double> forward_reference(const nn::NetworkConfig& config,
                                             const Eigen::VectorXd& w,
                                             const std::vector<double>& x) {
  const int L = config.depth();
  std::vector<double> act = x;
  std::int64_t off = 0;
  for (int l = 1; l < L; ++l) {
    const int rows = config.layer_sizes[l];
    const int cols = config.layer_sizes[l - 1];
    std::vector<double> z(rows, 0.0);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) z[i] += w[off + i * cols + j] * act[j];
    off += static_cast<std::int64_t>(rows) * cols;
    for (int i = 0; i < rows; ++i) z[i] += w[off + i];
    off += rows;
    if (l < L - 1) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    } else {
      double total = 0.0;
      for (double v : z) total += std::exp(v);
      for (double& v : z) v = std::exp(v) / total;
    }
    act = std::move(z);
  }
  return act;
}

// Direct per-example summation of the cost, independent accumulation order.
inline double cost_reference(const nn::NetworkConfig& config,
                             const Eigen::VectorXd& w, const Dataset& data) {
  double total = 0.0;
  for (Eigen::Index n = data.size() - 1; n >= 0; --n) {
    std::vector<double> x(data.inputs.cols());
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j)
      x[j] = data.inputs(n, j);
    const auto probs = forward_reference(config, w, x);
    for (Eigen::Index m = 0; m < data.targets.cols(); ++m)
      if (data.targets(n, m) == 1.0) total -= std::log(probs[m]);
  }
  double reg = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) reg += w[i] * w[i];
  return total / static_cast<double>(data.size()) +
         0.5 * config.l2_rate * reg;
}

inline Dataset random_dataset(const nn::NetworkConfig& config, Eigen::Index n,
                              std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  data.inputs.resize(n, config.input_dim());
  data.targets = Eigen::MatrixXd::Zero(n, config.output_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < config.input_dim(); ++j)
      data.inputs(i, j) = rng.normal();
    data.targets(i, rng.uniform_index(config.output_dim())) = 1.0;
  }
  return data;
}

inline double max_rel_err(const Eigen::VectorXd& got,
                          const Eigen::VectorXd& want, double floor = 1e-12) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) /
                                std::max(floor, std::abs(want[i])));
  return worst;
}

}  // namespace duq::testing

#include "duq/oracle.hpp"

namespace duq::testing {

// First seed from `start` whose parameter draw keeps every hidden
// preactivation clear of the ReLU kink, so finite-difference stencils stay
// on one side of it.
inline std::uint64_t kink_safe_seed(const nn::NetworkConfig& net,
                                    const Eigen::MatrixXd& inputs,
                                    std::uint64_t start,
                                    double margin = 1e-3) {
  for (std::uint64_t s = start;; ++s) {
    const Eigen::VectorXd w = nn::init_params(net, s);
    if (oracle::relu_margin(net, w, inputs) > margin) return s;
  }
}

}  // namespace duq::testing
