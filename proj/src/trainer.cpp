#include "duq/trainer.hpp"

#include <cmath>
#include <numeric>

#include "duq/rng.hpp"

namespace duq::trainer {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size >= 1");
  if (max_steps < 1) throw std::invalid_argument("train: max_steps >= 1");
  if (schedule.empty() || schedule.front().first != 0)
    throw std::invalid_argument("train: schedule must start at step 0");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i].first <= schedule[i - 1].first)
      throw std::invalid_argument("train: schedule steps must be increasing");
  for (const auto& [step, lr] : schedule)
    if (lr <= 0.0) throw std::invalid_argument("train: learning rates > 0");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("train: betas must lie in (0, 1)");
}

namespace {

double rate_at(const std::vector<std::pair<int, double>>& schedule, int step) {
  double lr = schedule.front().second;
  for (const auto& [s, r] : schedule) {
    if (s > step) break;
    lr = r;
  }
  return lr;
}

int argmax_row(const Eigen::MatrixXd& M, Eigen::Index r) {
  int best = 0;
  for (int j = 1; j < M.cols(); ++j)
    if (M(r, j) > M(r, best)) best = j;  // ties keep the lowest index
  return best;
}

}  // namespace

double accuracy(const nn::NetworkConfig& network, const Eigen::VectorXd& w,
                const Dataset& data) {
  const Eigen::MatrixXd probs = nn::forward_batch(network, w, data.inputs);
  Eigen::Index hits = 0;
  for (Eigen::Index n = 0; n < data.size(); ++n)
    if (argmax_row(probs, n) == argmax_row(data.targets, n)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainReport train(const nn::NetworkConfig& network, const Dataset& data,
                  const TrainConfig& cfg, const Dataset* test_data) {
  network.validate();
  cfg.validate();
  data.validate();

  const nn::ParamLayout layout(network);
  const Eigen::Index n = data.size();
  const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n);
  const double lambda = network.l2_rate;

  Eigen::VectorXd w = nn::init_params(network, cfg.seed);
  Eigen::VectorXd m = Eigen::VectorXd::Zero(layout.total());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(layout.total());
  Eigen::VectorXd g(layout.total());

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = Rng(cfg.seed).fork(0x5481);

  Eigen::MatrixXd bx(b, data.inputs.cols());
  Eigen::MatrixXd by(b, data.targets.cols());

  TrainReport report;
  const auto log_full = [&](int step, double lr) {
    const double c = nn::cost(network, w, data);
    const double gn = nn::grad(network, w, data).norm();
    report.log.push_back({step, lr, c, gn});
  };

  Eigen::Index cursor = 0;
  for (int step = 0; step < cfg.max_steps; ++step) {
    if (cfg.shuffle && cursor == 0) {
      for (Eigen::Index i = n - 1; i > 0; --i) {
        const Eigen::Index j = shuffle_rng.uniform_index(i + 1);
        std::swap(order[i], order[j]);
      }
    }
    for (Eigen::Index i = 0; i < b; ++i) {
      const Eigen::Index r = order[(cursor + i) % n];
      bx.row(i) = data.inputs.row(r);
      by.row(i) = data.targets.row(r);
    }
    cursor = (cursor + b) % n;

    const double data_cost =
        nn::data_cost_and_grad(network, layout, w, bx, by, g);
    if (!std::isfinite(data_cost)) throw TrainDivergence(step);
    g += lambda * w;

    const double lr = rate_at(cfg.schedule, step);
    const double t = static_cast<double>(step + 1);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const double mc = 1.0 - std::pow(cfg.beta1, t);
    const double vc = 1.0 - std::pow(cfg.beta2, t);
    w.array() -= lr * (m.array() / mc) /
                 ((v.array() / vc).sqrt() + cfg.epsilon_hat);

    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      log_full(step + 1, lr);
    report.steps_run = step + 1;
  }

  report.omega_hat = std::move(w);
  report.final_cost = nn::cost(network, report.omega_hat, data);
  report.final_grad_norm = nn::grad(network, report.omega_hat, data).norm();
  report.train_accuracy = accuracy(network, report.omega_hat, data);
  if (test_data) report.test_accuracy = accuracy(network, report.omega_hat, *test_data);
  return report;
}

}  // namespace duq::trainer
