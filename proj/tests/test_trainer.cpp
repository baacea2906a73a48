#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "duq/io.hpp"
#include "duq/trainer.hpp"
#include "helpers.hpp"

using namespace duq;

namespace {

nn::NetworkConfig convex_net() {
  nn::NetworkConfig net;
  net.layer_sizes = {2, 2};  // single softmax layer: convex objective
  net.l2_rate = 0.01;
  return net;
}

trainer::TrainConfig convex_cfg() {
  trainer::TrainConfig cfg;
  cfg.batch_size = 40;
  cfg.max_steps = 6000;
  cfg.schedule = {{0, 5e-2}, {3000, 5e-3}, {5000, 5e-4}};
  cfg.seed = 3;
  cfg.log_every = 100;
  return cfg;
}

}  // namespace

TEST_CASE("convex case converges to a stationary point") {
  const auto net = convex_net();
  const Dataset data = io::make_blobs(2, 2, 40, 4.0, 0.5, 61, 62);
  const auto report = trainer::train(net, data, convex_cfg());
  CHECK(report.final_grad_norm <= 1e-4);
  CHECK(report.steps_run == 6000);

  SUBCASE("cost is monotone over 100-step windows") {
    for (std::size_t i = 1; i < report.log.size(); ++i)
      CHECK(report.log[i].cost <= report.log[i - 1].cost + 1e-12);
  }
  SUBCASE("the l2 term bounds the solution norm by the initial cost") {
    const Eigen::VectorXd zero =
        Eigen::VectorXd::Zero(nn::param_count(net));
    const double c0 = nn::cost(net, zero, data);
    CHECK(report.omega_hat.squaredNorm() <= 2.0 * c0 / net.l2_rate);
  }
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
  const auto net = convex_net();
  const Dataset data = io::make_blobs(2, 2, 30, 3.0, 0.8, 63, 64);
  auto cfg = convex_cfg();
  cfg.max_steps = 500;
  const auto a = trainer::train(net, data, cfg);
  const auto b = trainer::train(net, data, cfg);
  CHECK((a.omega_hat - b.omega_hat).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.final_cost == b.final_cost);
}

TEST_CASE("non-finite cost aborts with the step index") {
  nn::NetworkConfig net;
  net.layer_sizes = {2, 4, 2};
  net.l2_rate = 0.01;
  Dataset data = io::make_blobs(2, 2, 20, 2.0, 1.0, 65, 66);
  data.inputs(7, 0) = std::numeric_limits<double>::infinity();
  trainer::TrainConfig cfg;
  cfg.batch_size = 20;
  cfg.max_steps = 50;
  cfg.schedule = {{0, 1e-3}};
  try {
    trainer::train(net, data, cfg);
    FAIL("expected TrainDivergence");
  } catch (const trainer::TrainDivergence& e) {
    CHECK(e.step == 0);
  }
}

TEST_CASE("schedule validation rejects malformed inputs") {
  trainer::TrainConfig cfg;
  cfg.schedule = {{5, 1e-3}};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.schedule = {{0, 1e-3}, {0, 1e-4}};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.schedule = {{0, 1e-3}, {10, 1e-4}};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("accuracy: exact predictions, uniform predictor, single miss") {
  nn::NetworkConfig net;
  net.layer_sizes = {2, 2};
  net.l2_rate = 0.0;

  SUBCASE("uniform predictor on balanced data sits near one half") {
    const Eigen::VectorXd w = Eigen::VectorXd::Zero(nn::param_count(net));
    const Dataset data = testing::random_dataset(net, 1000, 77);
    const double acc = trainer::accuracy(net, w, data);
    // argmax ties resolve to class 0, so this counts the class-0 fraction
    CHECK(acc > 0.4);
    CHECK(acc < 0.6);
  }

  SUBCASE("a perfectly separating parameter vector scores 1.0") {
    Eigen::VectorXd w(6);
    w << 10.0, 0.0, 0.0, 10.0, 0.0, 0.0;  // identity-ish logits
    Dataset data;
    data.inputs.resize(2, 2);
    data.inputs << 1.0, -1.0, -1.0, 1.0;
    data.targets.resize(2, 2);
    data.targets << 1.0, 0.0, 0.0, 1.0;
    CHECK(trainer::accuracy(net, w, data) == 1.0);
    data.targets << 0.0, 1.0, 1.0, 0.0;  // flip both labels
    CHECK(trainer::accuracy(net, w, data) == 0.0);
  }
}

TEST_CASE("trained classifier beats chance on held-out blobs") {
  nn::NetworkConfig net;
  net.layer_sizes = {4, 8, 3};
  net.l2_rate = 0.01;
  const Dataset train = io::make_blobs(3, 4, 120, 3.0, 1.0, 71, 72);
  const Dataset test = io::make_blobs(3, 4, 60, 3.0, 1.0, 71, 73);
  trainer::TrainConfig cfg;
  cfg.batch_size = 40;
  cfg.max_steps = 2000;
  cfg.schedule = {{0, 1e-2}, {1500, 1e-3}};
  cfg.seed = 5;
  const auto report = trainer::train(net, train, cfg, &test);
  CHECK(report.train_accuracy > 0.9);
  REQUIRE(report.test_accuracy.has_value());
  CHECK(*report.test_accuracy > 0.8);
}
