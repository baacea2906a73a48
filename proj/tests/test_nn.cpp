#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "duq/nn.hpp"
#include "duq/oracle.hpp"
#include "duq/rng.hpp"
#include "helpers.hpp"

using namespace duq;

namespace {

nn::NetworkConfig make_net(std::vector<int> sizes, double lambda = 0.01) {
  nn::NetworkConfig c;
  c.layer_sizes = std::move(sizes);
  c.l2_rate = lambda;
  return c;
}

}  // namespace

TEST_CASE("param_count matches the layer arithmetic") {
  CHECK(nn::param_count(make_net({2, 3, 2})) == 17);
  CHECK(nn::param_count(make_net({576, 64})) == 36928);
  CHECK(nn::param_count(make_net({64, 10})) == 650);
  CHECK_THROWS_AS(nn::param_count(make_net({5})), std::invalid_argument);
}

TEST_CASE("flatten layout round-trips through the maps") {
  for (auto sizes : {std::vector<int>{2, 3, 2}, {4, 1, 6, 3}, {7, 5}}) {
    const auto net = make_net(sizes);
    const nn::ParamLayout layout(net);
    Rng rng(99);
    Eigen::VectorXd w = rng.normal_vector(layout.total());
    Eigen::VectorXd rebuilt = Eigen::VectorXd::Zero(layout.total());
    for (int l = 0; l < layout.layers(); ++l) {
      const Eigen::MatrixXd wl = layout.weight(w, l);
      const Eigen::VectorXd bl = layout.bias(w, l);
      layout.weight(rebuilt, l) = wl;
      layout.bias(rebuilt, l) = bl;
    }
    CHECK((w - rebuilt).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("forward: zero weights give the uniform distribution") {
  const auto net = make_net({2, 2});
  const Eigen::VectorXd w = Eigen::VectorXd::Zero(nn::param_count(net));
  const Eigen::VectorXd y = nn::forward(net, w, Eigen::Vector2d(0.3, -1.2));
  CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-14));

  const auto net1 = make_net({1, 2});
  Eigen::VectorXd w1(4);
  w1 << 1.0, -1.0, 0.0, 0.0;  // weights [1; -1], zero bias, x = 0
  const Eigen::VectorXd y1 =
      nn::forward(net1, w1, Eigen::VectorXd::Zero(1));
  CHECK(y1[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(y1[1] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("forward agrees with the straight-line evaluator") {
  const auto net = make_net({4, 6, 5, 3});
  const Eigen::VectorXd w = nn::init_params(net, 3);
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd x = rng.normal_vector(4);
    const Eigen::VectorXd y = nn::forward(net, w, x);
    const auto ref = testing::forward_reference(
        net, w, std::vector<double>(x.data(), x.data() + x.size()));
    CHECK(std::abs(y.sum() - 1.0) <= 1e-12);
    for (int m = 0; m < 3; ++m)
      CHECK(y[m] == doctest::Approx(ref[m]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(nn::forward(net, w, Eigen::VectorXd::Zero(5)),
                  std::invalid_argument);
}

TEST_CASE("cost: zero-parameter uniform prediction and the l2 term") {
  const auto net = make_net({2, 2}, 0.0);
  const Eigen::VectorXd w = Eigen::VectorXd::Zero(nn::param_count(net));
  const Dataset data = testing::random_dataset(net, 8, 5);
  CHECK(nn::cost(net, w, data) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  auto reg = net;
  reg.l2_rate = 0.01;
  Eigen::VectorXd w2 = Eigen::VectorXd::Zero(nn::param_count(net));
  w2[0] = 2.0;  // |w|^2 = 4
  const double with_reg = nn::cost(reg, w2, data);
  auto plain = reg;
  plain.l2_rate = 0.0;
  CHECK(with_reg - nn::cost(plain, w2, data) ==
        doctest::Approx(0.02).epsilon(1e-14));
}

TEST_CASE("cost agrees with the direct summation reference") {
  const auto net = make_net({3, 5, 4});
  const Eigen::VectorXd w = nn::init_params(net, 11);
  const Dataset data = testing::random_dataset(net, 17, 12);
  CHECK(nn::cost(net, w, data) ==
        doctest::Approx(testing::cost_reference(net, w, data)).epsilon(1e-12));
}

TEST_CASE("grad matches central finite differences at random points") {
  const auto net = make_net({3, 6, 4, 3});
  const Dataset data = testing::random_dataset(net, 20, 21);
  for (int t = 0; t < 20; ++t) {
    const auto seed = testing::kink_safe_seed(net, data.inputs, 100 + 50 * t);
    const Eigen::VectorXd w = nn::init_params(net, seed);
    const Eigen::VectorXd g = nn::grad(net, w, data);
    const Eigen::VectorXd fd = oracle::fd_grad(net, w, data);
    CHECK(testing::max_rel_err(g, fd, 1e-3) <= 1e-5);
  }
}

TEST_CASE("grad is stationary at the optimum of a convex model") {
  // single-layer softmax on separable blobs is convex with a unique minimum
  const auto net = make_net({2, 2}, 0.05);
  const Dataset data =
      io::make_blobs(2, 2, 40, 4.0, 0.5, 31, 32);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(nn::param_count(net));
  for (int it = 0; it < 4000; ++it) w -= 0.5 * nn::grad(net, w, data);
  CHECK(nn::grad(net, w, data).norm() <= 1e-8);
}

TEST_CASE("doubling the l2 rate shifts the gradient by lambda*w") {
  const auto net = make_net({3, 4, 2}, 0.01);
  auto doubled = net;
  doubled.l2_rate = 0.02;
  const Eigen::VectorXd w = nn::init_params(net, 8);
  const Dataset data = testing::random_dataset(net, 10, 9);
  const Eigen::VectorXd diff =
      nn::grad(doubled, w, data) - nn::grad(net, w, data);
  CHECK((diff - 0.01 * w).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("per-example gradients: single row equals grad minus lambda*w") {
  const auto net = make_net({3, 5, 2});
  const Eigen::VectorXd w = nn::init_params(net, 14);
  Dataset one = testing::random_dataset(net, 1, 15);
  const RowMatrixXd rows = nn::per_example_grads(net, w, one, 0, 1);
  const Eigen::VectorXd expect =
      nn::grad(net, w, one) - net.l2_rate * w;
  CHECK((rows.row(0).transpose() - expect).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(nn::per_example_grads(net, w, one, 0, 0),
                  std::invalid_argument);
}

TEST_CASE("per-example gradients match independent single-example calls") {
  const auto net = make_net({3, 4, 3});
  const Eigen::VectorXd w = nn::init_params(net, 16);
  const Dataset data = testing::random_dataset(net, 3, 17);
  const RowMatrixXd rows = nn::per_example_grads(net, w, data, 0, 3);
  for (Eigen::Index i = 0; i < 3; ++i) {
    Dataset single;
    single.inputs = data.inputs.row(i);
    single.targets = data.targets.row(i);
    const RowMatrixXd ri = nn::per_example_grads(net, w, single, 0, 1);
    CHECK((rows.row(i) - ri.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("per-example gradient mean plus lambda*w equals grad") {
  const auto net = make_net({4, 7, 5, 3});
  const Eigen::VectorXd w = nn::init_params(net, 19);
  const Dataset data = testing::random_dataset(net, 33, 20);
  const RowMatrixXd rows = nn::per_example_grads(net, w, data, 0, data.size());
  const Eigen::VectorXd mean =
      rows.colwise().mean().transpose() + net.l2_rate * w;
  CHECK((mean - nn::grad(net, w, data)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("hvp: zero vector, homogeneity, symmetry and linearity") {
  const auto net = make_net({3, 5, 4, 2});
  const Eigen::VectorXd w = nn::init_params(net, 23);
  const Dataset data = testing::random_dataset(net, 12, 24);
  const Eigen::Index p = nn::param_count(net);

  CHECK(nn::hvp(net, w, data, Eigen::VectorXd::Zero(p)).norm() == 0.0);

  Rng rng(25);
  const Eigen::VectorXd v = rng.normal_vector(p);
  const Eigen::VectorXd u = rng.normal_vector(p);
  const Eigen::VectorXd hv = nn::hvp(net, w, data, v);
  const Eigen::VectorXd hu = nn::hvp(net, w, data, u);

  CHECK((nn::hvp(net, w, data, 3.0 * v) - 3.0 * hv).cwiseAbs().maxCoeff() <=
        1e-12 * hv.cwiseAbs().maxCoeff());
  CHECK(std::abs(u.dot(hv) - v.dot(hu)) <=
        1e-10 * std::max(1.0, std::abs(u.dot(hv))));
  CHECK((nn::hvp(net, w, data, u + v) - hu - hv).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK_THROWS_AS(nn::hvp(net, w, data, Eigen::VectorXd::Zero(p + 1)),
                  std::invalid_argument);
}

TEST_CASE("hvp columns assemble the finite-difference hessian") {
  const auto net = make_net({3, 5, 3});  // P = 38
  const Dataset data = testing::random_dataset(net, 10, 30);
  const Eigen::VectorXd w =
      nn::init_params(net, testing::kink_safe_seed(net, data.inputs, 29));
  const Eigen::MatrixXd h = oracle::dense_hessian(net, w, data);
  const Eigen::MatrixXd fd = oracle::fd_hessian(net, w, data);
  CHECK((h - fd).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("hvp matches the directional difference of gradients") {
  const auto net = make_net({4, 6, 3});
  const Dataset data = testing::random_dataset(net, 15, 34);
  const Eigen::VectorXd w =
      nn::init_params(net, testing::kink_safe_seed(net, data.inputs, 33));
  Rng rng(35);
  const double h = 1e-5;
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd v = rng.normal_vector(w.size()).normalized();
    const Eigen::VectorXd fd =
        (nn::grad(net, w + h * v, data) - nn::grad(net, w - h * v, data)) /
        (2.0 * h);
    const Eigen::VectorXd hv = nn::hvp(net, w, data, v);
    CHECK((hv - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
  }
}

TEST_CASE("sensitivity: zero-weight softmax Jacobian structure") {
  const auto net = make_net({2, 2});
  const Eigen::VectorXd w = Eigen::VectorXd::Zero(nn::param_count(net));
  const RowMatrixXd f = nn::sensitivity(net, w, Eigen::Vector2d(1.0, 2.0));
  // uniform probabilities: dy_i/db_j = 0.25*(2*delta_ij - 1), antisymmetric
  const Eigen::Index bias0 = 4;
  CHECK(f(0, bias0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(f(0, bias0 + 1) == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(f.colwise().sum().cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("sensitivity matches finite differences of the forward map") {
  const auto net = make_net({3, 6, 4, 3});
  Rng rng(42);
  const Eigen::VectorXd x0 = rng.normal_vector(3);
  const Eigen::VectorXd w = nn::init_params(
      net, testing::kink_safe_seed(net, x0.transpose(), 41));
  const RowMatrixXd f = nn::sensitivity(net, w, x0);
  const RowMatrixXd fd = oracle::fd_sensitivity(net, w, x0);
  CHECK((f - fd).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(f.colwise().sum().cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("two-class sensitivity rows are exact negatives") {
  const auto net = make_net({3, 4, 2});
  const Eigen::VectorXd w = nn::init_params(net, 45);
  Rng rng(46);
  const RowMatrixXd f = nn::sensitivity(net, w, rng.normal_vector(3));
  CHECK((f.row(0) + f.row(1)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("OPG assembly from per-example rows matches the dense oracle") {
  const auto net = make_net({3, 5, 3});
  const Eigen::VectorXd w = nn::init_params(net, 51);
  const Dataset data = testing::random_dataset(net, 25, 52);
  const Eigen::Index p = nn::param_count(net);

  const RowMatrixXd rows = nn::per_example_grads(net, w, data, 0, data.size());
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    g += rows.row(i).transpose() * rows.row(i);
  g /= static_cast<double>(data.size());
  g += net.l2_rate * Eigen::MatrixXd::Identity(p, p);
  CHECK((g - oracle::dense_opg(net, w, data)).cwiseAbs().maxCoeff() <= 1e-10);
}
