#include "duq/checks.hpp"

#include <cmath>
#include <sstream>

#include "duq/delta.hpp"
#include "duq/io.hpp"
#include "duq/oracle.hpp"
#include "duq/rng.hpp"
#include "duq/spectral.hpp"

namespace duq::checks {

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

double max_rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want,
                   double floor) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) /
                                std::max(floor, std::abs(want[i])));
  return worst;
}

spectral::SpectralBundle bundle_from_dense(spectral::BundleKind kind,
                                           const Eigen::MatrixXd& m, int k,
                                           double lambda, std::int64_t n) {
  const oracle::EigenDecomposition d = oracle::dense_eig(m);
  return spectral::make_bundle(kind, d.vectors.leftCols(k),
                               d.values.head(k), lambda, n);
}

}  // namespace

Fixture make_tiny_fixture(std::uint64_t seed) {
  Fixture fx;
  fx.network.layer_sizes = {6, 10, 6, 3};  // P = 157
  fx.network.l2_rate = 0.01;
  const Rng base(seed);
  fx.train = io::make_blobs(3, 6, 240, 2.0, 1.0, base.fork(1).seed(),
                            base.fork(2).seed());
  fx.test = io::make_blobs(3, 6, 60, 2.0, 1.0, base.fork(1).seed(),
                           base.fork(3).seed());

  trainer::TrainConfig cfg;
  cfg.batch_size = 48;
  cfg.max_steps = 4000;
  cfg.schedule = {{0, 2e-2}, {2000, 2e-3}, {3000, 2e-4}};
  cfg.seed = base.fork(4).seed();
  fx.omega_hat = trainer::train(fx.network, fx.train, cfg).omega_hat;
  return fx;
}

std::vector<CheckResult> run_oracle_suite(std::uint64_t seed) {
  std::vector<CheckResult> results;
  const auto add = [&](std::string name, bool pass, std::string detail) {
    results.push_back({std::move(name), pass, std::move(detail)});
  };

  const Fixture fx = make_tiny_fixture(seed);
  const auto& net = fx.network;
  const auto& w = fx.omega_hat;
  const Eigen::Index p = nn::param_count(net);
  const double lambda = net.l2_rate;
  const Eigen::Index n = fx.train.size();

  // Finite differences need every ReLU argument clear of its kink across
  // the stencil, so those comparisons run at the nearest safe point.
  Eigen::VectorXd w_fd = w;
  {
    Rng rng(seed ^ 0xfd);
    const Eigen::VectorXd dir = rng.normal_vector(p).normalized();
    for (double t = 0.0; oracle::relu_margin(net, w_fd, fx.train.inputs) < 1e-3;
         t += 1e-3)
      w_fd = w + t * dir;
  }

  {  // analytic gradient vs central differences
    const Eigen::VectorXd g = nn::grad(net, w_fd, fx.train);
    const Eigen::VectorXd fd = oracle::fd_grad(net, w_fd, fx.train);
    const double err = max_rel_err(g, fd, 1e-3);
    add("gradient matches finite differences", err <= 1e-5, "rel err " + fmt(err));
  }

  const Eigen::MatrixXd dense_h = oracle::dense_hessian(net, w, fx.train);
  {  // dense Hessian from products vs finite differences of the gradient
    const Eigen::MatrixXd hvp_h = oracle::dense_hessian(net, w_fd, fx.train);
    const Eigen::MatrixXd fd = oracle::fd_hessian(net, w_fd, fx.train);
    const double err = (hvp_h - fd).cwiseAbs().maxCoeff();
    add("hvp matches finite-difference hessian", err <= 1e-5, "abs err " + fmt(err));
  }

  {  // sensitivity rows vs finite differences of the forward map
    const Eigen::VectorXd x0 = fx.test.inputs.row(0).transpose();
    const RowMatrixXd f = nn::sensitivity(net, w, x0);
    const RowMatrixXd fd = oracle::fd_sensitivity(net, w, x0);
    const double err = (f - fd).cwiseAbs().maxCoeff();
    add("sensitivity matches finite differences", err <= 1e-6, "abs err " + fmt(err));
  }

  const oracle::EigenDecomposition eh = oracle::dense_eig(dense_h);
  {  // Lanczos pairs vs the dense decomposition
    spectral::LanczosConfig lcfg;
    lcfg.k = 20;
    lcfg.seed = seed;
    const spectral::SpectralBundle b =
        spectral::hessian_topk(net, w, fx.train, 20, lcfg);
    const double err =
        max_rel_err(b.eigenvalues, eh.values.head(20), 1e-12);
    add("lanczos matches dense eigensolver", err <= 1e-6, "rel err " + fmt(err));
  }

  const Eigen::MatrixXd dense_g = oracle::dense_opg(net, w, fx.train);
  const oracle::EigenDecomposition eg = oracle::dense_eig(dense_g);
  spectral::SpectralBundle gb20 = spectral::opg_topk(net, w, fx.train, 20, 64);
  {
    const double err = max_rel_err(gb20.eigenvalues, eg.values.head(20), 1e-12);
    const bool shifted = gb20.eigenvalues.minCoeff() >= lambda - 1e-12;
    add("incremental svd matches dense eigensolver", err <= 1e-6 && shifted,
        "rel err " + fmt(err));
  }

  {  // streaming result independent of the block split
    const spectral::SpectralBundle a = spectral::opg_topk(net, w, fx.train, 20, 7);
    const double dv = (a.eigenvalues - gb20.eigenvalues).cwiseAbs().maxCoeff();
    add("opg block-size invariance", dv <= 1e-8, "max dv " + fmt(dv));
  }

  const oracle::DenseCurvature curv{dense_h, dense_g, lambda, n};
  {  // complete bundles reproduce the exact variances
    const auto hb = bundle_from_dense(spectral::BundleKind::hessian, dense_h,
                                      static_cast<int>(p), lambda, n);
    const auto gb = bundle_from_dense(spectral::BundleKind::opg, dense_g,
                                      static_cast<int>(p), lambda, n);
    const auto cross = delta::make_sandwich_cross(hb, gb);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 10; ++i) {
      const RowMatrixXd f =
          nn::sensitivity(net, w, fx.test.inputs.row(i).transpose());
      worst = std::max(
          worst,
          (delta::predict_uncertainty(hb, f).variance -
           oracle::exact_delta_variance(oracle::VarianceKind::hessian, curv, f))
              .cwiseAbs()
              .maxCoeff());
      worst = std::max(
          worst,
          (delta::predict_uncertainty(gb, f).variance -
           oracle::exact_delta_variance(oracle::VarianceKind::opg, curv, f))
              .cwiseAbs()
              .maxCoeff());
      worst = std::max(
          worst, (delta::predict_uncertainty_sandwich(hb, gb, cross, f).variance -
                  oracle::exact_delta_variance(oracle::VarianceKind::sandwich,
                                               curv, f))
                     .cwiseAbs()
                     .maxCoeff());
    }
    add("complete bundles reproduce exact variances", worst <= 1e-8,
        "abs err " + fmt(worst));
  }

  {  // worst-case interval encloses the exact variance (opg estimator)
    bool ok = true;
    const auto gb = bundle_from_dense(spectral::BundleKind::opg, dense_g, 10,
                                      lambda, n);
    for (Eigen::Index i = 0; i < fx.test.size() && ok; ++i) {
      const RowMatrixXd f =
          nn::sensitivity(net, w, fx.test.inputs.row(i).transpose());
      const auto rep = delta::predict_uncertainty(gb, f);
      const Eigen::VectorXd exact =
          oracle::exact_delta_variance(oracle::VarianceKind::opg, curv, f);
      for (Eigen::Index m = 0; m < exact.size(); ++m) {
        const double slack = 1e-12 * std::max(1.0, std::abs(exact[m]));
        if (exact[m] < rep.variance[m] - rep.variance_error[m] - slack ||
            exact[m] > rep.variance[m] + rep.variance_error[m] + slack)
          ok = false;
      }
    }
    add("worst-case bound encloses exact variance", ok, "opg k=10");
  }

  {  // factored sandwich equals the dense product of the approximations
    const auto hb = bundle_from_dense(spectral::BundleKind::hessian, dense_h,
                                      12, lambda, n);
    const auto gb = bundle_from_dense(spectral::BundleKind::opg, dense_g, 12,
                                      lambda, n);
    const auto cross = delta::make_sandwich_cross(hb, gb);
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(p, p);
    const Eigen::MatrixXd ph = hb.q * hb.q.transpose();
    const Eigen::MatrixXd hinv =
        hb.q * hb.eigenvalues.cwiseInverse().asDiagonal() * hb.q.transpose() +
        (1.0 / hb.lambda_tilde) * (id - ph);
    const Eigen::MatrixXd gap =
        gb.q * gb.eigenvalues.asDiagonal() * gb.q.transpose() +
        gb.lambda_tilde * (id - gb.q * gb.q.transpose());
    const Eigen::MatrixXd sigma =
        hinv * gap * hinv / static_cast<double>(n);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 5; ++i) {
      const RowMatrixXd f =
          nn::sensitivity(net, w, fx.test.inputs.row(i).transpose());
      const Eigen::VectorXd dense_var =
          (f * sigma * f.transpose()).diagonal();
      const auto rep = delta::predict_uncertainty_sandwich(hb, gb, cross, f);
      worst = std::max(worst,
                       (rep.variance - dense_var).cwiseAbs().maxCoeff());
    }
    add("factored sandwich equals dense expansion", worst <= 1e-10,
        "abs err " + fmt(worst));
  }

  {  // expected-curvature agreement improves with sample size
    nn::NetworkConfig small;
    small.layer_sizes = {4, 6, 4};
    small.l2_rate = lambda;
    const Eigen::VectorXd ws = nn::init_params(small, seed + 17);
    const double g100 = oracle::fisher_equality_gap(small, ws, 100, 5, seed);
    const double g1k = oracle::fisher_equality_gap(small, ws, 1000, 5, seed);
    const double g10k = oracle::fisher_equality_gap(small, ws, 10000, 5, seed);
    add("curvature gap shrinks with sample size", g100 > g1k && g1k > g10k,
        fmt(g100) + " > " + fmt(g1k) + " > " + fmt(g10k));
  }

  return results;
}

}  // namespace duq::checks
