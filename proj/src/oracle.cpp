#include "duq/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "duq/rng.hpp"

namespace duq::oracle {

namespace {

void check_guard(Eigen::Index p) {
  if (p > kDenseGuard)
    throw std::invalid_argument("dense oracle: problem size exceeds guard (" +
                                std::to_string(p) + " > " +
                                std::to_string(kDenseGuard) + ")");
}

}  // namespace

Eigen::MatrixXd dense_hessian(const nn::NetworkConfig& config,
                              const Eigen::VectorXd& w, const Dataset& data) {
  const Eigen::Index p = nn::param_count(config);
  check_guard(p);
  nn::HvpOperator op(config, w, data);

  Eigen::MatrixXd h(p, p);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd col(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    e[j] = 1.0;
    op.apply(e, col);
    h.col(j) = col;
    e[j] = 0.0;
  }

  const double asym = (h - h.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
  if (asym > 1e-9 * scale)
    throw std::runtime_error("dense hessian: asymmetry above tolerance");
  return 0.5 * (h + h.transpose());
}

Eigen::MatrixXd dense_opg(const nn::NetworkConfig& config,
                          const Eigen::VectorXd& w, const Dataset& data) {
  const Eigen::Index p = nn::param_count(config);
  check_guard(p);
  const Eigen::Index n = data.size();

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
  const Eigen::Index block = 256;
  for (Eigen::Index begin = 0; begin < n; begin += block) {
    const Eigen::Index end = std::min(n, begin + block);
    const RowMatrixXd rows = nn::per_example_grads(config, w, data, begin, end);
    g.noalias() += rows.transpose() * rows;
  }
  g /= static_cast<double>(n);
  g += config.l2_rate * Eigen::MatrixXd::Identity(p, p);
  return g;
}

DenseCurvature dense_curvature(const nn::NetworkConfig& config,
                               const Eigen::VectorXd& w, const Dataset& data) {
  DenseCurvature c;
  c.hessian = dense_hessian(config, w, data);
  c.opg = dense_opg(config, w, data);
  c.lambda = config.l2_rate;
  c.n_examples = data.size();
  return c;
}

EigenDecomposition dense_eig(const Eigen::MatrixXd& a_in) {
  const Eigen::Index p = a_in.rows();
  if (a_in.cols() != p) throw std::invalid_argument("dense_eig: not square");
  const double scale = std::max(1.0, a_in.cwiseAbs().maxCoeff());
  if ((a_in - a_in.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw std::invalid_argument("dense_eig: matrix not symmetric");

  Eigen::MatrixXd a = 0.5 * (a_in + a_in.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(p, p);
  const double norm = std::max(a.norm(), 1e-300);

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (Eigen::Index q = 1; q < p; ++q)
      for (Eigen::Index r = 0; r < q; ++r) off += a(r, q) * a(r, q);
    if (std::sqrt(2.0 * off) <= 1e-14 * norm) break;

    for (Eigen::Index q = 1; q < p; ++q) {
      for (Eigen::Index r = 0; r < q; ++r) {
        const double apq = a(r, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double tau = (a(q, q) - a(r, r)) / (2.0 * apq);
        double t;
        if (tau >= 0.0)
          t = 1.0 / (tau + std::sqrt(1.0 + tau * tau));
        else
          t = -1.0 / (-tau + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        const double arr = a(r, r), aqq = a(q, q);
        a(r, r) = arr - t * apq;
        a(q, q) = aqq + t * apq;
        a(r, q) = 0.0;
        a(q, r) = 0.0;
        for (Eigen::Index i = 0; i < p; ++i) {
          if (i == r || i == q) continue;
          const double air = a(i, r), aiq = a(i, q);
          a(i, r) = c * air - s * aiq;
          a(r, i) = a(i, r);
          a(i, q) = s * air + c * aiq;
          a(q, i) = a(i, q);
        }
        for (Eigen::Index i = 0; i < p; ++i) {
          const double vir = v(i, r), viq = v(i, q);
          v(i, r) = c * vir - s * viq;
          v(i, q) = s * vir + c * viq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

  EigenDecomposition d;
  d.values.resize(p);
  d.vectors.resize(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    d.values[i] = a(order[i], order[i]);
    d.vectors.col(i) = v.col(order[i]);
  }
  return d;
}

namespace {

Eigen::MatrixXd inverse_from_eig(const Eigen::MatrixXd& a, const char* name) {
  const EigenDecomposition d = dense_eig(a);
  const double smallest = d.values[d.values.size() - 1];
  const double largest = std::abs(d.values[0]);
  if (std::abs(smallest) <= 1e-14 * std::max(1.0, largest))
    throw std::runtime_error(std::string(name) +
                             ": numerically singular, smallest eigenvalue " +
                             std::to_string(smallest));
  return d.vectors * d.values.cwiseInverse().asDiagonal() *
         d.vectors.transpose();
}

}  // namespace

Eigen::VectorXd exact_delta_variance(VarianceKind kind,
                                     const DenseCurvature& curv,
                                     const RowMatrixXd& f) {
  if (f.cols() != curv.hessian.rows())
    throw std::invalid_argument("exact_delta_variance: dimension mismatch");
  const double invn = 1.0 / static_cast<double>(curv.n_examples);

  Eigen::MatrixXd sigma;
  switch (kind) {
    case VarianceKind::hessian:
      sigma = inverse_from_eig(curv.hessian, "hessian");
      break;
    case VarianceKind::opg:
      sigma = inverse_from_eig(curv.opg, "opg");
      break;
    case VarianceKind::sandwich: {
      const Eigen::MatrixXd hinv = inverse_from_eig(curv.hessian, "hessian");
      sigma = hinv * curv.opg * hinv;
      break;
    }
  }
  return invn * (f * sigma * f.transpose()).diagonal();
}

Eigen::MatrixXd tail_clamped_hessian(const Eigen::MatrixXd& hessian, int k,
                                     double lambda) {
  const EigenDecomposition d = dense_eig(hessian);
  if (k < 1 || k > d.values.size())
    throw std::invalid_argument("tail clamp: bad k");
  const double lambda_k = d.values[k - 1];
  Eigen::VectorXd clamped = d.values;
  for (Eigen::Index i = k; i < clamped.size(); ++i)
    clamped[i] = std::clamp(clamped[i], std::min(lambda, lambda_k),
                            std::max(lambda, lambda_k));
  return d.vectors * clamped.asDiagonal() * d.vectors.transpose();
}

double fisher_equality_gap(const nn::NetworkConfig& config,
                           const Eigen::VectorXd& w, Eigen::Index n,
                           int replicates, std::uint64_t seed) {
  const Eigen::Index p = nn::param_count(config);
  check_guard(p);
  if (replicates < 1) throw std::invalid_argument("fisher gap: replicates >= 1");

  nn::NetworkConfig data_only = config;
  data_only.l2_rate = 0.0;
  const int t1 = config.input_dim();
  const int tl = config.output_dim();

  double total = 0.0;
  for (int rep = 0; rep < replicates; ++rep) {
    Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(rep));
    Dataset data;
    data.inputs.resize(n, t1);
    data.targets = Eigen::MatrixXd::Zero(n, tl);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < t1; ++j) data.inputs(i, j) = rng.normal();

    const Eigen::MatrixXd probs = nn::forward_batch(config, w, data.inputs);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = rng.uniform();
      double acc = 0.0;
      int label = tl - 1;
      for (int m = 0; m < tl; ++m) {
        acc += probs(i, m);
        if (u < acc) {
          label = m;
          break;
        }
      }
      data.targets(i, label) = 1.0;
    }

    const Eigen::MatrixXd h = dense_hessian(data_only, w, data);
    const Eigen::MatrixXd g = dense_opg(data_only, w, data);
    total += (h - g).norm() / h.norm();
  }
  return total / replicates;
}

Eigen::VectorXd fd_grad(const nn::NetworkConfig& config,
                        const Eigen::VectorXd& w, const Dataset& data,
                        double h) {
  Eigen::VectorXd g(w.size());
  Eigen::VectorXd wp = w;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    wp[j] = w[j] + h;
    const double up = nn::cost(config, wp, data);
    wp[j] = w[j] - h;
    const double dn = nn::cost(config, wp, data);
    wp[j] = w[j];
    g[j] = (up - dn) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd fd_hessian(const nn::NetworkConfig& config,
                           const Eigen::VectorXd& w, const Dataset& data,
                           double h) {
  const Eigen::Index p = w.size();
  check_guard(p);
  Eigen::MatrixXd hess(p, p);
  Eigen::VectorXd wp = w;
  for (Eigen::Index j = 0; j < p; ++j) {
    wp[j] = w[j] + h;
    const Eigen::VectorXd up = nn::grad(config, wp, data);
    wp[j] = w[j] - h;
    const Eigen::VectorXd dn = nn::grad(config, wp, data);
    wp[j] = w[j];
    hess.col(j) = (up - dn) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

RowMatrixXd fd_sensitivity(const nn::NetworkConfig& config,
                           const Eigen::VectorXd& w, const Eigen::VectorXd& x0,
                           double h) {
  RowMatrixXd f(config.output_dim(), w.size());
  Eigen::VectorXd wp = w;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    wp[j] = w[j] + h;
    const Eigen::VectorXd up = nn::forward(config, wp, x0);
    wp[j] = w[j] - h;
    const Eigen::VectorXd dn = nn::forward(config, wp, x0);
    wp[j] = w[j];
    f.col(j) = (up - dn) / (2.0 * h);
  }
  return f;
}

double relu_margin(const nn::NetworkConfig& config, const Eigen::VectorXd& w,
                   const Eigen::MatrixXd& inputs) {
  const nn::ParamLayout layout(config);
  const int nl = layout.layers();
  double margin = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd x = inputs;
  for (int l = 0; l + 1 < nl; ++l) {
    Eigen::MatrixXd z = x * layout.weight(w, l).transpose();
    z.rowwise() += layout.bias(w, l).transpose();
    margin = std::min(margin, z.cwiseAbs().minCoeff());
    x = z.cwiseMax(0.0);
  }
  return margin;
}

}  // namespace duq::oracle
