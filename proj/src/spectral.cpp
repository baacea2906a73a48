#include "duq/spectral.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "duq/rng.hpp"

namespace duq::spectral {

namespace {

// Two classical Gram-Schmidt passes against the first n columns of Q.
void orthogonalize(const Eigen::MatrixXd& Q, Eigen::Index n,
                   Eigen::VectorXd& w) {
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::VectorXd coeffs = Q.leftCols(n).transpose() * w;
    w.noalias() -= Q.leftCols(n) * coeffs;
  }
}

}  // namespace

LanczosResult lanczos_topk(const LinearOperator& op, const LanczosConfig& cfg) {
  const Eigen::Index p = op.dim;
  if (cfg.k < 1 || cfg.k >= p)
    throw std::invalid_argument("lanczos: need 1 <= k < dim");
  if (cfg.tol <= 0.0) throw std::invalid_argument("lanczos: tol must be > 0");

  const Eigen::Index s_max =
      std::min<Eigen::Index>(p, cfg.max_iters > 0
                                    ? cfg.max_iters
                                    : static_cast<Eigen::Index>(10) * cfg.k);
  if (s_max < cfg.k)
    throw std::invalid_argument("lanczos: iteration budget below k");

  Rng rng(cfg.seed);
  Eigen::MatrixXd Q(p, s_max + 1);
  Eigen::VectorXd alpha(s_max), beta(s_max);
  Eigen::VectorXd w(p), av(p);

  Q.col(0) = rng.normal_vector(p).normalized();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
  Eigen::Index s = 0;
  bool converged = false;
  double scale = 1.0;

  const auto ritz_converged = [&](Eigen::Index steps) {
    tri.computeFromTridiagonal(alpha.head(steps), beta.head(steps - 1),
                               Eigen::ComputeEigenvectors);
    if (tri.info() != Eigen::Success) return false;
    if (steps < cfg.k) return false;
    const double beta_last = beta[steps - 1];
    for (int i = 0; i < cfg.k; ++i) {
      const Eigen::Index col = steps - 1 - i;  // ascending order from Eigen
      const double theta = tri.eigenvalues()[col];
      const double resid = std::abs(beta_last * tri.eigenvectors()(steps - 1, col));
      if (resid > cfg.tol * std::max(1.0, std::abs(theta))) return false;
    }
    return true;
  };

  for (Eigen::Index j = 0; j < s_max; ++j) {
    op.apply(Q.col(j), av);
    w = av;
    alpha[j] = Q.col(j).dot(w);
    w -= alpha[j] * Q.col(j);
    if (j > 0) w -= beta[j - 1] * Q.col(j - 1);
    orthogonalize(Q, j + 1, w);
    const double norm = w.norm();
    scale = std::max({scale, std::abs(alpha[j]), norm});

    s = j + 1;
    if (norm <= 1e-12 * scale) {
      // invariant subspace exhausted; restart orthogonally if room remains
      beta[j] = 0.0;
      if (s >= p) {
        if (s >= cfg.k && ritz_converged(s)) converged = true;
        break;
      }
      Eigen::VectorXd r;
      double rnorm = 0.0;
      do {
        r = rng.normal_vector(p);
        orthogonalize(Q, s, r);
        rnorm = r.norm();
      } while (rnorm < 1e-8);
      Q.col(s) = r / rnorm;
    } else {
      beta[j] = norm;
      Q.col(s) = w / norm;
    }

    if (s >= std::max<Eigen::Index>(cfg.k, 2) &&
        (s % cfg.check_every == 0 || s == s_max)) {
      if (ritz_converged(s)) {
        converged = true;
        break;
      }
    }
  }

  if (s < cfg.k) {
    // only possible when restarts could not refill the space
    LanczosResult partial;
    partial.iterations = static_cast<int>(s);
    throw LanczosError("lanczos: Krylov space collapsed before k pairs", partial);
  }

  tri.computeFromTridiagonal(alpha.head(s), beta.head(s - 1),
                             Eigen::ComputeEigenvectors);

  LanczosResult result;
  result.iterations = static_cast<int>(s);
  result.converged = converged;
  result.eigenvalues.resize(cfg.k);
  result.eigenvectors.resize(p, cfg.k);
  for (int i = 0; i < cfg.k; ++i) {
    const Eigen::Index col = s - 1 - i;
    result.eigenvalues[i] = tri.eigenvalues()[col];
    result.eigenvectors.col(i).noalias() =
        Q.leftCols(s) * tri.eigenvectors().col(col);
    result.eigenvectors.col(i).normalize();
  }

  result.residuals.resize(cfg.k);
  for (int i = 0; i < cfg.k; ++i) {
    op.apply(result.eigenvectors.col(i), av);
    result.residuals[i] =
        (av - result.eigenvalues[i] * result.eigenvectors.col(i)).norm();
  }

  if (!converged)
    throw LanczosError("lanczos: no convergence within iteration budget",
                       std::move(result));
  return result;
}

IncrementalSvd::IncrementalSvd(Eigen::Index cols, Eigen::Index max_rank)
    : cols_(cols), max_rank_(max_rank) {
  if (cols < 1 || max_rank < 1)
    throw std::invalid_argument("incremental svd: bad dimensions");
}

void IncrementalSvd::update(const Eigen::Ref<const RowMatrixXd>& block) {
  if (block.cols() != cols_)
    throw std::invalid_argument("incremental svd: column count mismatch");
  if (block.rows() < 1) return;

  const Eigen::Index r = rank();
  Eigen::MatrixXd stacked(r + block.rows(), cols_);
  if (r > 0) stacked.topRows(r) = s_.asDiagonal() * v_.transpose();
  stacked.bottomRows(block.rows()) = block;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinV);
  rows_seen_ += block.rows();
  const Eigen::Index keep =
      std::min({max_rank_, rows_seen_, svd.singularValues().size()});
  s_ = svd.singularValues().head(keep);
  v_ = svd.matrixV().leftCols(keep);
}

GapLinearization gap_linearization(double lambda, double lambda_k) {
  GapLinearization g{};
  g.degraded = lambda_k < lambda;
  g.lambda_tilde = 2.0 * lambda * lambda_k / (lambda + lambda_k);
  g.eps_lambda = std::abs(1.0 / lambda - 1.0 / lambda_k) / 2.0;
  return g;
}

SpectralBundle make_bundle(BundleKind kind, Eigen::MatrixXd q,
                           Eigen::VectorXd eigenvalues, double lambda,
                           std::int64_t n_examples) {
  if (q.cols() != eigenvalues.size())
    throw std::invalid_argument("bundle: eigenpair count mismatch");
  SpectralBundle b;
  b.kind = kind;
  b.k = static_cast<int>(eigenvalues.size());
  b.q = std::move(q);
  b.eigenvalues = std::move(eigenvalues);
  b.lambda = lambda;
  b.lambda_k = b.eigenvalues[b.k - 1];
  b.n_examples = n_examples;
  const GapLinearization g = gap_linearization(lambda, b.lambda_k);
  b.lambda_tilde = g.lambda_tilde;
  b.eps_lambda = g.eps_lambda;
  if (g.degraded) b.flags |= kBundleBoundDegraded;
  return b;
}

void SpectralBundle::validate() const {
  if (k < 1 || q.cols() != k || eigenvalues.size() != k)
    throw std::runtime_error("bundle invariant: eigenpair count mismatch");
  if (n_examples < 1)
    throw std::runtime_error("bundle invariant: n_examples must be positive");
  for (int i = 1; i < k; ++i)
    if (eigenvalues[i] > eigenvalues[i - 1])
      throw std::runtime_error("bundle invariant: eigenvalues not descending");
  if (kind == BundleKind::opg && eigenvalues[k - 1] < lambda - 1e-12)
    throw std::runtime_error("bundle invariant: opg eigenvalue below l2 rate");
  const double ortho =
      (q.transpose() * q - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();
  if (ortho > 1e-8)
    throw std::runtime_error("bundle invariant: basis not orthonormal");
  const GapLinearization g = gap_linearization(lambda, lambda_k);
  const double scale = std::max(1.0, std::abs(g.lambda_tilde));
  if (std::abs(g.lambda_tilde - lambda_tilde) > 1e-12 * scale ||
      std::abs(g.eps_lambda - eps_lambda) > 1e-12 * std::max(1.0, g.eps_lambda))
    throw std::runtime_error("bundle invariant: gap linearization inconsistent");
  if (std::abs(lambda_k - eigenvalues[k - 1]) != 0.0)
    throw std::runtime_error("bundle invariant: lambda_k mismatch");
}

SpectralBundle hessian_topk(const nn::NetworkConfig& config,
                            const Eigen::VectorXd& w, const Dataset& data,
                            int k, const LanczosConfig& lanczos_cfg) {
  nn::HvpOperator hvp_op(config, w, data);
  LinearOperator op;
  op.dim = hvp_op.dim();
  op.apply = [&hvp_op](const Eigen::VectorXd& v, Eigen::VectorXd& out) {
    hvp_op.apply(v, out);
  };
  LanczosConfig cfg = lanczos_cfg;
  cfg.k = k;
  LanczosResult res = lanczos_topk(op, cfg);

  SpectralBundle b =
      make_bundle(BundleKind::hessian, std::move(res.eigenvectors),
                  std::move(res.eigenvalues), config.l2_rate, data.size());
  b.iterations = res.iterations;
  return b;
}

SpectralBundle opg_topk(const nn::NetworkConfig& config,
                        const Eigen::VectorXd& w, const Dataset& data, int k,
                        Eigen::Index block_size, std::uint64_t pad_seed) {
  if (config.l2_rate <= 0.0)
    throw std::invalid_argument("opg: requires a positive l2 rate");
  const Eigen::Index p = nn::param_count(config);
  if (k < 1 || k > p) throw std::invalid_argument("opg: need 1 <= k <= dim");
  if (block_size < 1) throw std::invalid_argument("opg: block_size >= 1");

  const Eigen::Index n = data.size();
  IncrementalSvd isvd(p, std::min<Eigen::Index>(2 * k, n));
  for (Eigen::Index begin = 0; begin < n; begin += block_size) {
    const Eigen::Index end = std::min(n, begin + block_size);
    isvd.update(nn::per_example_grads(config, w, data, begin, end));
  }

  const Eigen::Index avail = std::min<Eigen::Index>(isvd.rank(), k);
  Eigen::MatrixXd q(p, k);
  Eigen::VectorXd evals(k);
  q.leftCols(avail) = isvd.right_vectors().leftCols(avail);
  for (Eigen::Index i = 0; i < avail; ++i) {
    const double s = isvd.singular_values()[i];
    evals[i] = s * s / static_cast<double>(n) + config.l2_rate;
  }

  bool padded = false;
  if (avail < k) {
    padded = true;
    Rng rng(pad_seed);
    for (Eigen::Index i = avail; i < k; ++i) {
      Eigen::VectorXd r;
      double rnorm = 0.0;
      do {
        r = rng.normal_vector(p);
        for (int pass = 0; pass < 2; ++pass) {
          const Eigen::VectorXd coeffs = q.leftCols(i).transpose() * r;
          r.noalias() -= q.leftCols(i) * coeffs;
        }
        rnorm = r.norm();
      } while (rnorm < 1e-8);
      q.col(i) = r / rnorm;
      evals[i] = config.l2_rate;
    }
  }

  SpectralBundle b = make_bundle(BundleKind::opg, std::move(q),
                                 std::move(evals), config.l2_rate, n);
  b.block_size = static_cast<int>(block_size);
  if (padded) b.flags |= kBundlePadded;
  return b;
}

SpectrumSummary spectrum_report(const SpectralBundle& bundle) {
  SpectrumSummary s;
  s.kind = bundle.kind;
  s.dim = bundle.dim();
  s.k = bundle.k;
  s.n_examples = bundle.n_examples;
  s.lambda = bundle.lambda;
  s.lambda_k = bundle.lambda_k;
  s.lambda_tilde = bundle.lambda_tilde;
  s.eps_lambda = bundle.eps_lambda;
  s.gap_width = bundle.lambda_k - bundle.lambda;
  s.below_lambda_count = static_cast<int>(
      (bundle.eigenvalues.array() < bundle.lambda).count());
  s.below_zero_count =
      static_cast<int>((bundle.eigenvalues.array() < 0.0).count());
  s.iterations = bundle.iterations;
  s.flags = bundle.flags;
  s.eigenvalues = bundle.eigenvalues;
  return s;
}

}  // namespace duq::spectral
