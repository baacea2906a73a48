#pragma once

#include <cstdint>

#include "duq/nn.hpp"

namespace duq::oracle {

/// Dense reference curvature pair at a fixed parameter vector. Small
/// problems only; everything here is brute force on purpose.
struct DenseCurvature {
  Eigen::MatrixXd hessian;  // P x P, includes lambda*I
  Eigen::MatrixXd opg;      // P x P, includes lambda*I
  double lambda = 0.0;
  std::int64_t n_examples = 0;
};

constexpr Eigen::Index kDenseGuard = 2000;

/// Full Hessian assembled from products with coordinate vectors, then
/// symmetrized; the residual asymmetry is checked against 1e-9.
Eigen::MatrixXd dense_hessian(const nn::NetworkConfig& config,
                              const Eigen::VectorXd& w, const Dataset& data);

/// (1/N) sum_n g_n g_n^T + lambda*I by direct accumulation over
/// per-example gradient rows.
Eigen::MatrixXd dense_opg(const nn::NetworkConfig& config,
                          const Eigen::VectorXd& w, const Dataset& data);

DenseCurvature dense_curvature(const nn::NetworkConfig& config,
                               const Eigen::VectorXd& w, const Dataset& data);

struct EigenDecomposition {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // orthonormal columns, matching order
};

/// Cyclic Jacobi rotations. Deliberately separate from the iterative path
/// so the two can check each other. Throws on non-symmetric input.
EigenDecomposition dense_eig(const Eigen::MatrixXd& a);

enum class VarianceKind { hessian, opg, sandwich };

/// Exact per-class Delta variance diag(F Sigma F^T) with Sigma taken as
/// (1/N)H^{-1}, (1/N)G^{-1} or (1/N)H^{-1}GH^{-1} from the dense matrices.
/// Throws naming the smallest eigenvalue if the matrix to invert is
/// numerically singular.
Eigen::VectorXd exact_delta_variance(VarianceKind kind,
                                     const DenseCurvature& curv,
                                     const RowMatrixXd& f);

/// Copy of H whose eigenvalues at positions k+1..P are projected onto
/// [lambda, lambda_k]; the reference counterpart of treating the unseen
/// spectrum as noise around the l2 rate.
Eigen::MatrixXd tail_clamped_hessian(const Eigen::MatrixXd& hessian, int k,
                                     double lambda);

/// Relative Frobenius gap |H_data - G_data|_F / |H_data|_F on data whose
/// labels are sampled from the model's own predictive distribution at w,
/// averaged over seed replicates. Shrinks as n grows.
double fisher_equality_gap(const nn::NetworkConfig& config,
                           const Eigen::VectorXd& w, Eigen::Index n,
                           int replicates, std::uint64_t seed);

// Central finite differences, the independent route for the analytic
// derivatives. Step h defaults to 1e-5.

Eigen::VectorXd fd_grad(const nn::NetworkConfig& config,
                        const Eigen::VectorXd& w, const Dataset& data,
                        double h = 1e-5);

Eigen::MatrixXd fd_hessian(const nn::NetworkConfig& config,
                           const Eigen::VectorXd& w, const Dataset& data,
                           double h = 1e-5);

RowMatrixXd fd_sensitivity(const nn::NetworkConfig& config,
                           const Eigen::VectorXd& w, const Eigen::VectorXd& x0,
                           double h = 1e-5);

/// Smallest |preactivation| over all hidden units and examples. Finite
/// differences are a valid derivative oracle only while no ReLU argument
/// changes sign inside the stencil, so callers require a margin well above
/// the step before comparing.
double relu_margin(const nn::NetworkConfig& config, const Eigen::VectorXd& w,
                   const Eigen::MatrixXd& inputs);

}  // namespace duq::oracle
