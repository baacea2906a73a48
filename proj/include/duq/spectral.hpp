#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include "duq/nn.hpp"

namespace duq::spectral {

/// Symmetric matrix available only through products v -> Av.
struct LinearOperator {
  Eigen::Index dim = 0;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> apply;

  Eigen::VectorXd operator()(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out;
    apply(v, out);
    return out;
  }
};

struct LanczosConfig {
  int k = 10;
  int max_iters = 0;       // 0: min(P, 10k)
  double tol = 1e-8;       // residual tolerance, relative to max(1, |eval|)
  std::uint64_t seed = 0x711e5;
  int check_every = 10;    // Ritz-pair residual test cadence
};

struct LanczosResult {
  Eigen::VectorXd eigenvalues;   // k entries, descending
  Eigen::MatrixXd eigenvectors;  // P x k, orthonormal
  Eigen::VectorXd residuals;     // explicit |A q - eval q| per pair
  int iterations = 0;
  bool converged = false;
};

/// Thrown when the iteration budget runs out; carries what was computed.
struct LanczosError : std::runtime_error {
  LanczosResult partial;
  LanczosError(std::string what, LanczosResult r)
      : std::runtime_error(std::move(what)), partial(std::move(r)) {}
};

/// Top-k algebraically largest eigenpairs of a symmetric operator by the
/// Lanczos iteration with full reorthogonalization. Restarts with a fresh
/// orthogonal vector on breakdown, so invariant subspaces are not a dead
/// end. Residuals are verified against the operator before returning.
LanczosResult lanczos_topk(const LinearOperator& op, const LanczosConfig& cfg);

/// Streaming thin SVD of a tall matrix presented row-block by row-block.
/// Keeps at most max_rank singular pairs; a block update is the exact SVD
/// of the retained factorization stacked over the new rows.
class IncrementalSvd {
 public:
  IncrementalSvd(Eigen::Index cols, Eigen::Index max_rank);

  void update(const Eigen::Ref<const RowMatrixXd>& block);

  Eigen::Index rank() const { return s_.size(); }
  Eigen::Index rows_seen() const { return rows_seen_; }
  const Eigen::VectorXd& singular_values() const { return s_; }
  const Eigen::MatrixXd& right_vectors() const { return v_; }  // cols x rank

 private:
  Eigen::Index cols_;
  Eigen::Index max_rank_;
  Eigen::Index rows_seen_ = 0;
  Eigen::VectorXd s_;
  Eigen::MatrixXd v_;
};

enum class BundleKind { hessian, opg };

constexpr std::uint32_t kBundleBoundDegraded = 1u;  // lambda_k < lambda
constexpr std::uint32_t kBundlePadded = 2u;         // rank < K, complement filled in

/// Top-K eigenpairs of a curvature matrix plus the gap linearization:
/// lambda_tilde is the harmonic mean of (l2 rate, lambda_k) and eps_lambda
/// the half-width of the reciprocal interval they enclose.
struct SpectralBundle {
  BundleKind kind = BundleKind::hessian;
  int k = 0;
  Eigen::MatrixXd q;            // P x K, orthonormal columns
  Eigen::VectorXd eigenvalues;  // K entries, descending
  double lambda = 0.0;          // l2 rate
  double lambda_k = 0.0;        // smallest computed eigenvalue
  double lambda_tilde = 0.0;
  double eps_lambda = 0.0;
  std::int64_t n_examples = 0;
  std::uint32_t flags = 0;
  int iterations = 0;   // Lanczos steps (hessian kind)
  int block_size = 0;   // streaming block (opg kind)

  Eigen::Index dim() const { return q.rows(); }
  bool bound_degraded() const { return flags & kBundleBoundDegraded; }
  bool padded() const { return flags & kBundlePadded; }

  /// Throws std::runtime_error naming the violated invariant.
  void validate() const;
};

struct GapLinearization {
  double lambda_tilde;
  double eps_lambda;
  bool degraded;  // lambda_k < lambda: the enclosure argument no longer holds
};

GapLinearization gap_linearization(double lambda, double lambda_k);

/// Assemble a bundle from eigenpairs computed elsewhere (dense reference
/// decompositions, complete K = P bundles in tests).
SpectralBundle make_bundle(BundleKind kind, Eigen::MatrixXd q,
                           Eigen::VectorXd eigenvalues, double lambda,
                           std::int64_t n_examples);

/// Top-K eigenpairs of H = (1/N) sum_n d2C_n + lambda I via Lanczos over
/// exact Hessian-vector products.
SpectralBundle hessian_topk(const nn::NetworkConfig& config,
                            const Eigen::VectorXd& w, const Dataset& data,
                            int k, const LanczosConfig& lanczos_cfg);

/// Top-K eigenpairs of G = (1/N) sum_n g_n g_n^T + lambda I. Eigenvalues
/// are s^2/N + lambda for singular values s of the stacked per-example
/// gradient rows; eigenvectors are the right singular vectors, streamed
/// through an incremental SVD in blocks of block_size rows. If fewer than
/// K directions exist the bundle is padded with eigenvalue lambda and
/// flagged.
SpectralBundle opg_topk(const nn::NetworkConfig& config,
                        const Eigen::VectorXd& w, const Dataset& data, int k,
                        Eigen::Index block_size,
                        std::uint64_t pad_seed = 0xbadc0de);

struct SpectrumSummary {
  BundleKind kind;
  Eigen::Index dim;
  int k;
  std::int64_t n_examples;
  double lambda;
  double lambda_k;
  double lambda_tilde;
  double eps_lambda;
  double gap_width;        // lambda_k - lambda
  int below_lambda_count;  // computed eigenvalues below the l2 rate
  int below_zero_count;
  int iterations;
  std::uint32_t flags;
  Eigen::VectorXd eigenvalues;
};

SpectrumSummary spectrum_report(const SpectralBundle& bundle);

}  // namespace duq::spectral
